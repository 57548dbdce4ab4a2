//! Dense/sparse primitives, activations, initialisation, Adam and the
//! finite-difference gradient checker.

pub mod activation;
pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod sparse;

pub use activation::{leaky_relu, leaky_relu_grad, leaky_relu_scalar, log_sigmoid, sigmoid, softplus, DEFAULT_LEAKY_SLOPE};
pub use adam::{adam_step, AdamState};
pub use dense::{dot, DenseMatrix};
pub use gradcheck::{grad_check, grad_check_with, Evaluation, GradCheckOptions, GradCheckReport, Objective};
pub use init::xavier_init;
pub use sparse::SparseMatrix;

use crate::error::Result;
use crate::scalar::Scalar;

pub fn spmm<T: Scalar>(s: &SparseMatrix<T>, d: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    s.spmm(d)
}

pub fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.matmul(b)
}

pub fn hadamard<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.hadamard(b)
}
