use crate::error::{check_shape, Result};
use crate::kernel::dense::DenseMatrix;
use crate::scalar::Scalar;

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self::with_hyperparameters(rows, cols, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(rows: usize, cols: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_param(param: &DenseMatrix<T>) -> Self {
        Self::new(param.rows(), param.cols())
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    param: &mut DenseMatrix<T>,
    grad: &DenseMatrix<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    check_shape("adam_step", param.shape(), grad.shape())?;
    check_shape("adam_state", param.shape(), state.m.shape())?;
    state.t += 1;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let one = T::one();
    let bias1 = one - T::of(state.beta1.powi(state.t as i32));
    let bias2 = one - T::of(state.beta2.powi(state.t as i32));
    let eps = T::of(state.eps);
    let lr = T::of(lr);

    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (k, &g) in grad.data().iter().enumerate() {
        m[k] = b1 * m[k] + (one - b1) * g;
        v[k] = b2 * v[k] + (one - b2) * g * g;
        let m_hat = m[k] / bias1;
        let v_hat = v[k] / bias2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = DenseMatrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let orig = p.clone();
        let mut st = AdamState::for_param(&p);
        let g = DenseMatrix::zeros(2, 2);
        for _ in 0..25 {
            adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(st.t, 25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after one step with g = 1, so Δ = −lr / (1 + ε).
        let mut p = DenseMatrix::from_vec(1, 1, vec![0.0f64]).unwrap();
        let mut st = AdamState::for_param(&p);
        let g = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert!((p.get(0, 0) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((p.get(0, 0) + 0.1).abs() < 1e-8);
    }

    #[test]
    fn state_carries_across_calls() {
        let g = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut twice = DenseMatrix::from_vec(1, 1, vec![0.0f64]).unwrap();
        let mut st_twice = AdamState::for_param(&twice);
        adam_step(&mut twice, &g, &mut st_twice, 0.1).unwrap();
        adam_step(&mut twice, &g, &mut st_twice, 0.1).unwrap();

        let mut once = DenseMatrix::from_vec(1, 1, vec![0.0f64]).unwrap();
        let mut st_once = AdamState::for_param(&once);
        adam_step(&mut once, &g, &mut st_once, 0.2).unwrap();

        assert_ne!(st_twice, st_once);
        assert_eq!(st_twice.t, 2);
        assert!((st_twice.m.get(0, 0) - 0.19).abs() < 1e-15);

        // After a sign flip, accumulated momentum keeps the parameter moving the old way.
        let neg = DenseMatrix::from_vec(1, 1, vec![-1.0]).unwrap();
        let before = twice.get(0, 0);
        adam_step(&mut twice, &neg, &mut st_twice, 0.1).unwrap();
        let moved = twice.get(0, 0) - before;
        assert!(moved < 0.0 && moved > -0.1, "moved {moved}");
    }

    #[test]
    fn shape_mismatch() {
        let mut p = DenseMatrix::<f64>::zeros(2, 2);
        let mut st = AdamState::for_param(&p);
        assert!(adam_step(&mut p, &DenseMatrix::zeros(2, 1), &mut st, 0.1).is_err());
    }
}
