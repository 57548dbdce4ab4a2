use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::kernel::dense::DenseMatrix;
use crate::scalar::Scalar;

/// Glorot-uniform draw in `±√(6 / (rows + cols))`.
pub fn xavier_init<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix<T> {
    assert!(rows >= 1 && cols >= 1, "xavier_init needs a non-empty shape");
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    DenseMatrix::from_fn(rows, cols, |_, _| T::of(dist.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_for_seed() {
        let a: DenseMatrix<f64> = xavier_init(5, 7, &mut ChaCha8Rng::seed_from_u64(9));
        let b: DenseMatrix<f64> = xavier_init(5, 7, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn within_glorot_bound() {
        let m: DenseMatrix<f64> = xavier_init(64, 64, &mut ChaCha8Rng::seed_from_u64(1));
        let bound = (6.0f64 / 128.0).sqrt();
        assert!((bound - 0.2165).abs() < 1e-4);
        assert!(m.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn large_draw_is_centred() {
        let m: DenseMatrix<f64> = xavier_init(1000, 1000, &mut ChaCha8Rng::seed_from_u64(2));
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() <= 0.01, "mean {mean}");
    }
}
