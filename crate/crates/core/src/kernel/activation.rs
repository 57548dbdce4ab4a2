use crate::kernel::dense::DenseMatrix;
use crate::scalar::Scalar;

/// Slope used for negative inputs unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub fn leaky_relu_scalar<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

/// Derivative of [`leaky_relu_scalar`]; the kink at zero takes the positive branch.
#[inline]
pub fn leaky_relu_grad<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        slope
    }
}

pub fn leaky_relu<T: Scalar>(x: &DenseMatrix<T>, slope: T) -> DenseMatrix<T> {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Logistic function, branching on sign so neither side overflows.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x) = −softplus(−x)`; finite for every finite input.
#[inline]
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    -softplus(-x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leaky_relu_cases() {
        assert_eq!(leaky_relu_scalar(5.0, 0.2), 5.0);
        assert_eq!(leaky_relu_scalar(-1.0, 0.2), -0.2);
        assert_eq!(leaky_relu_scalar(0.0, 0.2), 0.0);
        let m = DenseMatrix::from_vec(1, 3, vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(leaky_relu(&m, 0.5).data(), &[-1.0, 0.0, 3.0]);
    }

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(50.0f64) - 1.0).abs() <= 1e-15);
        assert!((sigmoid(-50.0f64) - (1.0 - sigmoid(50.0f64))).abs() <= 1e-15);
        assert!(sigmoid(-700.0f64).is_finite() && sigmoid(700.0f64) == 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn log_sigmoid_cases() {
        assert!((log_sigmoid(0.0f64) + std::f64::consts::LN_2).abs() <= 1e-15);
        let far = log_sigmoid(-800.0f64);
        assert!(far.is_finite());
        assert!((far + 800.0).abs() <= 1e-12);
        // ln σ(3) = −ln(1 + e⁻³); e⁻³ is small enough that ln_1p is exact to rounding.
        let reference = -(-3.0f64).exp().ln_1p();
        assert!((log_sigmoid(3.0f64) - reference).abs() <= 1e-12);
        assert!((log_sigmoid(3.0f64) - sigmoid(3.0f64).ln()).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn leaky_relu_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3, slope in 0.01f64..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(leaky_relu_scalar(lo, slope) <= leaky_relu_scalar(hi, slope));
            if lo < 0.0 {
                prop_assert_eq!(leaky_relu_scalar(lo, slope), slope * lo);
            }
        }

        #[test]
        fn log_sigmoid_complements(x in -30.0f64..30.0) {
            let total = log_sigmoid(x).exp() + log_sigmoid(-x).exp();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn stable_forms_stay_finite(x in -1e300f64..1e300) {
            prop_assert!(sigmoid(x).is_finite());
            prop_assert!(log_sigmoid(x).is_finite());
            prop_assert!(softplus(x).is_finite());
        }
    }
}
