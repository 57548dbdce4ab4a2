//! Central finite-difference verification of analytic gradients.
//!
//! Every trainable model in the crate exposes its loss as an [`Objective`]
//! over a flat parameter vector. [`grad_check`] perturbs one coordinate at a
//! time and compares `(f(θ + h) − f(θ − h)) / 2h` with the analytic gradient.
//! Piecewise-linear activations make the loss non-differentiable at their
//! kinks, so objectives report their smallest pre-activation magnitude and the
//! checker jitters the parameters until the evaluation point is clear of them.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loss: T,
    pub gradient: Vec<T>,
    /// Smallest `|x|` over all inputs to a LeakyReLU, if the objective has any.
    pub min_preactivation: Option<T>,
}

pub trait Objective<T: Scalar> {
    fn params(&self) -> Vec<T>;

    fn set_params(&mut self, params: &[T]);

    fn evaluate(&mut self) -> Result<Evaluation<T>>;

    /// Loss only; override when it is cheaper than a full evaluation.
    fn loss(&mut self) -> Result<T> {
        Ok(self.evaluate()?.loss)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub kink_threshold: f64,
    pub max_resamples: usize,
    /// Half-width of the uniform jitter added to every parameter on a re-sample.
    pub jitter: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            kink_threshold: 1e-6,
            max_resamples: 50,
            jitter: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub n_params: usize,
    pub resamples: usize,
}

/// Quadratic `½‖x‖²`, handy as a self-test of the checker.
#[derive(Debug, Clone)]
pub struct HalfSquaredNorm<T> {
    pub x: Vec<T>,
}

impl<T: Scalar> Objective<T> for HalfSquaredNorm<T> {
    fn params(&self) -> Vec<T> {
        self.x.clone()
    }

    fn set_params(&mut self, params: &[T]) {
        self.x.copy_from_slice(params);
    }

    fn evaluate(&mut self) -> Result<Evaluation<T>> {
        let loss = self.x.iter().map(|&v| v * v).sum::<T>() * T::of(0.5);
        Ok(Evaluation {
            loss,
            gradient: self.x.clone(),
            min_preactivation: None,
        })
    }
}

pub fn grad_check<T: Scalar, O: Objective<T>>(objective: &mut O, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(objective, seed, &GradCheckOptions::default())
}

pub fn grad_check_with<T: Scalar, O: Objective<T>>(
    objective: &mut O,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Uniform::new_inclusive(-opts.jitter, opts.jitter)
        .map_err(|e| Error::Config(format!("jitter: {e}")))?;

    let mut resamples = 0;
    let analytic = loop {
        let eval = objective.evaluate()?;
        ensure_finite(eval.loss, "analytic evaluation")?;
        let near_kink = eval
            .min_preactivation
            .is_some_and(|m| m.as_f64() < opts.kink_threshold);
        if !near_kink {
            break eval;
        }
        if resamples == opts.max_resamples {
            return Err(Error::NonFinite(format!(
                "evaluation point stays within {} of an activation kink after {} re-samples",
                opts.kink_threshold, resamples
            )));
        }
        resamples += 1;
        let jittered: Vec<T> = objective
            .params()
            .into_iter()
            .map(|p| p + T::of(jitter.sample(&mut rng)))
            .collect();
        objective.set_params(&jittered);
    };

    let base = objective.params();
    if analytic.gradient.len() != base.len() {
        return Err(Error::Dimension {
            op: "grad_check",
            lhs: (base.len(), 1),
            rhs: (analytic.gradient.len(), 1),
        });
    }

    let h = T::of(opts.step);
    let mut probe = base.clone();
    let mut worst = (0.0f64, 0usize);
    for k in 0..base.len() {
        probe[k] = base[k] + h;
        objective.set_params(&probe);
        let plus = ensure_finite(objective.loss()?, "forward probe")?;
        probe[k] = base[k] - h;
        objective.set_params(&probe);
        let minus = ensure_finite(objective.loss()?, "backward probe")?;
        probe[k] = base[k];

        let fd = (plus - minus).as_f64() / (2.0 * opts.step);
        let an = analytic.gradient[k].as_f64();
        let rel = (fd - an).abs() / 1f64.max(fd.abs()).max(an.abs());
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, k);
        }
    }
    objective.set_params(&base);

    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        n_params: base.len(),
        resamples,
    })
}

fn ensure_finite<T: Scalar>(v: T, stage: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss is {v} during {stage}")))
    }
}
