//! Online adaptive filters of the form `W(i+1) = W(i) + η·f(e(i))·X(i)`.
//!
//! MKRSL is the kernel risk-sensitive filter; the other members are the
//! comparison baselines. Each algorithm is described by its score function
//! `f`, so a single update routine serves them all.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, KrslError, Result};
use crate::similarity::{kernel, KrslParams};

/// Algorithm tag plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    /// Least mean squares, `f(e) = e`.
    Lms,
    /// Sign algorithm, `f(e) = sign(e)`.
    Sa,
    /// Least mean mixed norm, `f(e) = e·(δ + (1 − δ)e²)`.
    Lmmn { delta: f64 },
    /// Least mean M-estimate with a Huber score clipped at `threshold`.
    Lmm { threshold: f64 },
    /// Maximum correntropy, `f(e) = κσ(e)·e`.
    Mcc { sigma: f64 },
    /// Minimum kernel risk-sensitive loss, `f(e) = exp(λ(1 − κσ(e)))·κσ(e)·e`.
    Mkrsl { sigma: f64, lambda: f64 },
    /// Generalized correntropy, `f(e) = exp(−λ|e|^α)·|e|^(α−1)·sign(e)`.
    Gmcc { alpha: f64, lambda: f64 },
}

impl Algorithm {
    pub fn mkrsl(params: KrslParams) -> Self {
        Algorithm::Mkrsl {
            sigma: params.sigma(),
            lambda: params.lambda(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Lms => "lms",
            Algorithm::Sa => "sa",
            Algorithm::Lmmn { .. } => "lmmn",
            Algorithm::Lmm { .. } => "lmm",
            Algorithm::Mcc { .. } => "mcc",
            Algorithm::Mkrsl { .. } => "mkrsl",
            Algorithm::Gmcc { .. } => "gmcc",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Algorithm::Lms | Algorithm::Sa => Ok(()),
            Algorithm::Lmmn { delta } => {
                if (0.0..=1.0).contains(&delta) {
                    Ok(())
                } else {
                    Err(invalid("delta", format!("must lie in [0, 1], got {delta}")))
                }
            }
            Algorithm::Lmm { threshold } => ensure_positive("threshold", threshold),
            Algorithm::Mcc { sigma } => ensure_positive("sigma", sigma),
            Algorithm::Mkrsl { sigma, lambda } => KrslParams::new(sigma, lambda).map(|_| ()),
            Algorithm::Gmcc { alpha, lambda } => {
                ensure_positive("alpha", alpha)?;
                ensure_positive("lambda", lambda)
            }
        }
    }

    /// KRSL parameters for the MKRSL variant.
    pub fn krsl_params(&self) -> Option<KrslParams> {
        match *self {
            Algorithm::Mkrsl { sigma, lambda } => KrslParams::new(sigma, lambda).ok(),
            _ => None,
        }
    }

    /// The score function `f(e)`.
    #[inline]
    pub fn score(&self, e: f64) -> f64 {
        match *self {
            Algorithm::Lms => e,
            Algorithm::Sa => sign(e),
            Algorithm::Lmmn { delta } => e * (delta + (1.0 - delta) * e * e),
            Algorithm::Lmm { threshold } => e.clamp(-threshold, threshold),
            Algorithm::Mcc { sigma } => kernel(e, sigma) * e,
            Algorithm::Mkrsl { sigma, lambda } => {
                let k = kernel(e, sigma);
                (lambda * (1.0 - k)).exp() * k * e
            }
            Algorithm::Gmcc { alpha, lambda } => {
                if e == 0.0 {
                    return 0.0;
                }
                let a = e.abs();
                (-lambda * a.powf(alpha)).exp() * a.powf(alpha - 1.0) * sign(e)
            }
        }
    }

    /// Slope of the score at the origin, or 0 where it is unbounded.
    fn slope_at_zero(&self) -> f64 {
        match *self {
            Algorithm::Lms | Algorithm::Lmm { .. } | Algorithm::Mcc { .. } | Algorithm::Mkrsl { .. } => 1.0,
            Algorithm::Sa => 0.0,
            Algorithm::Lmmn { delta } => delta,
            Algorithm::Gmcc { alpha, .. } => {
                if alpha == 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// MKRSL score `f(e) = exp(λ(1 − κσ(e)))·κσ(e)·e`.
pub fn mkrsl_score(e: f64, params: &KrslParams) -> f64 {
    Algorithm::mkrsl(*params).score(e)
}

/// Variable step size `η(i) = η·exp(λ(1 − κσ(e)))·κσ(e)` of MKRSL viewed as
/// an LMS filter.
pub fn mkrsl_variable_step(e: f64, eta: f64, params: &KrslParams) -> Result<f64> {
    ensure_positive("eta", eta)?;
    let k = kernel(e, params.sigma());
    Ok(eta * params.risk_factor(e) * k)
}

/// The `λ = 0` member of the same family: `η·κσ(e)`.
pub fn mcc_variable_step(e: f64, eta: f64, sigma: f64) -> Result<f64> {
    ensure_positive("eta", eta)?;
    ensure_positive("sigma", sigma)?;
    Ok(eta * kernel(e, sigma))
}

/// Error and effective step of a single update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub error: f64,
    /// `η·f(e)/e`; at `e = 0` the slope `η·f′(0)` (0 where unbounded).
    pub effective_step: f64,
}

/// Full result of one step including the updated weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub error: f64,
    pub effective_step: f64,
    pub weights: Vec<f64>,
}

/// Weight vector, algorithm and step size of one adaptive filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    weights: Vec<f64>,
    algorithm: Algorithm,
    step_size: f64,
}

impl FilterState {
    /// A filter of length `m` starting from the zero vector.
    pub fn new(m: usize, algorithm: Algorithm, step_size: f64) -> Result<Self> {
        Self::with_weights(vec![0.0; m], algorithm, step_size)
    }

    pub fn with_weights(weights: Vec<f64>, algorithm: Algorithm, step_size: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("m", "filter length must be at least 1"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(KrslError::NonFiniteSample);
        }
        ensure_positive("step_size", step_size)?;
        algorithm.validate()?;
        Ok(FilterState {
            weights,
            algorithm,
            step_size,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn algorithm(&self) -> &Algorithm {
        &self.algorithm
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// A priori output `Wᵀx`.
    pub fn output(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    /// Applies one update in place.
    ///
    /// The state is left untouched when the sample is rejected or when the
    /// update would produce non-finite weights.
    pub fn update(&mut self, x: &[f64], d: f64) -> Result<StepReport> {
        if x.len() != self.weights.len() {
            return Err(KrslError::LengthMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        if !d.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(KrslError::NonFiniteSample);
        }
        let error = d - self.output(x);
        let gain = self.step_size * self.algorithm.score(error);
        if !gain.is_finite()
            || self
                .weights
            .iter()
            .zip(x)
            .any(|(w, v)| !(w + gain * v).is_finite())
        {
            return Err(KrslError::Diverged);
        }
        for (w, v) in self.weights.iter_mut().zip(x) {
            *w += gain * v;
        }
        let effective_step = if error != 0.0 {
            gain / error
        } else {
            self.step_size * self.algorithm.slope_at_zero()
        };
        Ok(StepReport {
            error,
            effective_step,
        })
    }

    /// One update returning a snapshot of the new weights.
    pub fn filter_step(&mut self, x: &[f64], d: f64) -> Result<StepOutcome> {
        let r = self.update(x, d)?;
        Ok(StepOutcome {
            error: r.error,
            effective_step: r.effective_step,
            weights: self.weights.clone(),
        })
    }
}

/// Runs `state` over a sequence of `(x, d)` pairs.
pub fn run_filter<I, X>(state: &mut FilterState, inputs: I) -> Result<Vec<StepOutcome>>
where
    I: IntoIterator<Item = (X, f64)>,
    X: AsRef<[f64]>,
{
    inputs
        .into_iter()
        .map(|(x, d)| state.filter_step(x.as_ref(), d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(sigma: f64, lambda: f64) -> KrslParams {
        KrslParams::new(sigma, lambda).unwrap()
    }

    #[test]
    fn score_examples() {
        let params = p(1.0, 1.0);
        assert_eq!(mkrsl_score(0.0, &params), 0.0);
        assert_relative_eq!(mkrsl_score(1.0, &params), 0.8989474862671123, max_relative = 1e-14);
        for e in [0.1, 0.7, 2.3, 11.0] {
            assert_eq!(mkrsl_score(-e, &params), -mkrsl_score(e, &params));
        }
    }

    #[test]
    fn variable_step_examples() {
        let params = p(1.0, 3.0);
        assert_eq!(mkrsl_variable_step(0.0, 0.25, &params).unwrap(), 0.25);
        assert!(mkrsl_variable_step(100.0, 0.25, &params).unwrap() < 1e-100 * 0.25 * 3f64.exp());
        assert_relative_eq!(
            mcc_variable_step(0.8, 0.5, 1.0).unwrap(),
            0.5 * (-0.32f64).exp(),
            max_relative = 1e-15
        );
        assert!(mkrsl_variable_step(1.0, 0.0, &params).is_err());
    }

    #[test]
    fn single_mkrsl_step() {
        let mut f = FilterState::new(1, Algorithm::mkrsl(p(1.0, 1.0)), 0.1).unwrap();
        let out = f.filter_step(&[1.0], 1.0).unwrap();
        assert_eq!(out.error, 1.0);
        assert_relative_eq!(out.weights[0], 0.08989474862671123, max_relative = 1e-14);
        assert_relative_eq!(out.effective_step, 0.08989474862671123, max_relative = 1e-14);
    }

    fn roster() -> Vec<Algorithm> {
        vec![
            Algorithm::Lms,
            Algorithm::Sa,
            Algorithm::Lmmn { delta: 0.4 },
            Algorithm::Lmm { threshold: 1.5 },
            Algorithm::Mcc { sigma: 1.0 },
            Algorithm::Mkrsl { sigma: 1.0, lambda: 4.0 },
            Algorithm::Gmcc { alpha: 4.0, lambda: 0.1 },
        ]
    }

    #[test]
    fn zero_error_leaves_weights() {
        for a in roster() {
            let mut f = FilterState::with_weights(vec![0.5, -1.0], a, 0.05).unwrap();
            let d = f.output(&[2.0, 1.0]);
            let r = f.update(&[2.0, 1.0], d).unwrap();
            assert_eq!(r.error, 0.0);
            assert_eq!(f.weights(), &[0.5, -1.0]);
            assert!(r.effective_step >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_samples() {
        let mut f = FilterState::new(2, Algorithm::Lms, 0.1).unwrap();
        assert!(matches!(f.update(&[1.0], 1.0), Err(KrslError::LengthMismatch { .. })));
        assert_eq!(f.update(&[1.0, f64::NAN], 1.0), Err(KrslError::NonFiniteSample));
        assert_eq!(f.update(&[1.0, 1.0], f64::INFINITY), Err(KrslError::NonFiniteSample));
        let mut big = FilterState::new(1, Algorithm::Lmmn { delta: 0.0 }, 1.0).unwrap();
        assert_eq!(big.update(&[1e200], 1e200), Err(KrslError::Diverged));
        assert_eq!(big.weights(), &[0.0]);
    }

    #[test]
    fn constructor_validation() {
        assert!(FilterState::new(0, Algorithm::Lms, 0.1).is_err());
        assert!(FilterState::new(2, Algorithm::Lms, 0.0).is_err());
        assert!(FilterState::new(2, Algorithm::Lmmn { delta: 1.5 }, 0.1).is_err());
        assert!(FilterState::new(2, Algorithm::Mkrsl { sigma: 1.0, lambda: 0.0 }, 0.1).is_err());
        assert!(FilterState::new(2, Algorithm::Lmm { threshold: 0.0 }, 0.1).is_err());
    }

    #[test]
    fn empty_run_is_empty() {
        let mut f = FilterState::new(3, Algorithm::Lms, 0.1).unwrap();
        let out = run_filter(&mut f, Vec::<(Vec<f64>, f64)>::new()).unwrap();
        assert!(out.is_empty());
        assert_eq!(f.weights(), &[0.0; 3]);
    }

    #[test]
    fn baseline_scores() {
        assert_eq!(Algorithm::Sa.score(-3.0), -1.0);
        assert_eq!(Algorithm::Lmm { threshold: 1.0 }.score(-3.0), -1.0);
        assert_eq!(Algorithm::Lmm { threshold: 1.0 }.score(0.5), 0.5);
        assert_relative_eq!(Algorithm::Lmmn { delta: 0.5 }.score(2.0), 2.0 * (0.5 + 0.5 * 4.0));
        assert_relative_eq!(
            Algorithm::Gmcc { alpha: 2.0, lambda: 0.5 }.score(-2.0),
            -(-2.0f64).exp() * 2.0,
            max_relative = 1e-15
        );
    }
}
