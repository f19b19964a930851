//! Similarity measures in kernel space and their input-space counterparts.
//!
//! Everything here is built on the translation-invariant Gaussian kernel
//! `κσ(u) = exp(−u²/(2σ²))`. Empirical estimators use the population
//! convention: single sums are divided by `N`, double sums by `N²`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, KrslError, Result};

/// Largest risk-sensitive parameter accepted; `exp(λ)` must stay finite.
pub const MAX_LAMBDA: f64 = 700.0;

/// Kernel bandwidth `sigma` and risk-sensitive parameter `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKrslParams", into = "RawKrslParams")]
pub struct KrslParams {
    sigma: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKrslParams {
    sigma: f64,
    lambda: f64,
}

impl TryFrom<RawKrslParams> for KrslParams {
    type Error = KrslError;

    fn try_from(raw: RawKrslParams) -> Result<Self> {
        KrslParams::new(raw.sigma, raw.lambda)
    }
}

impl From<KrslParams> for RawKrslParams {
    fn from(p: KrslParams) -> Self {
        RawKrslParams {
            sigma: p.sigma,
            lambda: p.lambda,
        }
    }
}

impl KrslParams {
    pub fn new(sigma: f64, lambda: f64) -> Result<Self> {
        ensure_positive("sigma", sigma)?;
        ensure_positive("lambda", lambda)?;
        if lambda > MAX_LAMBDA {
            return Err(invalid(
                "lambda",
                format!("must be <= {MAX_LAMBDA} to keep exp(lambda) finite, got {lambda}"),
            ));
        }
        Ok(KrslParams { sigma, lambda })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `exp(λ(1 − κσ(e)))`, the risk-sensitive weighting of a single error.
    #[inline]
    pub(crate) fn risk_factor(&self, e: f64) -> f64 {
        (self.lambda * (1.0 - kernel(e, self.sigma))).exp()
    }
}

/// Paired observations `x` and `y` of equal, non-zero length.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVectorPair {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SampleVectorPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(KrslError::EmptyData);
        }
        if x.len() != y.len() {
            return Err(KrslError::LengthMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        Ok(SampleVectorPair { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The error vector `e = x − y`.
    pub fn errors(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }

    #[cfg(test)]
    fn swapped(&self) -> SampleVectorPair {
        SampleVectorPair {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

#[inline]
pub(crate) fn kernel(u: f64, sigma: f64) -> f64 {
    (-(u * u) / (2.0 * sigma * sigma)).exp()
}

/// Gaussian kernel `exp(−u²/(2σ²))`.
pub fn gaussian_kernel(u: f64, sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    Ok(kernel(u, sigma))
}

/// Sample estimate of `E[κσ(X − Y)]`.
pub fn correntropy(pair: &SampleVectorPair, sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    let n = pair.len() as f64;
    let sum: f64 = pair
        .x
        .iter()
        .zip(&pair.y)
        .map(|(a, b)| kernel(a - b, sigma))
        .sum();
    Ok(sum / n)
}

/// Correntropic loss, `1 − correntropy`.
pub fn c_loss(pair: &SampleVectorPair, sigma: f64) -> Result<f64> {
    Ok(1.0 - correntropy(pair, sigma)?)
}

/// Joint correntropy minus its product-marginal double average.
pub fn centered_correntropy(pair: &SampleVectorPair, sigma: f64) -> Result<f64> {
    let joint = correntropy(pair, sigma)?;
    let n = pair.len() as f64;
    let mut cross = 0.0;
    for a in &pair.x {
        for b in &pair.y {
            cross += kernel(a - b, sigma);
        }
    }
    Ok(joint - cross / (n * n))
}

/// `U(X,Y)/√(U(X,X)·U(Y,Y))`.
pub fn correntropy_coefficient(pair: &SampleVectorPair, sigma: f64) -> Result<f64> {
    let uxy = centered_correntropy(pair, sigma)?;
    let uxx = centered_correntropy(&SampleVectorPair::new(pair.x.clone(), pair.x.clone())?, sigma)?;
    let uyy = centered_correntropy(&SampleVectorPair::new(pair.y.clone(), pair.y.clone())?, sigma)?;
    if !(uxx > 0.0 && uyy > 0.0) {
        return Err(KrslError::DegenerateData(
            "self centered correntropy is zero (constant sample)".into(),
        ));
    }
    Ok(uxy / (uxx * uyy).sqrt())
}

/// Mean square error `E[(X − Y)²]`.
pub fn mse(pair: &SampleVectorPair) -> f64 {
    let n = pair.len() as f64;
    pair.x
        .iter()
        .zip(&pair.y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance `E[XY] − E[X]E[Y]`.
pub fn covariance(pair: &SampleVectorPair) -> f64 {
    let (mx, my) = (mean(&pair.x), mean(&pair.y));
    let n = pair.len() as f64;
    pair.x
        .iter()
        .zip(&pair.y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n
}

pub fn correlation_coefficient(pair: &SampleVectorPair) -> Result<f64> {
    let vx = covariance(&SampleVectorPair::new(pair.x.clone(), pair.x.clone())?);
    let vy = covariance(&SampleVectorPair::new(pair.y.clone(), pair.y.clone())?);
    if !(vx > 0.0 && vy > 0.0) {
        return Err(KrslError::DegenerateData("zero variance".into()));
    }
    Ok(covariance(pair) / (vx * vy).sqrt())
}

/// Parzen estimate of the quadratic information potential.
pub fn qip(samples: &[f64], sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    if samples.is_empty() {
        return Err(KrslError::EmptyData);
    }
    let n = samples.len() as f64;
    let wide = std::f64::consts::SQRT_2 * sigma;
    let mut sum = 0.0;
    for a in samples {
        for b in samples {
            sum += kernel(a - b, wide);
        }
    }
    Ok(sum / (2.0 * n * n * std::f64::consts::PI.sqrt() * sigma))
}

/// Empirical KRSL of an error vector: `(1/(Nλ)) Σ exp(λ(1 − κσ(e_i)))`.
pub fn empirical_krsl_of_errors(errors: &[f64], params: &KrslParams) -> Result<f64> {
    if errors.is_empty() {
        return Err(KrslError::EmptyData);
    }
    let n = errors.len() as f64;
    let sum: f64 = errors.iter().map(|&e| params.risk_factor(e)).sum();
    Ok(sum / (n * params.lambda))
}

/// Empirical KRSL between the two halves of `pair`.
pub fn empirical_krsl(pair: &SampleVectorPair, params: &KrslParams) -> Result<f64> {
    empirical_krsl_of_errors(&pair.errors(), params)
}

/// Diagonal of the Hessian of the empirical KRSL with respect to `e`.
///
/// The Hessian is diagonal since each term depends on one coordinate only.
pub fn krsl_hessian_diag(errors: &[f64], params: &KrslParams) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(KrslError::EmptyData);
    }
    let n = errors.len() as f64;
    let s2 = params.sigma * params.sigma;
    Ok(errors
        .iter()
        .map(|&e| {
            let k = kernel(e, params.sigma);
            let xi = params.risk_factor(e) * k / (n * s2);
            let e2 = e * e;
            xi * (params.lambda / s2 * k * e2 + 1.0 - e2 / s2)
        })
        .collect())
}

/// Smallest `λ` guaranteeing a positive semidefinite Hessian at `e`.
///
/// Coordinates with `|e_i| ≤ σ` never constrain `λ`; returns 0 when none
/// exceed the bandwidth.
pub fn convexity_lambda_threshold(errors: &[f64], sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    let s2 = sigma * sigma;
    Ok(errors
        .iter()
        .filter(|e| e.abs() > sigma)
        .map(|&e| {
            let e2 = e * e;
            (e2 - s2) / e2 * (e2 / (2.0 * s2)).exp()
        })
        .fold(0.0, f64::max))
}
