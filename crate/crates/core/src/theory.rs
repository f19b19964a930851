//! Mean-square convergence predictions for MKRSL under white Gaussian input.
//!
//! The a priori error `e_a` is modelled as `N(0, x)` with `x = σx²·WEP`,
//! independent of the noise `v`. Everything reduces to one- and
//! two-dimensional expectations over `(e_a, v)`, evaluated by composite
//! Gauss–Legendre quadrature restricted to where the score is not
//! negligible. Each reported expectation is checked against a run with twice
//! the nodes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, KrslError, Result};
use crate::noise::{IntegrationSpec, NoiseModel};
use crate::quadrature::gl10;
use crate::similarity::{kernel, KrslParams};

/// Half-width of the Gaussian window in standard deviations.
const GAUSS_WINDOW: f64 = 12.0;
const PANELS_PER_SCALE: f64 = 0.6;

/// Quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Multiplies every panel count.
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    /// Largest relative change accepted when the node count is doubled.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_refinement() -> usize {
    1
}

fn default_tolerance() -> f64 {
    1e-6
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            refinement: default_refinement(),
            tolerance: default_tolerance(),
        }
    }
}

/// Operating point for the theoretical predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub params: KrslParams,
    pub eta: f64,
    /// Filter length `m`.
    pub m: usize,
    pub input_variance: f64,
    pub noise: NoiseModel,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
}

impl TheoryConfig {
    pub fn new(params: KrslParams, eta: f64, m: usize, input_variance: f64, noise: NoiseModel) -> Result<Self> {
        let cfg = TheoryConfig {
            params,
            eta,
            m,
            input_variance,
            noise,
            quadrature: QuadratureSpec::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("eta", self.eta)?;
        ensure_positive("input_variance", self.input_variance)?;
        if self.m == 0 {
            return Err(invalid("m", "filter length must be at least 1"));
        }
        if self.quadrature.refinement == 0 {
            return Err(invalid("refinement", "must be at least 1"));
        }
        ensure_positive("tolerance", self.quadrature.tolerance)?;
        self.noise.validate()
    }

    /// `Tr(R) = m·σx²`.
    pub fn trace_r(&self) -> f64 {
        self.m as f64 * self.input_variance
    }

    /// Distance beyond which `f`, `f′` and `f″` are below `e^{−50}` of
    /// their scale.
    fn reach(&self) -> f64 {
        self.params.sigma() * (2.0 * self.params.lambda() + 100.0).sqrt()
    }
}

#[inline]
fn score(e: f64, p: &KrslParams) -> f64 {
    let k = kernel(e, p.sigma());
    (p.lambda() * (1.0 - k)).exp() * k * e
}

/// `f′(v) = exp(λ(1 − κ))·κ·(1 + λ(v²/σ²)κ − v²/σ²)` with `κ = κσ(v)`.
pub fn f_prime(v: f64, params: &KrslParams) -> f64 {
    let k = kernel(v, params.sigma());
    let r = v * v / (params.sigma() * params.sigma());
    (params.lambda() * (1.0 - k)).exp() * k * (1.0 + params.lambda() * r * k - r)
}

/// Second derivative of the MKRSL score,
/// `exp(λ(1 − κ))·κ·(λ²v³/σ⁴·κ² + (3λσ²v − 3λv³)/σ⁴·κ + (v³ − 3vσ²)/σ⁴)`.
pub fn f_double_prime(v: f64, params: &KrslParams) -> f64 {
    let s = params.sigma();
    let l = params.lambda();
    let s2 = s * s;
    let s4 = s2 * s2;
    let k = kernel(v, s);
    let v3 = v * v * v;
    (l * (1.0 - k)).exp()
        * k
        * (l * l * v3 / s4 * k * k + (3.0 * l * s2 * v - 3.0 * l * v3) / s4 * k + (v3 - 3.0 * v * s2) / s4)
}

/// `E[y·f(y + v)]` and `E[f²(y + v)]` with `y ~ N(0, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Moments {
    cross: f64,
    square: f64,
}

fn relative_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn moments(x: f64, cfg: &TheoryConfig, refinement: usize) -> Moments {
    let p = &cfg.params;
    let reach = cfg.reach();
    let sd = x.sqrt();
    let half = GAUSS_WINDOW * sd;
    let rule = gl10();
    let inner_scale = sd.min(p.sigma());
    let norm = 1.0 / (2.0 * PI * x).sqrt();
    let spec = IntegrationSpec {
        window: (-(reach + half), reach + half),
        feature_scale: p.sigma(),
        refinement,
    };
    let mut acc = Moments { cross: 0.0, square: 0.0 };
    let mut nodes = Vec::new();
    cfg.noise.for_each_node(&spec, &mut |v, wv| {
        let lo = (-half).max(-v - reach);
        let hi = half.min(-v + reach);
        if hi <= lo {
            return;
        }
        let panels = ((hi - lo) / inner_scale * PANELS_PER_SCALE).ceil().max(1.0) as usize * refinement;
        nodes.clear();
        rule.push_composite(lo, hi, panels, &mut nodes);
        let (mut c, mut s) = (0.0, 0.0);
        for &(y, wy) in &nodes {
            let w = wy * norm * (-0.5 * y * y / x).exp();
            let f = score(y + v, p);
            c += w * y * f;
            s += w * f * f;
        }
        acc.cross += wv * c;
        acc.square += wv * s;
    });
    acc
}

/// `E[f(v)]`-type expectation over the noise alone.
fn noise_expectation<F: Fn(f64) -> f64>(cfg: &TheoryConfig, g: &F, refinement: usize) -> f64 {
    let reach = cfg.reach();
    let spec = IntegrationSpec {
        window: (-reach, reach),
        feature_scale: cfg.params.sigma() / 2.0,
        refinement,
    };
    cfg.noise.expectation(g, &spec)
}

fn checked_moments(x: f64, cfg: &TheoryConfig) -> Result<Moments> {
    let r = cfg.quadrature.refinement;
    let a = moments(x, cfg, r);
    let b = moments(x, cfg, 2 * r);
    let tol = cfg.quadrature.tolerance;
    for (quantity, u, v) in [("h_G", a.cross, b.cross), ("h_U", a.square, b.square)] {
        let change = relative_change(u, v);
        if !(change <= tol) {
            return Err(KrslError::QuadratureAccuracy {
                quantity,
                relative_change: change,
            });
        }
    }
    Ok(b)
}

fn checked_noise_expectation<F: Fn(f64) -> f64>(cfg: &TheoryConfig, g: &F, quantity: &'static str) -> Result<f64> {
    let r = cfg.quadrature.refinement;
    let a = noise_expectation(cfg, g, r);
    let b = noise_expectation(cfg, g, 2 * r);
    let change = relative_change(a, b);
    if !(change <= cfg.quadrature.tolerance) {
        return Err(KrslError::QuadratureAccuracy {
            quantity,
            relative_change: change,
        });
    }
    Ok(b)
}

fn ensure_variance(x: f64) -> Result<()> {
    ensure_positive("x", x)
}

/// `h_G(x) = E[e_a·f(e_a + v)] / x` with `e_a ~ N(0, x)`.
pub fn h_g(x: f64, cfg: &TheoryConfig) -> Result<f64> {
    ensure_variance(x)?;
    cfg.validate()?;
    Ok(checked_moments(x, cfg)?.cross / x)
}

/// `h_U(x) = E[f²(e_a + v)]` with `e_a ~ N(0, x)`.
pub fn h_u(x: f64, cfg: &TheoryConfig) -> Result<f64> {
    ensure_variance(x)?;
    cfg.validate()?;
    Ok(checked_moments(x, cfg)?.square)
}

/// Both `h_G(x)` and `h_U(x)` from a single quadrature pass.
pub fn h_pair(x: f64, cfg: &TheoryConfig) -> Result<(f64, f64)> {
    ensure_variance(x)?;
    cfg.validate()?;
    let m = checked_moments(x, cfg)?;
    Ok((m.cross / x, m.square))
}

/// Limits as `x → 0`: `h_G → E[f′(v)]`, `h_U → E[f²(v)]`.
fn h_pair_at_zero(cfg: &TheoryConfig, refinement: usize) -> (f64, f64) {
    let p = cfg.params;
    (
        noise_expectation(cfg, &|v| f_prime(v, &p), refinement),
        noise_expectation(cfg, &|v| score(v, &p).powi(2), refinement),
    )
}

fn h_pair_unchecked(x: f64, cfg: &TheoryConfig) -> (f64, f64) {
    if x <= 0.0 {
        return h_pair_at_zero(cfg, cfg.quadrature.refinement);
    }
    let m = moments(x, cfg, cfg.quadrature.refinement);
    (m.cross / x, m.square)
}

/// Weight-error power `E‖W̃(i)‖²` for `i = 0..=n_iters` from the white-input
/// recursion
/// `WEP ← WEP − 2ησx²·h_G(σx²WEP)·WEP + η²σx²m·h_U(σx²WEP)`.
///
/// The quadrature accuracy check runs at the first and last iterate.
pub fn transient_curve(cfg: &TheoryConfig, n_iters: usize, initial_wep: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(initial_wep.is_finite() && initial_wep >= 0.0) {
        return Err(invalid("initial_wep", format!("must be finite and >= 0, got {initial_wep}")));
    }
    let sx2 = cfg.input_variance;
    let eta = cfg.eta;
    let m = cfg.m as f64;
    if initial_wep > 0.0 {
        checked_moments(sx2 * initial_wep, cfg)?;
    }
    let mut curve = Vec::with_capacity(n_iters + 1);
    let mut wep = initial_wep;
    curve.push(wep);
    for _ in 0..n_iters {
        let (hg, hu) = h_pair_unchecked(sx2 * wep, cfg);
        wep = wep - 2.0 * eta * sx2 * hg * wep + eta * eta * sx2 * m * hu;
        if !wep.is_finite() {
            return Err(KrslError::Diverged);
        }
        curve.push(wep);
    }
    if wep > 0.0 {
        checked_moments(sx2 * wep, cfg)?;
    }
    Ok(curve)
}

/// Noise-only expectations entering the Taylor steady-state formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorTerms {
    /// `E[f²(v)]`
    pub f_sq: f64,
    /// `E[f′(v)]`
    pub f_prime: f64,
    /// `E[f(v)f″(v) + f′(v)²]`
    pub curvature: f64,
}

pub fn taylor_terms(cfg: &TheoryConfig) -> Result<TaylorTerms> {
    cfg.validate()?;
    let p = cfg.params;
    Ok(TaylorTerms {
        f_sq: checked_noise_expectation(cfg, &|v| score(v, &p).powi(2), "E[f^2]")?,
        f_prime: checked_noise_expectation(cfg, &|v| f_prime(v, &p), "E[f']")?,
        curvature: checked_noise_expectation(
            cfg,
            &|v| score(v, &p) * f_double_prime(v, &p) + f_prime(v, &p).powi(2),
            "E[f f'' + f'^2]",
        )?,
    })
}

/// Steady-state EMSE from the second-order expansion
/// `S ≈ ηTr(R)E[f²] / (2E[f′] − ηTr(R)E[f f″ + f′²])`.
pub fn steady_state_emse_taylor(cfg: &TheoryConfig) -> Result<f64> {
    let t = taylor_terms(cfg)?;
    let tr = cfg.eta * cfg.trace_r();
    let denominator = 2.0 * t.f_prime - tr * t.curvature;
    if !(denominator > 0.0) {
        return Err(KrslError::StabilityViolation { denominator });
    }
    Ok(tr * t.f_sq / denominator)
}

const SCAN_POINTS_PER_DECADE: usize = 8;
const BRACKET_EXPANSIONS: usize = 6;

/// Smallest positive root of `S = (η/2)Tr(R)·h_U(S)/h_G(S)`.
///
/// The bracket starts at `(1e-12, 10·S_taylor]` (or `(1e-12, 1]` when the
/// Taylor value is unavailable) and is widened tenfold up to six times.
pub fn steady_state_emse_exact(cfg: &TheoryConfig) -> Result<f64> {
    cfg.validate()?;
    let half = 0.5 * cfg.eta * cfg.trace_r();
    let g = |s: f64| -> f64 {
        let (hg, hu) = h_pair_unchecked(s, cfg);
        s - half * hu / hg
    };
    let lower = 1e-12;
    let mut upper = steady_state_emse_taylor(cfg).map_or(1.0, |s| 10.0 * s).max(10.0 * lower);
    let mut a = lower;
    let mut ga = g(a);
    let mut bracket = None;
    'search: for _ in 0..=BRACKET_EXPANSIONS {
        let decades = (upper / a).log10();
        let steps = ((decades * SCAN_POINTS_PER_DECADE as f64).ceil() as usize).max(1);
        let ratio = (upper / a).powf(1.0 / steps as f64);
        for k in 1..=steps {
            let b = if k == steps { upper } else { a * ratio };
            let gb = g(b);
            if ga.is_finite() && gb.is_finite() && ga < 0.0 && gb >= 0.0 {
                bracket = Some((a, b));
                break 'search;
            }
            a = b;
            ga = gb;
        }
        upper *= 10.0;
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        KrslError::NoSolution(format!("no sign change of the fixed-point residual in (1e-12, {:e}]", upper / 10.0))
    })?;
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    checked_moments(s, cfg)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(sigma: f64, lambda: f64) -> KrslParams {
        KrslParams::new(sigma, lambda).unwrap()
    }

    #[test]
    fn derivatives_at_origin() {
        for (s, l) in [(1.0, 8.0), (0.3, 1.0), (5.0, 40.0)] {
            assert_eq!(f_prime(0.0, &p(s, l)), 1.0);
            assert_eq!(f_double_prime(0.0, &p(s, l)), 0.0);
        }
    }

    #[test]
    fn derivative_tails_vanish() {
        assert!(f_prime(50.0, &p(1.0, 8.0)).abs() < 1e-12);
        assert!(f_double_prime(-50.0, &p(1.0, 8.0)).abs() < 1e-12);
    }

    #[test]
    fn taylor_gaussian_operating_point() {
        let cfg = TheoryConfig::new(p(1.0, 8.0), 3e-6, 20, 1.0, NoiseModel::gaussian(1.0)).unwrap();
        let s = steady_state_emse_taylor(&cfg).unwrap();
        assert_relative_eq!(s, 0.003018159797273116, max_relative = 1e-6);
    }

    #[test]
    fn stability_violation_reported() {
        // Nearly LMS: the denominator is about 2 − ηTr(R) = −2.
        let cfg = TheoryConfig::new(p(100.0, 0.1), 0.2, 20, 1.0, NoiseModel::gaussian(1.0)).unwrap();
        assert!(matches!(
            steady_state_emse_taylor(&cfg),
            Err(KrslError::StabilityViolation { .. })
        ));
    }

    #[test]
    fn h_requires_positive_variance() {
        let cfg = TheoryConfig::new(p(1.0, 2.0), 1e-3, 4, 1.0, NoiseModel::gaussian(1.0)).unwrap();
        assert!(h_g(0.0, &cfg).is_err());
        assert!(h_u(-1.0, &cfg).is_err());
        assert!(h_u(0.5, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn transient_starts_at_initial_value() {
        let cfg = TheoryConfig::new(p(1.0, 2.0), 2e-3, 20, 1.0, NoiseModel::gaussian(1.0)).unwrap();
        let c = transient_curve(&cfg, 5, 1.0).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], 1.0);
        assert!(c.windows(2).all(|w| w[1] < w[0]));
    }
}
