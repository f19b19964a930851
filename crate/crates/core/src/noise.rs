//! Reproducible random signals: white inputs, the noise distributions used in
//! the experiments, and the Bernoulli mixture-outlier model.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, Result};
use crate::quadrature::gl10;

/// Identity of the generator behind [`RngSpec`], recorded in run manifests.
pub const GENERATOR_ID: &str = "rand_chacha 0.9 ChaCha20Rng (seed_from_u64, set_stream); rand_distr 0.5 StandardNormal";

/// Seed plus stream id. Identical specs give identical sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngSpec {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngSpec { seed, stream }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        RngSpec { stream, ..self }
    }

    pub fn generator(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Bernoulli switch between an inner noise and a large-variance outlier noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureOutlierModel {
    /// Probability `c` that a sample comes from the outlier process.
    pub probability: f64,
    pub inner: Box<NoiseModel>,
    pub outlier: Box<NoiseModel>,
}

/// A scalar noise distribution.
///
/// Every variant except `Mixture` is a single density (or, for `Binary`, a
/// two-point measure). Parameters follow the experiment descriptions:
/// `Gaussian` and `Laplace` are zero mean with the given variance, `Uniform`
/// covers `[-half_width, half_width]`, `Cauchy` has density
/// `1/(π·s·(1 + (v/s)²))` and `SineWave` is `amplitude·sin(ω)` with `ω`
/// uniform on `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    Gaussian { variance: f64 },
    Binary { amplitude: f64 },
    Uniform { half_width: f64 },
    Laplace { variance: f64 },
    Cauchy { scale: f64 },
    SineWave { amplitude: f64 },
    Mixture(MixtureOutlierModel),
}

/// Integration request for [`NoiseModel::expectation`].
///
/// The integrand is assumed negligible outside `window` and smooth on the
/// length scale `feature_scale`; `refinement` multiplies the panel count
/// (2 doubles every node count).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSpec {
    pub window: (f64, f64),
    pub feature_scale: f64,
    pub refinement: usize,
}

impl IntegrationSpec {
    pub fn unbounded(feature_scale: f64) -> Self {
        IntegrationSpec {
            window: (f64::NEG_INFINITY, f64::INFINITY),
            feature_scale,
            refinement: 1,
        }
    }

    pub fn refined(self, factor: usize) -> Self {
        IntegrationSpec {
            refinement: self.refinement * factor,
            ..self
        }
    }
}

/// Panels per natural length scale at refinement 1.
const PANELS_PER_SCALE: f64 = 1.5;
const MAX_PANELS: usize = 20_000;

fn panels_for(len: f64, scale: f64, refinement: usize) -> usize {
    let p = (len / scale * PANELS_PER_SCALE).ceil().max(1.0) as usize * refinement.max(1);
    p.min(MAX_PANELS * refinement.max(1))
}

impl NoiseModel {
    pub fn gaussian(variance: f64) -> Self {
        NoiseModel::Gaussian { variance }
    }

    pub fn mixture(probability: f64, inner: NoiseModel, outlier: NoiseModel) -> Self {
        NoiseModel::Mixture(MixtureOutlierModel {
            probability,
            inner: Box::new(inner),
            outlier: Box::new(outlier),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Gaussian { variance } | NoiseModel::Laplace { variance } => {
                ensure_positive("variance", *variance)
            }
            NoiseModel::Binary { amplitude } | NoiseModel::SineWave { amplitude } => {
                ensure_positive("amplitude", *amplitude)
            }
            NoiseModel::Uniform { half_width } => ensure_positive("half_width", *half_width),
            NoiseModel::Cauchy { scale } => ensure_positive("scale", *scale),
            NoiseModel::Mixture(m) => {
                if !(0.0..=1.0).contains(&m.probability) {
                    return Err(invalid(
                        "probability",
                        format!("must lie in [0, 1], got {}", m.probability),
                    ));
                }
                m.inner.validate()?;
                m.outlier.validate()
            }
        }
    }

    /// Variance, or `None` when it does not exist (Cauchy components).
    pub fn variance(&self) -> Option<f64> {
        match self {
            NoiseModel::Gaussian { variance } | NoiseModel::Laplace { variance } => Some(*variance),
            NoiseModel::Binary { amplitude } => Some(amplitude * amplitude),
            NoiseModel::Uniform { half_width } => Some(half_width * half_width / 3.0),
            NoiseModel::SineWave { amplitude } => Some(amplitude * amplitude / 2.0),
            NoiseModel::Cauchy { .. } => None,
            NoiseModel::Mixture(m) => {
                let a = m.inner.variance()?;
                let b = m.outlier.variance()?;
                Some((1.0 - m.probability) * a + m.probability * b)
            }
        }
    }

    /// Density at `v`; `None` for measures with atoms.
    pub fn pdf(&self, v: f64) -> Option<f64> {
        Some(match self {
            NoiseModel::Gaussian { variance } => {
                (-v * v / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
            }
            NoiseModel::Binary { .. } => return None,
            NoiseModel::Uniform { half_width } => {
                if v.abs() <= *half_width {
                    0.5 / half_width
                } else {
                    0.0
                }
            }
            NoiseModel::Laplace { variance } => {
                let b = (variance / 2.0).sqrt();
                (-v.abs() / b).exp() / (2.0 * b)
            }
            NoiseModel::Cauchy { scale } => {
                let z = v / scale;
                1.0 / (PI * scale * (1.0 + z * z))
            }
            NoiseModel::SineWave { amplitude } => {
                if v.abs() < *amplitude {
                    1.0 / (PI * (amplitude * amplitude - v * v).sqrt())
                } else {
                    0.0
                }
            }
            NoiseModel::Mixture(m) => {
                (1.0 - m.probability) * m.inner.pdf(v)? + m.probability * m.outlier.pdf(v)?
            }
        })
    }

    /// Symmetric window used by quadrature. It holds all but a negligible
    /// tail of the mass, except for Cauchy.
    pub fn truncation_window(&self) -> (f64, f64) {
        let w = match self {
            NoiseModel::Gaussian { variance } => 12.0 * variance.sqrt(),
            NoiseModel::Laplace { variance } => 30.0 * variance.sqrt(),
            NoiseModel::Binary { amplitude } | NoiseModel::SineWave { amplitude } => *amplitude,
            NoiseModel::Uniform { half_width } => *half_width,
            NoiseModel::Cauchy { scale } => 1e4 * scale,
            NoiseModel::Mixture(m) => {
                let (_, a) = m.inner.truncation_window();
                let (_, b) = m.outlier.truncation_window();
                a.max(b)
            }
        };
        (-w, w)
    }

    /// Exact probability of the closed interval `[lo, hi]`.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if hi < lo {
            return 0.0;
        }
        let cdf = |v: f64| -> f64 {
            match self {
                NoiseModel::Gaussian { variance } => 0.5 * (1.0 + erf(v / (2.0 * variance).sqrt())),
                NoiseModel::Uniform { half_width } => {
                    ((v + half_width) / (2.0 * half_width)).clamp(0.0, 1.0)
                }
                NoiseModel::Laplace { variance } => {
                    let b = (variance / 2.0).sqrt();
                    if v < 0.0 {
                        0.5 * (v / b).exp()
                    } else {
                        1.0 - 0.5 * (-v / b).exp()
                    }
                }
                NoiseModel::Cauchy { scale } => 0.5 + (v / scale).atan() / PI,
                NoiseModel::SineWave { amplitude } => {
                    0.5 + (v / amplitude).clamp(-1.0, 1.0).asin() / PI
                }
                NoiseModel::Binary { .. } | NoiseModel::Mixture(_) => unreachable!(),
            }
        };
        match self {
            NoiseModel::Binary { amplitude } => {
                [-amplitude, *amplitude]
                    .iter()
                    .filter(|a| (lo..=hi).contains(*a))
                    .count() as f64
                    * 0.5
            }
            NoiseModel::Mixture(m) => {
                (1.0 - m.probability) * m.inner.interval_mass(lo, hi)
                    + m.probability * m.outlier.interval_mass(lo, hi)
            }
            _ => cdf(hi) - cdf(lo),
        }
    }

    fn natural_scale(&self) -> f64 {
        match self {
            NoiseModel::Gaussian { variance } | NoiseModel::Laplace { variance } => variance.sqrt(),
            NoiseModel::Uniform { half_width } => *half_width,
            NoiseModel::Cauchy { scale } => *scale,
            NoiseModel::Binary { amplitude } | NoiseModel::SineWave { amplitude } => *amplitude,
            NoiseModel::Mixture(m) => m.inner.natural_scale().min(m.outlier.natural_scale()),
        }
    }

    /// `E[g(v)]` by quadrature over the distribution, restricted to the
    /// intersection of `spec.window` with the truncation window.
    pub fn expectation<F: Fn(f64) -> f64>(&self, g: &F, spec: &IntegrationSpec) -> f64 {
        let mut acc = 0.0;
        self.for_each_node(spec, &mut |v, w| acc += w * g(v));
        acc
    }

    /// Calls `visit(v, weight)` for every quadrature node of the measure.
    /// Weights include the density, so `Σ weight·g(v) ≈ E[g(v)]`.
    pub fn for_each_node<V: FnMut(f64, f64)>(&self, spec: &IntegrationSpec, visit: &mut V) {
        self.visit_nodes(spec, visit);
    }

    fn visit_nodes(&self, spec: &IntegrationSpec, visit: &mut dyn FnMut(f64, f64)) {
        let (lo, hi) = self.truncation_window();
        let lo = lo.max(spec.window.0);
        let hi = hi.min(spec.window.1);
        let scale = self.natural_scale().min(spec.feature_scale);
        let rule = gl10();
        match self {
            NoiseModel::Binary { amplitude } => {
                for a in [-amplitude, *amplitude] {
                    if (lo..=hi).contains(&a) {
                        visit(a, 0.5);
                    }
                }
            }
            NoiseModel::SineWave { amplitude } => {
                if hi <= lo {
                    return;
                }
                let a = (lo / amplitude).clamp(-1.0, 1.0).asin();
                let b = (hi / amplitude).clamp(-1.0, 1.0).asin();
                let panels = panels_for(b - a, scale / amplitude, spec.refinement);
                let mut nodes = Vec::new();
                rule.push_composite(a, b, panels, &mut nodes);
                for (theta, w) in nodes {
                    visit(amplitude * theta.sin(), w / PI);
                }
            }
            NoiseModel::Mixture(m) => {
                let c = m.probability;
                if c < 1.0 {
                    m.inner.visit_nodes(spec, &mut |v, w| visit(v, (1.0 - c) * w));
                }
                if c > 0.0 {
                    m.outlier.visit_nodes(spec, &mut |v, w| visit(v, c * w));
                }
            }
            _ => {
                if hi <= lo {
                    return;
                }
                // split at the origin so the Laplace kink sits on a panel edge
                let mut segments = vec![(lo, hi)];
                if lo < 0.0 && hi > 0.0 {
                    segments = vec![(lo, 0.0), (0.0, hi)];
                }
                let mut nodes = Vec::new();
                for (a, b) in segments {
                    rule.push_composite(a, b, panels_for(b - a, scale, spec.refinement), &mut nodes);
                }
                for (v, w) in nodes {
                    let p = self.pdf(v).unwrap_or(0.0);
                    visit(v, w * p);
                }
            }
        }
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseModel::Gaussian { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                variance.sqrt() * z
            }
            NoiseModel::Binary { amplitude } => {
                if rng.random::<bool>() {
                    *amplitude
                } else {
                    -amplitude
                }
            }
            NoiseModel::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
            NoiseModel::Laplace { variance } => {
                let b = (variance / 2.0).sqrt();
                let magnitude = -b * (1.0 - rng.random::<f64>()).ln();
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            NoiseModel::Cauchy { scale } => scale * (PI * (rng.random::<f64>() - 0.5)).tan(),
            NoiseModel::SineWave { amplitude } => {
                amplitude * (2.0 * PI * rng.random::<f64>()).sin()
            }
            NoiseModel::Mixture(m) => {
                let outlier = rng.random::<f64>() < m.probability;
                let a = m.inner.sample(rng);
                let b = m.outlier.sample(rng);
                if outlier {
                    b
                } else {
                    a
                }
            }
        }
    }
}

/// `n` i.i.d. draws from `model` on the stream described by `spec`.
pub fn sample_noise(model: &NoiseModel, n: usize, spec: RngSpec) -> Result<Vec<f64>> {
    model.validate()?;
    let mut rng = spec.generator();
    Ok((0..n).map(|_| model.sample(&mut rng)).collect())
}

// Maclaurin series for small |x|, Lentz continued fraction for erfc beyond.
fn erf(x: f64) -> f64 {
    if x.abs() < 2.5 {
        let mut sum = x;
        let mut term = x;
        let x2 = x * x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / PI.sqrt()
    } else {
        let sign = x.signum();
        let z = x.abs();
        let mut f = z;
        let mut c = z;
        let mut d = 0.0;
        for k in 1..200 {
            let a = k as f64 * 0.5;
            d = z + a * d;
            c = z + a / c;
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let erfc = (-z * z).exp() / (f * PI.sqrt());
        sign * (1.0 - erfc)
    }
}
