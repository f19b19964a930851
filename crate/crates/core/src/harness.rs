//! Monte Carlo system identification.
//!
//! Each run draws one input stream and one noise stream and feeds the same
//! data to every filter in the roster. Runs execute in parallel chunks; the
//! per-iteration averages are reduced in run order so results do not depend
//! on scheduling.

use indexmap::IndexMap;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KrslError, Result};
use crate::filters::{Algorithm, FilterState};
use crate::noise::{NoiseModel, RngSpec};
use crate::par::Parallelism;
use crate::theory::{transient_curve, TheoryConfig};

/// Runs held in memory at once before their curves are folded into the sums.
const RUN_CHUNK: usize = 16;

/// One member of the algorithm roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub label: String,
    pub algorithm: Algorithm,
    pub step_size: f64,
}

impl AlgorithmSpec {
    pub fn new(label: impl Into<String>, algorithm: Algorithm, step_size: f64) -> Self {
        AlgorithmSpec {
            label: label.into(),
            algorithm,
            step_size,
        }
    }
}

/// How the regressor `X(i)` is formed from the input signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    /// `m` fresh input draws per iteration (white, independent regressors).
    #[default]
    Independent,
    /// Tapped delay line `[u(i), u(i−1), …, u(i−m+1)]`.
    TappedDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub true_weights: Vec<f64>,
    /// Distribution of the input samples.
    pub input: NoiseModel,
    pub noise: NoiseModel,
    pub algorithms: Vec<AlgorithmSpec>,
    pub iterations: usize,
    pub runs: usize,
    /// Run `r` draws its input from stream `2(stream + r)` and its noise
    /// from stream `2(stream + r) + 1` of `seed`.
    pub rng: RngSpec,
    pub steady_state_window: usize,
    #[serde(default)]
    pub regressor: Regressor,
    /// Also record the a priori error power `e_a²(i)`.
    #[serde(default)]
    pub record_emse: bool,
    /// Starting weights; the zero vector when absent.
    #[serde(default)]
    pub initial_weights: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.true_weights.len();
        if m == 0 {
            return Err(invalid("true_weights", "must not be empty"));
        }
        if self.true_weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("true_weights", "entries must be finite"));
        }
        if let Some(w) = &self.initial_weights {
            if w.len() != m {
                return Err(KrslError::LengthMismatch {
                    expected: m,
                    found: w.len(),
                });
            }
        }
        self.input.validate()?;
        self.noise.validate()?;
        if self.algorithms.is_empty() {
            return Err(invalid("algorithms", "roster must not be empty"));
        }
        for (k, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..k].iter().any(|b| b.label == a.label) {
                return Err(invalid("algorithms", format!("duplicate label `{}`", a.label)));
            }
            FilterState::new(m, a.algorithm, a.step_size)?;
        }
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if !(self.steady_state_window >= 1 && self.steady_state_window <= self.iterations) {
            return Err(invalid(
                "steady_state_window",
                format!(
                    "need 1 <= window <= iterations, got window {} with {} iterations",
                    self.steady_state_window, self.iterations
                ),
            ));
        }
        Ok(())
    }

    pub fn initial_weights(&self) -> Vec<f64> {
        self.initial_weights
            .clone()
            .unwrap_or_else(|| vec![0.0; self.true_weights.len()])
    }

    /// `‖W₀ − W(0)‖²`.
    pub fn initial_wep(&self) -> f64 {
        self.true_weights
            .iter()
            .zip(self.initial_weights())
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }

    fn streams(&self, run: usize) -> (ChaCha20Rng, ChaCha20Rng) {
        let base = 2 * (self.rng.stream + run as u64);
        (
            self.rng.with_stream(base).generator(),
            self.rng.with_stream(base + 1).generator(),
        )
    }
}

/// Mean and spread over runs of a trailing-window average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub mean: f64,
    /// Run-to-run standard deviation.
    pub std: f64,
    /// `std / √runs`.
    pub standard_error: f64,
}

impl SteadyState {
    fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(SteadyState {
            mean,
            std: var.sqrt(),
            standard_error: (var / n).sqrt(),
        })
    }
}

/// Averaged learning curves of one roster member.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub label: String,
    pub algorithm: Algorithm,
    pub step_size: f64,
    /// Mean `‖W₀ − W(i)‖²` for `i = 0..iterations`.
    pub wep: Vec<f64>,
    /// Mean `e_a²(i)` when requested.
    pub emse: Option<Vec<f64>>,
    /// `None` when every run diverged.
    pub steady_wep: Option<SteadyState>,
    pub steady_emse: Option<SteadyState>,
    pub runs_used: usize,
    pub runs_diverged: usize,
}

pub type ExperimentResult = IndexMap<String, ConvergenceRecord>;

struct RunTrace {
    wep: Vec<f64>,
    emse: Option<Vec<f64>>,
}

fn fill_regressor(
    config: &ExperimentConfig,
    rng: &mut ChaCha20Rng,
    x: &mut [f64],
    first: bool,
) {
    match config.regressor {
        Regressor::Independent => {
            for v in x.iter_mut() {
                *v = config.input.sample(rng);
            }
        }
        Regressor::TappedDelay => {
            if first {
                for v in x.iter_mut().rev() {
                    *v = config.input.sample(rng);
                }
            } else {
                x.rotate_right(1);
                x[0] = config.input.sample(rng);
            }
        }
    }
}

/// One run of every roster member; `None` marks a diverged filter.
fn simulate_run(config: &ExperimentConfig, run: usize) -> Result<Vec<Option<RunTrace>>> {
    let m = config.true_weights.len();
    let w0 = &config.true_weights;
    let (mut input_rng, mut noise_rng) = config.streams(run);
    let init = config.initial_weights();
    let mut filters: Vec<Option<FilterState>> = config
        .algorithms
        .iter()
        .map(|a| FilterState::with_weights(init.clone(), a.algorithm, a.step_size).map(Some))
        .collect::<Result<_>>()?;
    let mut traces: Vec<RunTrace> = filters
        .iter()
        .map(|_| RunTrace {
            wep: Vec::with_capacity(config.iterations),
            emse: config.record_emse.then(|| Vec::with_capacity(config.iterations)),
        })
        .collect();
    let mut x = vec![0.0; m];
    for i in 0..config.iterations {
        fill_regressor(config, &mut input_rng, &mut x, i == 0);
        let v = config.noise.sample(&mut noise_rng);
        let d = w0.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + v;
        for (slot, trace) in filters.iter_mut().zip(traces.iter_mut()) {
            let Some(f) = slot else { continue };
            let mut wep = 0.0;
            let mut ea = 0.0;
            for ((t, w), xj) in w0.iter().zip(f.weights()).zip(&x) {
                let diff = t - w;
                wep += diff * diff;
                ea += diff * xj;
            }
            trace.wep.push(wep);
            if let Some(e) = trace.emse.as_mut() {
                e.push(ea * ea);
            }
            match f.update(&x, d) {
                Ok(_) => {}
                Err(KrslError::Diverged | KrslError::NonFiniteSample) => *slot = None,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(filters
        .into_iter()
        .zip(traces)
        .map(|(f, t)| f.map(|_| t))
        .collect())
}

fn trailing_mean(curve: &[f64], window: usize) -> f64 {
    let tail = &curve[curve.len() - window..];
    tail.iter().sum::<f64>() / window as f64
}

/// Runs every roster member over `config.runs` independent runs.
pub fn run_experiment(config: &ExperimentConfig, parallelism: Parallelism) -> Result<ExperimentResult> {
    config.validate()?;
    let n_alg = config.algorithms.len();
    let iters = config.iterations;
    let window = config.steady_state_window;
    let mut wep_sum = vec![vec![0.0; iters]; n_alg];
    let mut emse_sum = vec![vec![0.0; iters]; if config.record_emse { n_alg } else { 0 }];
    let mut steady_wep: Vec<Vec<f64>> = vec![Vec::new(); n_alg];
    let mut steady_emse: Vec<Vec<f64>> = vec![Vec::new(); n_alg];
    let mut diverged = vec![0usize; n_alg];

    let mut start = 0;
    while start < config.runs {
        let len = RUN_CHUNK.min(config.runs - start);
        let chunk = parallelism.map_range(len, |k| simulate_run(config, start + k));
        for run in chunk {
            for (a, trace) in run?.into_iter().enumerate() {
                let Some(trace) = trace else {
                    diverged[a] += 1;
                    continue;
                };
                for (s, v) in wep_sum[a].iter_mut().zip(&trace.wep) {
                    *s += v;
                }
                steady_wep[a].push(trailing_mean(&trace.wep, window));
                if let Some(e) = &trace.emse {
                    for (s, v) in emse_sum[a].iter_mut().zip(e) {
                        *s += v;
                    }
                    steady_emse[a].push(trailing_mean(e, window));
                }
            }
        }
        start += len;
    }

    let mut out = IndexMap::with_capacity(n_alg);
    for (a, spec) in config.algorithms.iter().enumerate() {
        let used = config.runs - diverged[a];
        let scale = if used > 0 { 1.0 / used as f64 } else { f64::NAN };
        let average = |sum: &[f64]| -> Vec<f64> { sum.iter().map(|s| s * scale).collect() };
        let record = ConvergenceRecord {
            label: spec.label.clone(),
            algorithm: spec.algorithm,
            step_size: spec.step_size,
            wep: average(&wep_sum[a]),
            emse: config.record_emse.then(|| average(&emse_sum[a])),
            steady_wep: SteadyState::from_samples(&steady_wep[a]),
            steady_emse: SteadyState::from_samples(&steady_emse[a]),
            runs_used: used,
            runs_diverged: diverged[a],
        };
        out.insert(spec.label.clone(), record);
    }
    Ok(out)
}

/// Pointwise relative deviation of a curve from a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub max: f64,
    pub mean: f64,
    /// Index of the largest deviation.
    pub argmax: usize,
}

/// Relative deviation `|sim − ref| / ref` over indices `burn_in..`.
pub fn curve_deviation(sim: &[f64], reference: &[f64], burn_in: usize) -> Result<Deviation> {
    let n = sim.len().min(reference.len());
    if burn_in >= n {
        return Err(invalid("burn_in", format!("must be below the curve length {n}")));
    }
    let mut dev = Deviation {
        max: 0.0,
        mean: 0.0,
        argmax: burn_in,
    };
    for i in burn_in..n {
        let r = if sim[i] == reference[i] {
            0.0
        } else {
            (sim[i] - reference[i]).abs() / reference[i].abs()
        };
        dev.mean += r;
        if r > dev.max {
            dev.max = r;
            dev.argmax = i;
        }
    }
    dev.mean /= (n - burn_in) as f64;
    Ok(dev)
}

/// Simulation against the theoretical transient and steady state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryComparison {
    pub label: String,
    /// Predicted weight error power, aligned with the record's `wep`.
    pub theory_wep: Vec<f64>,
    pub deviation: Deviation,
    /// Predicted steady-state EMSE (`σx²·WEP` at the end of the predicted curve).
    pub theory_steady_emse: f64,
    /// Simulated steady-state EMSE, when recorded.
    pub simulated_steady_emse: Option<f64>,
}

/// Pairs a record with the white-input theory.
///
/// MKRSL records use the MKRSL recursion; LMS records use the classical LMS
/// recursion (`h_G = 1`, `h_U(x) = x + σv²`) as a sanity path.
pub fn compare_with_theory(
    record: &ConvergenceRecord,
    config: &ExperimentConfig,
    theory: &TheoryConfig,
    burn_in: usize,
) -> Result<TheoryComparison> {
    let mismatch = |what: &str| KrslError::Config(format!("theory pairing mismatch: {what}"));
    if config.regressor != Regressor::Independent {
        return Err(mismatch("theory assumes independent white regressors"));
    }
    if config.input != NoiseModel::gaussian(theory.input_variance) {
        return Err(mismatch("input must be Gaussian with the theory's input variance"));
    }
    if config.noise != theory.noise {
        return Err(mismatch("noise models differ"));
    }
    if config.true_weights.len() != theory.m {
        return Err(mismatch("filter length differs"));
    }
    if record.step_size != theory.eta {
        return Err(mismatch("step size differs"));
    }
    let n = record.wep.len();
    let initial = config.initial_wep();
    let theory_wep = match record.algorithm {
        Algorithm::Mkrsl { sigma, lambda } => {
            if sigma != theory.params.sigma() || lambda != theory.params.lambda() {
                return Err(mismatch("kernel parameters differ"));
            }
            let mut c = transient_curve(theory, n.saturating_sub(1), initial)?;
            c.truncate(n);
            c
        }
        Algorithm::Lms => {
            let nv = theory
                .noise
                .variance()
                .ok_or_else(|| mismatch("classical LMS recursion needs finite noise variance"))?;
            let (eta, sx2, m) = (theory.eta, theory.input_variance, theory.m as f64);
            let mut c = Vec::with_capacity(n);
            let mut w = initial;
            for _ in 0..n {
                c.push(w);
                w = w - 2.0 * eta * sx2 * w + eta * eta * sx2 * m * (sx2 * w + nv);
            }
            c
        }
        _ => return Err(mismatch("theory covers MKRSL and LMS only")),
    };
    let deviation = curve_deviation(&record.wep, &theory_wep, burn_in)?;
    let theory_steady_emse = theory.input_variance * theory_wep.last().copied().unwrap_or(initial);
    Ok(TheoryComparison {
        label: record.label.clone(),
        theory_wep,
        deviation,
        theory_steady_emse,
        simulated_steady_emse: record.steady_emse.map(|s| s.mean),
    })
}

/// Steady-state weight error power of each roster member at one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub probability: f64,
    pub outlier_variance: f64,
    pub steady_wep: IndexMap<String, Option<SteadyState>>,
    pub runs_diverged: IndexMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierSweep {
    pub probabilities: Vec<f64>,
    pub outlier_variances: Vec<f64>,
    /// Row-major over `(outlier_variance, probability)`.
    pub cells: Vec<SweepCell>,
}

impl OutlierSweep {
    pub fn cell(&self, variance_index: usize, probability_index: usize) -> &SweepCell {
        &self.cells[variance_index * self.probabilities.len() + probability_index]
    }

    /// Mean steady-state WEP of `label` at a grid cell.
    pub fn wep(&self, label: &str, variance_index: usize, probability_index: usize) -> Option<f64> {
        self.cell(variance_index, probability_index)
            .steady_wep
            .get(label)
            .copied()
            .flatten()
            .map(|s| s.mean)
    }

    /// Steps along the probability axis where the WEP of `label` drops by
    /// more than `slack` run-to-run standard deviations.
    pub fn decreases_in_probability(&self, label: &str, slack: f64) -> usize {
        self.count_drops(label, slack, |s, vi, pi| {
            (pi + 1 < s.probabilities.len()).then(|| (s.cell(vi, pi), s.cell(vi, pi + 1)))
        })
    }

    /// Steps along the variance axis where the WEP of `label` rises by more
    /// than `slack` run-to-run standard deviations.
    pub fn increases_in_variance(&self, label: &str, slack: f64) -> usize {
        self.count_drops(label, slack, |s, vi, pi| {
            (vi + 1 < s.outlier_variances.len()).then(|| (s.cell(vi + 1, pi), s.cell(vi, pi)))
        })
    }

    fn count_drops<'a, F>(&'a self, label: &str, slack: f64, pair: F) -> usize
    where
        F: Fn(&'a Self, usize, usize) -> Option<(&'a SweepCell, &'a SweepCell)>,
    {
        let mut count = 0;
        for vi in 0..self.outlier_variances.len() {
            for pi in 0..self.probabilities.len() {
                let Some((a, b)) = pair(self, vi, pi) else { continue };
                let (Some(Some(sa)), Some(Some(sb))) = (a.steady_wep.get(label), b.steady_wep.get(label)) else {
                    continue;
                };
                if sb.mean < sa.mean - slack * sa.std.max(sb.std) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Runs `base` at every `(σ_B², c)` grid cell by replacing the outlier
/// probability and the variance of a Gaussian outlier process.
///
/// Every cell reuses the base random streams.
pub fn outlier_robustness_sweep(
    base: &ExperimentConfig,
    outlier_variances: &[f64],
    probabilities: &[f64],
    parallelism: Parallelism,
) -> Result<OutlierSweep> {
    let NoiseModel::Mixture(mix) = &base.noise else {
        return Err(KrslError::Config("outlier sweep needs a mixture noise model".into()));
    };
    if !matches!(*mix.outlier, NoiseModel::Gaussian { .. }) {
        return Err(KrslError::Config("outlier sweep needs a Gaussian outlier process".into()));
    }
    if outlier_variances.is_empty() || probabilities.is_empty() {
        return Err(invalid("grid", "sweep grids must not be empty"));
    }
    let mut cells = Vec::with_capacity(outlier_variances.len() * probabilities.len());
    for &var in outlier_variances {
        for &c in probabilities {
            let mut cfg = base.clone();
            cfg.noise = NoiseModel::mixture(c, (*mix.inner).clone(), NoiseModel::gaussian(var));
            let res = run_experiment(&cfg, parallelism)?;
            cells.push(SweepCell {
                probability: c,
                outlier_variance: var,
                steady_wep: res.iter().map(|(k, r)| (k.clone(), r.steady_wep)).collect(),
                runs_diverged: res.iter().map(|(k, r)| (k.clone(), r.runs_diverged)).collect(),
            });
        }
    }
    Ok(OutlierSweep {
        probabilities: probabilities.to_vec(),
        outlier_variances: outlier_variances.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(noise: NoiseModel) -> ExperimentConfig {
        ExperimentConfig {
            true_weights: vec![0.5, -0.3, 0.2],
            input: NoiseModel::gaussian(1.0),
            noise,
            algorithms: vec![AlgorithmSpec::new("lms", Algorithm::Lms, 0.05)],
            iterations: 400,
            runs: 5,
            rng: RngSpec::new(1, 0),
            steady_state_window: 50,
            regressor: Regressor::Independent,
            record_emse: true,
            initial_weights: None,
        }
    }

    #[test]
    fn noiseless_lms_identifies_system() {
        let cfg = base(NoiseModel::Uniform { half_width: 1e-300 });
        let r = run_experiment(&cfg, Parallelism::Sequential).unwrap();
        let rec = &r["lms"];
        assert_eq!(rec.wep.len(), 400);
        assert!(*rec.wep.last().unwrap() < 1e-8);
        assert_eq!(rec.wep[0], 0.38);
    }

    #[test]
    fn validation() {
        let mut cfg = base(NoiseModel::gaussian(1.0));
        cfg.steady_state_window = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base(NoiseModel::gaussian(1.0));
        cfg.algorithms.push(cfg.algorithms[0].clone());
        assert!(cfg.validate().is_err());
        let mut cfg = base(NoiseModel::gaussian(1.0));
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_counted() {
        let mut cfg = base(NoiseModel::gaussian(1.0));
        cfg.algorithms.push(AlgorithmSpec::new("wild", Algorithm::Lmmn { delta: 0.0 }, 5.0));
        let r = run_experiment(&cfg, Parallelism::Sequential).unwrap();
        assert_eq!(r["wild"].runs_diverged, 5);
        assert!(r["wild"].steady_wep.is_none());
        assert_eq!(r["lms"].runs_diverged, 0);
    }

    #[test]
    fn self_comparison_is_zero() {
        let d = curve_deviation(&[1.0, 0.5, 0.25], &[1.0, 0.5, 0.25], 0).unwrap();
        assert_eq!(d.max, 0.0);
        assert_eq!(d.mean, 0.0);
    }

    #[test]
    fn tapped_delay_shifts() {
        let mut cfg = base(NoiseModel::gaussian(1.0));
        cfg.regressor = Regressor::TappedDelay;
        let mut rng = RngSpec::new(3, 0).generator();
        let mut x = vec![0.0; 3];
        fill_regressor(&cfg, &mut rng, &mut x, true);
        let before = x.clone();
        fill_regressor(&cfg, &mut rng, &mut x, false);
        assert_eq!(&x[1..], &before[..2]);
    }
}
