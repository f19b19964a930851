//! Batch MKRSL on a finite FIR regression data set.
//!
//! Provides the KRSL performance surface and its gradient, a fixed-point
//! (iteratively reweighted least squares) solver for the stationary point,
//! surface grids for plotting, and the scalar robustness bounds together
//! with a brute-force verifier.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, KrslError, Result};
use crate::noise::RngSpec;
use crate::par::Parallelism;
use crate::similarity::{kernel, KrslParams};

/// Largest condition number accepted for the weighted Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Rows `X(i)` and desired responses `d(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    inputs: DMatrix<f64>,
    desired: DVector<f64>,
}

impl RegressionDataset {
    pub fn new(inputs: DMatrix<f64>, desired: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(KrslError::EmptyData);
        }
        if inputs.nrows() != desired.len() {
            return Err(KrslError::LengthMismatch {
                expected: inputs.nrows(),
                found: desired.len(),
            });
        }
        if inputs.iter().chain(desired.iter()).any(|v| !v.is_finite()) {
            return Err(KrslError::NonFiniteSample);
        }
        Ok(RegressionDataset { inputs, desired })
    }

    /// Builds a data set from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], desired: &[f64]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(KrslError::LengthMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(rows.len(), m, &flat),
            DVector::from_column_slice(desired),
        )
    }

    /// Scalar (`m = 1`) data set.
    pub fn scalar(x: &[f64], d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(x.len(), 1, x), DVector::from_column_slice(d))
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn desired(&self) -> &DVector<f64> {
        &self.desired
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Residuals `d(i) − wᵀX(i)`.
    pub fn residuals(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.dim() {
            return Err(KrslError::LengthMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        Ok((0..self.len())
            .map(|i| {
                let row = self.inputs.row(i);
                self.desired[i] - row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }
}

/// KRSL performance surface `J(w) = (1/(Nλ)) Σ exp(λ(1 − κσ(d(i) − wᵀX(i))))`.
pub fn performance_surface(w: &[f64], data: &RegressionDataset, params: &KrslParams) -> Result<f64> {
    let e = data.residuals(w)?;
    crate::similarity::empirical_krsl_of_errors(&e, params)
}

/// Reweighting factor `h(e) = exp(λ(1 − κσ(e)))·κσ(e)`.
pub fn weight_h(e: f64, params: &KrslParams) -> f64 {
    params.risk_factor(e) * kernel(e, params.sigma())
}

/// Gradient `∂J/∂w = −(1/(Nσ²)) Σ h(e(i))·e(i)·X(i)`.
pub fn surface_gradient(w: &[f64], data: &RegressionDataset, params: &KrslParams) -> Result<Vec<f64>> {
    let e = data.residuals(w)?;
    let scale = -1.0 / (data.len() as f64 * params.sigma().powi(2));
    let mut g = vec![0.0; data.dim()];
    for (i, &ei) in e.iter().enumerate() {
        let c = weight_h(ei, params) * ei * scale;
        for (gj, xj) in g.iter_mut().zip(data.inputs.row(i).iter()) {
            *gj += c * xj;
        }
    }
    Ok(g)
}

/// Outcome of [`fixed_point_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted least-squares step `[Σ h X Xᵀ]⁻¹ [Σ h d X]` at `w`.
pub fn fixed_point_map(w: &[f64], data: &RegressionDataset, params: &KrslParams) -> Result<Vec<f64>> {
    let e = data.residuals(w)?;
    let m = data.dim();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (i, &ei) in e.iter().enumerate() {
        let h = weight_h(ei, params);
        let x = data.inputs.row(i).transpose();
        gram.ger(h, &x, &x, 1.0);
        rhs.axpy(h * data.desired[i], &x, 1.0);
    }
    solve_guarded(gram, rhs)
}

fn solve_guarded(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    let svd = gram.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(smax > 0.0) || condition > MAX_CONDITION {
        return Err(KrslError::RankDeficient { condition });
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| KrslError::NoSolution(e.to_string()))?;
    Ok(sol.iter().copied().collect())
}

/// Ordinary least-squares weights `[Σ X Xᵀ]⁻¹ [Σ d X]`, a common starting
/// point for [`fixed_point_solve`].
pub fn least_squares(data: &RegressionDataset) -> Result<Vec<f64>> {
    let gram = data.inputs.transpose() * &data.inputs;
    let rhs = data.inputs.transpose() * &data.desired;
    solve_guarded(gram, rhs)
}

/// Iterates the fixed-point map from `init` until the weight change is at
/// most `tol` or `max_iters` maps have been applied.
///
/// Non-convergence is reported through the flag, not as an error.
pub fn fixed_point_solve(
    data: &RegressionDataset,
    params: &KrslParams,
    init: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<FixedPointSolution> {
    fixed_point_solve_relaxed(data, params, init, 1.0, max_iters, tol)
}

/// Relaxed iteration `W ← W + α (T(W) − W)` with `0 < α ≤ 1`.
///
/// The plain map oscillates when large errors get more weight than small
/// ones (large `λ`); a relaxation around `1/(1 + |T'|)` restores
/// convergence there.
pub fn fixed_point_solve_relaxed(
    data: &RegressionDataset,
    params: &KrslParams,
    init: &[f64],
    relaxation: f64,
    max_iters: usize,
    tol: f64,
) -> Result<FixedPointSolution> {
    ensure_positive("tol", tol)?;
    if !(relaxation > 0.0 && relaxation <= 1.0) {
        return Err(invalid("relaxation", format!("must lie in (0, 1], got {relaxation}")));
    }
    if data.len() < data.dim() {
        return Err(invalid(
            "data",
            format!("need at least m = {} rows, got {}", data.dim(), data.len()),
        ));
    }
    let mut w = init.to_vec();
    data.residuals(&w)?;
    for k in 1..=max_iters {
        let mapped = fixed_point_map(&w, data, params)?;
        let mut step = 0.0;
        for (wi, ti) in w.iter_mut().zip(&mapped) {
            let delta = relaxation * (ti - *wi);
            *wi += delta;
            step += delta * delta;
        }
        if step.sqrt() <= tol {
            return Ok(FixedPointSolution {
                weights: w,
                iterations: k,
                converged: true,
            });
        }
    }
    Ok(FixedPointSolution {
        weights: w,
        iterations: max_iters,
        converged: false,
    })
}

/// Which surface a grid samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceCriterion {
    #[default]
    Krsl,
    /// `(1/N) Σ (1 − κσ(e(i)))`, which uses `σ` only.
    CLoss,
}

/// One grid axis: `steps` points evenly spaced over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        let axis = GridAxis { lo, hi, steps };
        axis.validate()?;
        Ok(axis)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(invalid("axis", format!("need finite lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.steps < 2 {
            return Err(invalid("steps", "an axis needs at least 2 points"));
        }
        Ok(())
    }

    fn point(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / (self.steps - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub w: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Surface values and gradients on a rectangular grid (row-major, last axis
/// fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub criterion: SurfaceCriterion,
    pub axes: Vec<GridAxis>,
    pub points: Vec<SurfacePoint>,
}

impl SurfaceGrid {
    /// Writes the grid as CSV: `w1[,w2],J,grad1[,grad2]` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.axes.len();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=m).map(|j| format!("w{j}")).collect();
        header.push("J".into());
        header.extend((1..=m).map(|j| format!("grad{j}")));
        let io = |e: csv::Error| KrslError::Config(format!("csv output failed: {e}"));
        wtr.write_record(&header).map_err(io)?;
        for p in &self.points {
            let rec: Vec<String> = p
                .w
                .iter()
                .chain(std::iter::once(&p.value))
                .chain(&p.gradient)
                .map(|&v| crate::format_float(v))
                .collect();
            wtr.write_record(&rec).map_err(io)?;
        }
        wtr.flush()
            .map_err(|e| KrslError::Config(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

fn c_loss_value_and_gradient(w: &[f64], data: &RegressionDataset, sigma: f64) -> Result<(f64, Vec<f64>)> {
    let e = data.residuals(w)?;
    let n = data.len() as f64;
    let mut value = 0.0;
    let mut g = vec![0.0; data.dim()];
    for (i, &ei) in e.iter().enumerate() {
        let k = kernel(ei, sigma);
        value += 1.0 - k;
        let c = -k * ei / (n * sigma * sigma);
        for (gj, xj) in g.iter_mut().zip(data.inputs.row(i).iter()) {
            *gj += c * xj;
        }
    }
    Ok((value / n, g))
}

/// Evaluates the chosen surface and its analytical gradient on a grid.
pub fn surface_grid(
    data: &RegressionDataset,
    params: &KrslParams,
    criterion: SurfaceCriterion,
    axes: &[GridAxis],
    parallelism: Parallelism,
) -> Result<SurfaceGrid> {
    let m = data.dim();
    if !(1..=2).contains(&m) {
        return Err(KrslError::UnsupportedDimension(m));
    }
    if axes.len() != m {
        return Err(KrslError::LengthMismatch {
            expected: m,
            found: axes.len(),
        });
    }
    for a in axes {
        a.validate()?;
    }
    let total: usize = axes.iter().map(|a| a.steps).product();
    let points = parallelism.map_range(total, |idx| {
        let mut w = vec![0.0; m];
        let mut rest = idx;
        for j in (0..m).rev() {
            w[j] = axes[j].point(rest % axes[j].steps);
            rest /= axes[j].steps;
        }
        let (value, gradient) = match criterion {
            SurfaceCriterion::Krsl => (
                performance_surface(&w, data, params)?,
                surface_gradient(&w, data, params)?,
            ),
            SurfaceCriterion::CLoss => c_loss_value_and_gradient(&w, data, params.sigma())?,
        };
        Ok(SurfacePoint { w, value, gradient })
    });
    Ok(SurfaceGrid {
        criterion,
        axes: axes.to_vec(),
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

/// Scalar robustness scenario: `n` samples of which `inliers` have noise
/// bounded by `epsilon_v` and inputs of magnitude at least `min_input`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessScenario {
    pub n: usize,
    pub inliers: usize,
    pub epsilon_v: f64,
    pub min_input: f64,
    pub params: KrslParams,
}

impl RobustnessScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.n > self.inliers && 2 * self.inliers > self.n) {
            return Err(KrslError::InapplicableRegime(format!(
                "need N > M > N/2, got N = {}, M = {}",
                self.n, self.inliers
            )));
        }
        ensure_positive("epsilon_v", self.epsilon_v)?;
        ensure_positive("min_input", self.min_input)
    }

    /// Outlier-to-inlier ratio `(N − M)/M`.
    fn ratio(&self) -> f64 {
        (self.n - self.inliers) as f64 / self.inliers as f64
    }

    /// `t = −(1/λ) ln(1 − r(1 − e^{−λ}))`, which lies in (0, 1) under the
    /// counting assumption.
    fn threshold_log_arg(&self) -> Result<f64> {
        let lambda = self.params.lambda();
        let t = -(-self.ratio() * -(-lambda).exp_m1()).ln_1p() / lambda;
        if t > 0.0 && t < 1.0 {
            Ok(t)
        } else {
            Err(KrslError::InapplicableRegime(format!(
                "threshold argument {t} outside (0, 1)"
            )))
        }
    }

    /// `u = −(1/λ) ln(exp(−λκσ(ε_v)) + r(1 − e^{−λ}))`.
    fn bound_log_arg(&self) -> Result<f64> {
        let lambda = self.params.lambda();
        let k_eps = kernel(self.epsilon_v, self.params.sigma());
        let inner = (-lambda * k_eps).exp() + self.ratio() * -(-lambda).exp_m1();
        let u = -inner.ln() / lambda;
        if u > 0.0 && u < 1.0 {
            Ok(u)
        } else {
            Err(KrslError::InapplicableRegime(format!(
                "sigma = {} does not exceed the threshold {}",
                self.params.sigma(),
                sigma_condition(self).unwrap_or(f64::NAN)
            )))
        }
    }
}

/// Kernel bandwidth above which the scalar bound applies.
pub fn sigma_condition(scenario: &RobustnessScenario) -> Result<f64> {
    scenario.validate()?;
    let t = scenario.threshold_log_arg()?;
    Ok(scenario.epsilon_v / (-2.0 * t.ln()).sqrt())
}

/// Bound `ξ` on `|W* − W₀|` for the global minimizer `W*` of the scalar surface.
pub fn robustness_bound_xi(scenario: &RobustnessScenario) -> Result<f64> {
    scenario.validate()?;
    let sigma = scenario.params.sigma();
    let u = scenario.bound_log_arg()?;
    Ok(((-2.0 * sigma * sigma * u.ln()).sqrt() + scenario.epsilon_v) / scenario.min_input)
}

/// Ratio `ρ` with `|W* − W₀| ≤ ρ·ε_v`, computed through
/// `β = σ / sigma_condition`.
pub fn robustness_bound_rho(scenario: &RobustnessScenario) -> Result<f64> {
    let threshold = sigma_condition(scenario)?;
    let beta = scenario.params.sigma() / threshold;
    if beta <= 1.0 {
        return Err(KrslError::InapplicableRegime(format!(
            "sigma = {} does not exceed the threshold {threshold}",
            scenario.params.sigma()
        )));
    }
    let lambda = scenario.params.lambda();
    let t = scenario.threshold_log_arg()?;
    let k_eps = t.powf(1.0 / (beta * beta));
    let u = -((-lambda * k_eps).exp() + scenario.ratio() * -(-lambda).exp_m1()).ln() / lambda;
    if !(u > 0.0 && u < 1.0) {
        return Err(KrslError::InapplicableRegime(format!("bound argument {u} outside (0, 1)")));
    }
    Ok((beta * (u.ln() / t.ln()).sqrt() + 1.0) / scenario.min_input)
}

/// Global minimizer of a scalar surface by dense search.
///
/// This is a verification aid: `grid_points` evenly spaced points over
/// `[lo, hi]` plus the zero-residual points `d(i)/x(i)` are scanned and the
/// best few are polished by golden-section search.
pub fn brute_force_scalar_minimizer(
    data: &RegressionDataset,
    params: &KrslParams,
    lo: f64,
    hi: f64,
    grid_points: usize,
) -> Result<f64> {
    if data.dim() != 1 {
        return Err(KrslError::UnsupportedDimension(data.dim()));
    }
    if !(lo < hi) || grid_points < 2 {
        return Err(invalid("grid", "need lo < hi and at least 2 points"));
    }
    let x: Vec<f64> = data.inputs.column(0).iter().copied().collect();
    let d: Vec<f64> = data.desired.iter().copied().collect();
    // Scalar J up to the constant factor 1/(Nλ).
    let j = |w: f64| -> f64 {
        x.iter()
            .zip(&d)
            .map(|(xi, di)| params.risk_factor(di - w * xi))
            .sum()
    };
    let step = (hi - lo) / (grid_points - 1) as f64;
    let mut candidates: Vec<(f64, f64, f64)> = (0..grid_points)
        .map(|k| {
            let w = lo + step * k as f64;
            (w, step, j(w))
        })
        .collect();
    for (xi, di) in x.iter().zip(&d) {
        if *xi != 0.0 {
            let w = di / xi;
            let width = params.sigma() / xi.abs();
            candidates.push((w, width, j(w)));
        }
    }
    candidates.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut best = (candidates[0].0, candidates[0].2);
    for &(w, width, _) in candidates.iter().take(8) {
        let polished = golden_section(&j, w - width, w + width, 1e-13);
        let v = j(polished);
        if v < best.1 {
            best = (polished, v);
        }
    }
    Ok(best.0)
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// One randomly drawn scalar instance satisfying the bound's assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessInstance {
    pub scenario: RobustnessScenario,
    pub true_weight: f64,
    pub data: RegressionDataset,
}

/// Draws a scalar instance: `M` inliers with `|v| ≤ ε_v` and `|x| ≥ c`, and
/// `N − M` outliers of magnitude up to `max_outlier`.
pub fn random_robustness_instance(spec: RngSpec, max_outlier: f64) -> Result<RobustnessInstance> {
    ensure_positive("max_outlier", max_outlier)?;
    let mut rng = spec.generator();
    let n = rng.random_range(3..=40usize);
    let inliers = rng.random_range(n / 2 + 1..n);
    let epsilon_v = 10f64.powf(rng.random_range(-2.0..0.0));
    let min_input = rng.random_range(0.1..2.0);
    let lambda = 10f64.powf(rng.random_range(-1.0..1.5));
    let sigma0 = {
        let probe = RobustnessScenario {
            n,
            inliers,
            epsilon_v,
            min_input,
            params: KrslParams::new(1.0, lambda)?,
        };
        sigma_condition(&probe)?
    };
    let sigma = sigma0 * rng.random_range(1.05..4.0);
    let scenario = RobustnessScenario {
        n,
        inliers,
        epsilon_v,
        min_input,
        params: KrslParams::new(sigma, lambda)?,
    };
    let true_weight = rng.random_range(-5.0..5.0);
    let mut x = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (xi, vi) = if i < inliers {
            let xi = sign * (min_input + rng.random_range(0.0..3.0));
            (xi, rng.random_range(-epsilon_v..=epsilon_v))
        } else {
            let xi = rng.random_range(-5.0..5.0);
            let mag = 10f64.powf(rng.random_range(-1.0..max_outlier.log10().max(0.0)));
            let vsign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (xi, vsign * mag)
        };
        x.push(xi);
        d.push(true_weight * xi + vi);
    }
    Ok(RobustnessInstance {
        scenario,
        true_weight,
        data: RegressionDataset::scalar(&x, &d)?,
    })
}

/// Summary of a randomized bound-validation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub instances: usize,
    /// Instances whose global minimizer lies farther than `ξ` from `W₀`.
    pub violations: usize,
    /// Instances where `ξ > ρ·ε_v` beyond rounding.
    pub inconsistent_bounds: usize,
    /// Largest `|W* − W₀| / ξ` observed.
    pub max_error_ratio: f64,
}

/// Checks the scalar bound on `instances` random instances; instance `k`
/// uses stream `k` of `seed`.
pub fn robustness_sweep(
    instances: usize,
    seed: u64,
    max_outlier: f64,
    parallelism: Parallelism,
) -> Result<RobustnessReport> {
    let rows = parallelism.map_range(instances, |k| -> Result<(f64, bool)> {
        let inst = random_robustness_instance(RngSpec::new(seed, k as u64), max_outlier)?;
        let xi = robustness_bound_xi(&inst.scenario)?;
        let rho = robustness_bound_rho(&inst.scenario)?;
        let w0 = inst.true_weight;
        let w = brute_force_scalar_minimizer(&inst.data, &inst.scenario.params, w0 - 10.0 * xi, w0 + 10.0 * xi, 100_000)?;
        let consistent = xi <= rho * inst.scenario.epsilon_v * (1.0 + 1e-9);
        Ok(((w - w0).abs() / xi, consistent))
    });
    let mut report = RobustnessReport {
        instances,
        violations: 0,
        inconsistent_bounds: 0,
        max_error_ratio: 0.0,
    };
    for r in rows {
        let (ratio, consistent) = r?;
        if ratio > 1.0 {
            report.violations += 1;
        }
        if !consistent {
            report.inconsistent_bounds += 1;
        }
        report.max_error_ratio = report.max_error_ratio.max(ratio);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(sigma: f64, lambda: f64) -> KrslParams {
        KrslParams::new(sigma, lambda).unwrap()
    }

    fn toy() -> RegressionDataset {
        RegressionDataset::from_rows(
            &[vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, -1.1], vec![1.5, 0.2]],
            &[1.2, -0.4, 2.5, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn noiseless_minimum_is_inverse_lambda() {
        let rows = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.1]];
        let d: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1]).collect();
        let data = RegressionDataset::from_rows(&rows, &d).unwrap();
        assert_relative_eq!(performance_surface(&[2.0, -1.0], &data, &p(1.0, 4.0)).unwrap(), 0.25);
        let sol = fixed_point_solve(&data, &p(1.0, 4.0), &[0.0, 0.0], 500, 1e-10).unwrap();
        assert!(sol.converged);
        assert_relative_eq!(sol.weights[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(sol.weights[1], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn weight_h_examples() {
        assert_eq!(weight_h(0.0, &p(1.0, 3.0)), 1.0);
        assert_relative_eq!(weight_h(1.0, &p(1.0, 1.0)), 0.8989474862671123, max_relative = 1e-14);
        assert!((weight_h(3.7, &p(1e9, 2.0)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_detected() {
        let data = RegressionDataset::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, -2.0]], &[1.0, 0.0, 2.0]).unwrap();
        let err = fixed_point_solve(&data, &p(1.0, 1.0), &[0.0, 0.0], 10, 1e-10).unwrap_err();
        assert!(matches!(err, KrslError::RankDeficient { .. }));
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let data = toy();
        let params = p(2.0, 1.5);
        let sol = fixed_point_solve(&data, &params, &[0.0, 0.0], 500, 1e-12).unwrap();
        assert!(sol.converged);
        let g = surface_gradient(&sol.weights, &data, &params).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
    }

    #[test]
    fn grid_rejects_high_dimension() {
        let data = RegressionDataset::from_rows(&[vec![1.0, 0.0, 0.0]], &[1.0]).unwrap();
        let axes = [GridAxis::new(0.0, 1.0, 2).unwrap(); 3];
        assert_eq!(
            surface_grid(&data, &p(1.0, 1.0), SurfaceCriterion::Krsl, &axes, Parallelism::Sequential).unwrap_err(),
            KrslError::UnsupportedDimension(3)
        );
    }

    #[test]
    fn grid_csv_shape() {
        let data = toy();
        let axes = [GridAxis::new(-1.0, 1.0, 3).unwrap(), GridAxis::new(0.0, 2.0, 4).unwrap()];
        let grid = surface_grid(&data, &p(1.0, 2.0), SurfaceCriterion::Krsl, &axes, Parallelism::Parallel).unwrap();
        assert_eq!(grid.points.len(), 12);
        assert_eq!(grid.points[1].w, vec![-1.0, 2.0 / 3.0]);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "w1,w2,J,grad1,grad2");
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn sigma_condition_formula() {
        // Direct form: ε / sqrt(−2 ln(1 − ln(e^λ − r(e^λ − 1))/λ)).
        let s = RobustnessScenario { n: 10, inliers: 8, epsilon_v: 0.1, min_input: 1.0, params: p(1.0, 5.0) };
        let r: f64 = 2.0 / 8.0;
        let el = 5f64.exp();
        let direct = 0.1 / (-2.0 * (1.0 - (el - r * (el - 1.0)).ln() / 5.0).ln()).sqrt();
        assert_relative_eq!(sigma_condition(&s).unwrap(), direct, max_relative = 1e-12);
        assert_relative_eq!(sigma_condition(&s).unwrap(), 0.04178897526380329, max_relative = 1e-12);
    }

    #[test]
    fn bounds_agree() {
        let s = RobustnessScenario { n: 20, inliers: 15, epsilon_v: 0.05, min_input: 0.5, params: p(2.0, 8.0) };
        let xi = robustness_bound_xi(&s).unwrap();
        let rho = robustness_bound_rho(&s).unwrap();
        assert_relative_eq!(xi, rho * 0.05, max_relative = 1e-10);
        assert!(xi > 0.05 / 0.5);
    }

    #[test]
    fn scenario_assumptions() {
        let mut s = RobustnessScenario { n: 10, inliers: 10, epsilon_v: 0.1, min_input: 1.0, params: p(1.0, 5.0) };
        assert!(matches!(sigma_condition(&s), Err(KrslError::InapplicableRegime(_))));
        s.inliers = 5;
        assert!(robustness_bound_rho(&s).is_err());
        s.inliers = 8;
        s.params = p(0.01, 5.0);
        assert!(matches!(robustness_bound_xi(&s), Err(KrslError::InapplicableRegime(_))));
    }
}
