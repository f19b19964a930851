//! The four subcommands. Each writes its data files into the output
//! directory and returns the inventory for the manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use krsl::batch_solver::{
    fixed_point_solve_relaxed, least_squares, performance_surface, robustness_bound_rho, robustness_bound_xi, robustness_sweep,
    sigma_condition, surface_gradient, surface_grid, RegressionDataset, SurfaceCriterion,
};
use krsl::filters::Algorithm;
use krsl::harness::{compare_with_theory, outlier_robustness_sweep, run_experiment, ExperimentConfig};
use krsl::theory::{
    steady_state_emse_exact, steady_state_emse_taylor, taylor_terms, transient_curve, TheoryConfig,
};
use krsl::{format_float, KrslError, KrslParams, NoiseModel, Parallelism};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{
    load, BoundsFile, ConfigError, RunFile, SteadyMethod, SurfaceFile, TheoryFile, TheoryPairing,
};

/// Flag overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
}

/// Files written so far, with their SHA-256 digests.
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<(String, String)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory `{}`", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("cannot write `{}`", path.display()))?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Outcome of a command: config bytes for the manifest.
pub struct Completed {
    pub config_bytes: Vec<u8>,
}

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn reject_override(flag: &str, command: &str) -> anyhow::Error {
    config_err(format!("`{flag}` does not apply to `{command}`"))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(&r)?;
    }
    wtr.into_inner().map_err(|e| anyhow::anyhow!("csv output failed: {e}"))
}

fn ci95(s: &krsl::harness::SteadyState) -> Value {
    json!({
        "mean": s.mean,
        "std": s.std,
        "standard_error": s.standard_error,
        "ci95": [s.mean - 1.96 * s.standard_error, s.mean + 1.96 * s.standard_error],
    })
}

/// Theory operating point matching one roster member.
fn pairing_theory(exp: &ExperimentConfig, pairing: &TheoryPairing) -> Result<TheoryConfig, ConfigError> {
    let spec = exp
        .algorithms
        .iter()
        .find(|a| a.label == pairing.label)
        .ok_or_else(|| ConfigError(format!("theory pairing names unknown label `{}`", pairing.label)))?;
    let NoiseModel::Gaussian { variance } = exp.input else {
        return Err(ConfigError("theory pairing needs Gaussian input".into()));
    };
    let params = match spec.algorithm {
        Algorithm::Mkrsl { sigma, lambda } => KrslParams::new(sigma, lambda).map_err(|e| ConfigError(e.to_string()))?,
        // Unused by the classical LMS recursion.
        Algorithm::Lms => KrslParams::new(1.0, 1.0).map_err(|e| ConfigError(e.to_string()))?,
        _ => {
            return Err(ConfigError(format!(
                "theory pairing supports MKRSL and LMS, `{}` is {}",
                spec.label,
                spec.algorithm.name()
            )))
        }
    };
    TheoryConfig::new(params, spec.step_size, exp.true_weights.len(), variance, exp.noise.clone())
        .map_err(|e| ConfigError(e.to_string()))
}

pub fn cmd_run(path: &Path, out: &mut Outputs, ov: &Overrides, parallelism: Parallelism) -> Result<Completed> {
    let loaded = load::<RunFile>(path)?;
    let mut file = loaded.config;
    if let Some(r) = ov.runs {
        file.experiment.runs = r;
    }
    if let Some(s) = ov.seed {
        file.experiment.rng.seed = s;
    }
    let exp = &file.experiment;
    exp.validate().map_err(config_err)?;
    let theories = file
        .theory
        .iter()
        .map(|p| pairing_theory(exp, p))
        .collect::<Result<Vec<_>, _>>()?;

    if let Some(sweep) = &file.sweep {
        if !file.theory.is_empty() {
            return Err(config_err("`sweep` and `theory` cannot be combined"));
        }
        let res = outlier_robustness_sweep(exp, &sweep.outlier_variances, &sweep.probabilities, parallelism)?;
        let labels: Vec<&String> = exp.algorithms.iter().map(|a| &a.label).collect();
        let mut header = vec!["outlier_variance".to_string(), "probability".to_string()];
        for l in &labels {
            header.push(format!("{l}_steady_wep"));
            header.push(format!("{l}_steady_wep_std"));
            header.push(format!("{l}_runs_diverged"));
        }
        let rows = res.cells.iter().map(|c| {
            let mut row = vec![format_float(c.outlier_variance), format_float(c.probability)];
            for l in &labels {
                match c.steady_wep[*l] {
                    Some(s) => {
                        row.push(format_float(s.mean));
                        row.push(format_float(s.std));
                    }
                    None => {
                        row.push("NaN".into());
                        row.push("NaN".into());
                    }
                }
                row.push(c.runs_diverged[*l].to_string());
            }
            row
        });
        out.write("sweep.csv", &csv_bytes(&header, rows)?)?;
        out.write_json("summary.json", &serde_json::to_value(&res)?)?;
        return Ok(Completed {
            config_bytes: loaded.bytes,
        });
    }

    let records = run_experiment(exp, parallelism)?;
    let mut comparisons = Vec::new();
    let mut theory_json = serde_json::Map::new();
    for (pairing, theory) in file.theory.iter().zip(&theories) {
        let record = &records[&pairing.label];
        let mut entry = serde_json::Map::new();
        if pairing.transient {
            let cmp = compare_with_theory(record, exp, theory, pairing.burn_in)?;
            entry.insert("burn_in".into(), json!(pairing.burn_in));
            entry.insert("deviation".into(), serde_json::to_value(cmp.deviation)?);
            entry.insert("transient_end_emse".into(), json!(cmp.theory_steady_emse));
            comparisons.push((pairing.label.clone(), cmp.theory_wep));
        }
        match record.algorithm {
            Algorithm::Lms => {
                let nv = theory.noise.variance().ok_or_else(|| {
                    KrslError::InapplicableRegime("classical LMS steady state needs finite noise variance".into())
                })?;
                let tr = theory.eta * theory.trace_r();
                entry.insert("steady_emse_classical".into(), json!(tr * nv / (2.0 - tr)));
            }
            _ => {
                entry.insert("steady_emse_taylor".into(), json!(steady_state_emse_taylor(theory)?));
                entry.insert("steady_emse_exact".into(), json!(steady_state_emse_exact(theory)?));
            }
        }
        theory_json.insert(pairing.label.clone(), Value::Object(entry));
    }

    let mut header = vec!["iteration".to_string()];
    let mut columns: Vec<&[f64]> = Vec::new();
    for (label, rec) in &records {
        header.push(format!("{label}_wep"));
        columns.push(&rec.wep);
        if let Some(e) = &rec.emse {
            header.push(format!("{label}_emse"));
            columns.push(e);
        }
    }
    for (label, curve) in &comparisons {
        header.push(format!("{label}_theory_wep"));
        columns.push(curve);
    }
    let rows = (0..exp.iterations).map(|i| {
        let mut row = vec![i.to_string()];
        row.extend(columns.iter().map(|c| c.get(i).map_or_else(|| "NaN".into(), |&v| format_float(v))));
        row
    });
    out.write("curves.csv", &csv_bytes(&header, rows)?)?;

    let mut rec_json = serde_json::Map::new();
    for (label, rec) in &records {
        rec_json.insert(
            label.clone(),
            json!({
                "algorithm": rec.algorithm,
                "step_size": rec.step_size,
                "runs_used": rec.runs_used,
                "runs_diverged": rec.runs_diverged,
                "steady_wep": rec.steady_wep.as_ref().map(ci95),
                "steady_emse": rec.steady_emse.as_ref().map(ci95),
            }),
        );
    }
    let summary = json!({
        "description": file.description,
        "runs": exp.runs,
        "iterations": exp.iterations,
        "steady_state_window": exp.steady_state_window,
        "seed": exp.rng.seed,
        "records": rec_json,
        "theory": theory_json,
    });
    out.write_json("summary.json", &summary)?;
    Ok(Completed {
        config_bytes: loaded.bytes,
    })
}

pub fn cmd_theory(path: &Path, out: &mut Outputs, ov: &Overrides) -> Result<Completed> {
    if ov.runs.is_some() {
        return Err(reject_override("--runs", "theory"));
    }
    if ov.seed.is_some() {
        return Err(reject_override("--seed", "theory"));
    }
    let loaded = load::<TheoryFile>(path)?;
    let file = loaded.config;
    let cfg = &file.theory;
    cfg.validate().map_err(config_err)?;
    let mut result = serde_json::Map::new();
    result.insert("description".into(), json!(file.description));
    result.insert("trace_r".into(), json!(cfg.trace_r()));
    if file.steady_state.contains(&SteadyMethod::Taylor) {
        result.insert("taylor_terms".into(), serde_json::to_value(taylor_terms(cfg)?)?);
        result.insert("steady_emse_taylor".into(), json!(steady_state_emse_taylor(cfg)?));
    }
    if file.steady_state.contains(&SteadyMethod::Exact) {
        result.insert("steady_emse_exact".into(), json!(steady_state_emse_exact(cfg)?));
    }
    if let Some(t) = &file.transient {
        let curve = transient_curve(cfg, t.iterations, t.initial_wep)?;
        let header = vec!["iteration".to_string(), "theory_wep".to_string()];
        let rows = curve
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), format_float(*v)]);
        out.write("transient.csv", &csv_bytes(&header, rows)?)?;
        result.insert("transient_final_wep".into(), json!(curve.last()));
    }
    out.write_json("theory.json", &Value::Object(result))?;
    Ok(Completed {
        config_bytes: loaded.bytes,
    })
}

fn surface_data(file: &SurfaceFile) -> Result<RegressionDataset> {
    let m = file.true_weights.len();
    let mut input = file.rng.generator();
    let mut noise = file.rng.with_stream(file.rng.stream + 1).generator();
    let mut rows = Vec::with_capacity(file.samples);
    let mut d = Vec::with_capacity(file.samples);
    for _ in 0..file.samples {
        let x: Vec<f64> = (0..m).map(|_| file.input.sample(&mut input)).collect();
        let v = file.noise.sample(&mut noise);
        d.push(x.iter().zip(&file.true_weights).map(|(a, b)| a * b).sum::<f64>() + v);
        rows.push(x);
    }
    Ok(RegressionDataset::from_rows(&rows, &d)?)
}

pub fn cmd_surface(path: &Path, out: &mut Outputs, ov: &Overrides, parallelism: Parallelism) -> Result<Completed> {
    if ov.runs.is_some() {
        return Err(reject_override("--runs", "surface"));
    }
    let loaded = load::<SurfaceFile>(path)?;
    let mut file = loaded.config;
    if let Some(s) = ov.seed {
        file.rng.seed = s;
    }
    let m = file.true_weights.len();
    if !(1..=2).contains(&m) {
        return Err(config_err(KrslError::UnsupportedDimension(m)));
    }
    if file.axes.len() != m {
        return Err(config_err(format!("need {m} axes for m = {m}, got {}", file.axes.len())));
    }
    if file.samples < m {
        return Err(config_err(format!("need at least {m} samples")));
    }
    file.input.validate().map_err(config_err)?;
    file.noise.validate().map_err(config_err)?;
    for a in &file.axes {
        krsl::batch_solver::GridAxis::new(a.lo, a.hi, a.steps).map_err(config_err)?;
    }
    let data = surface_data(&file)?;
    for criterion in &file.criteria {
        let grid = surface_grid(&data, &file.params, *criterion, &file.axes, parallelism)?;
        let mut buf = Vec::new();
        grid.write_csv(&mut buf)?;
        let name = match criterion {
            SurfaceCriterion::Krsl => "surface_krsl.csv",
            SurfaceCriterion::CLoss => "surface_c_loss.csv",
        };
        out.write(name, &buf)?;
    }
    let start = least_squares(&data)?;
    let sol = fixed_point_solve_relaxed(&data, &file.params, &start, file.relaxation, 2000, 1e-10)?;
    let grad = surface_gradient(&sol.weights, &data, &file.params)?;
    let summary = json!({
        "description": file.description,
        "samples": file.samples,
        "least_squares": start,
        "fixed_point": {
            "relaxation": file.relaxation,
            "weights": sol.weights,
            "iterations": sol.iterations,
            "converged": sol.converged,
            "gradient_norm": grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            "surface_value": performance_surface(&sol.weights, &data, &file.params)?,
        },
        "surface_value_at_true_weights": performance_surface(&file.true_weights, &data, &file.params)?,
    });
    out.write_json("summary.json", &summary)?;
    Ok(Completed {
        config_bytes: loaded.bytes,
    })
}

pub fn cmd_bounds(path: &Path, out: &mut Outputs, ov: &Overrides, parallelism: Parallelism) -> Result<Completed> {
    if ov.runs.is_some() {
        return Err(reject_override("--runs", "bounds"));
    }
    let loaded = load::<BoundsFile>(path)?;
    let mut file = loaded.config;
    if let Some(s) = ov.seed {
        match file.sweep.as_mut() {
            Some(sw) => sw.seed = s,
            None => return Err(config_err("`--seed` needs a `sweep` section")),
        }
    }
    if file.scenarios.is_empty() && file.sweep.is_none() {
        return Err(config_err("nothing to do: give `scenarios` and/or `sweep`"));
    }
    let mut scenarios = Vec::new();
    for s in &file.scenarios {
        let threshold = sigma_condition(s)?;
        let xi = robustness_bound_xi(s)?;
        let rho = robustness_bound_rho(s)?;
        scenarios.push(json!({
            "scenario": s,
            "sigma_condition": threshold,
            "xi": xi,
            "rho": rho,
            "rho_epsilon": rho * s.epsilon_v,
        }));
    }
    let sweep = match &file.sweep {
        Some(sw) => Some(robustness_sweep(sw.instances, sw.seed, sw.max_outlier, parallelism)?),
        None => None,
    };
    let report = json!({
        "description": file.description,
        "scenarios": scenarios,
        "sweep": sweep,
    });
    out.write_json("bounds.json", &report)?;
    Ok(Completed {
        config_bytes: loaded.bytes,
    })
}

