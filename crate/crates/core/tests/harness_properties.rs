//! Monte Carlo harness: replay, roster isolation, run-count scaling,
//! scheduling independence and agreement with the theory module.

use krsl::filters::Algorithm;
use krsl::harness::{
    compare_with_theory, curve_deviation, outlier_robustness_sweep, run_experiment, AlgorithmSpec, ExperimentConfig,
    Regressor,
};
use krsl::theory::{steady_state_emse_taylor, TheoryConfig};
use krsl::{KrslParams, NoiseModel, Parallelism, RngSpec};

fn small(noise: NoiseModel, algorithms: Vec<AlgorithmSpec>) -> ExperimentConfig {
    ExperimentConfig {
        true_weights: vec![0.3, -0.2, 0.5, 0.1],
        input: NoiseModel::gaussian(1.0),
        noise,
        algorithms,
        iterations: 1500,
        runs: 40,
        rng: RngSpec::new(7, 0),
        steady_state_window: 300,
        regressor: Regressor::Independent,
        record_emse: true,
        initial_weights: None,
    }
}

fn mkrsl(eta: f64) -> AlgorithmSpec {
    AlgorithmSpec::new("mkrsl", Algorithm::Mkrsl { sigma: 1.0, lambda: 3.0 }, eta)
}

#[test]
fn replay_is_bit_identical() {
    let cfg = small(NoiseModel::gaussian(0.5), vec![mkrsl(0.01)]);
    let a = run_experiment(&cfg, Parallelism::Parallel).unwrap();
    let b = run_experiment(&cfg, Parallelism::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scheduling_does_not_change_results() {
    let mut cfg = small(
        NoiseModel::mixture(0.1, NoiseModel::gaussian(0.5), NoiseModel::gaussian(20.0)),
        vec![mkrsl(0.01), AlgorithmSpec::new("lms", Algorithm::Lms, 0.01)],
    );
    cfg.regressor = Regressor::TappedDelay;
    let a = run_experiment(&cfg, Parallelism::Parallel).unwrap();
    let b = run_experiment(&cfg, Parallelism::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn roster_members_do_not_interact() {
    let noise = NoiseModel::mixture(0.06, NoiseModel::gaussian(1.0), NoiseModel::gaussian(15.0));
    let alone = run_experiment(&small(noise.clone(), vec![mkrsl(0.01)]), Parallelism::Parallel).unwrap();
    let crowd = run_experiment(
        &small(
            noise,
            vec![
                AlgorithmSpec::new("sa", Algorithm::Sa, 0.002),
                mkrsl(0.01),
                AlgorithmSpec::new("lmm", Algorithm::Lmm { threshold: 2.0 }, 0.01),
            ],
        ),
        Parallelism::Parallel,
    )
    .unwrap();
    assert_eq!(alone["mkrsl"], crowd["mkrsl"]);
    assert_eq!(crowd.keys().collect::<Vec<_>>(), ["sa", "mkrsl", "lmm"]);
}

#[test]
fn replicate_spread_shrinks_with_more_runs() {
    // Spread of the steady-state estimate across independent replicates.
    let spread = |runs: usize| {
        let means: Vec<f64> = (0..12)
            .map(|k| {
                let mut cfg = small(NoiseModel::gaussian(1.0), vec![mkrsl(0.02)]);
                cfg.runs = runs;
                cfg.iterations = 800;
                cfg.rng = RngSpec::new(1000 + k, 0);
                run_experiment(&cfg, Parallelism::Parallel).unwrap()["mkrsl"].steady_wep.unwrap().mean
            })
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
    };
    let ratio = spread(10) / spread(40);
    assert!((1.0..=3.0).contains(&ratio), "quadrupling runs shrank the spread by {ratio}");
}

#[test]
fn lms_matches_classical_recursion() {
    // A slow transient keeps the pointwise comparison above the Monte Carlo
    // noise floor of the plateau.
    let mut cfg = small(NoiseModel::gaussian(0.1), vec![AlgorithmSpec::new("lms", Algorithm::Lms, 0.002)]);
    cfg.runs = 200;
    cfg.iterations = 600;
    cfg.steady_state_window = 100;
    cfg.true_weights = vec![0.2; 20];
    let res = run_experiment(&cfg, Parallelism::Parallel).unwrap();
    let theory = TheoryConfig::new(KrslParams::new(1.0, 1.0).unwrap(), 0.002, 20, 1.0, NoiseModel::gaussian(0.1)).unwrap();
    let cmp = compare_with_theory(&res["lms"], &cfg, &theory, 100).unwrap();
    assert!(cmp.deviation.max < 0.05, "{:?}", cmp.deviation);
}

#[test]
fn mismatched_pairing_is_a_config_error() {
    let cfg = small(NoiseModel::gaussian(1.0), vec![mkrsl(0.01)]);
    let res = run_experiment(&cfg, Parallelism::Sequential).unwrap();
    let theory = TheoryConfig::new(KrslParams::new(1.0, 3.0).unwrap(), 0.02, 4, 1.0, NoiseModel::gaussian(1.0)).unwrap();
    assert!(matches!(
        compare_with_theory(&res["mkrsl"], &cfg, &theory, 10),
        Err(krsl::KrslError::Config(_))
    ));
}

#[test]
fn identical_curves_have_zero_deviation() {
    let c = vec![1.0, 0.5, 0.25, 0.2];
    let d = curve_deviation(&c, &c, 1).unwrap();
    assert_eq!((d.max, d.mean), (0.0, 0.0));
}

#[test]
fn steady_emse_grows_with_step_size() {
    let etas = [2e-6, 5e-6, 1e-5];
    let w = 1.0 / 20f64.sqrt();
    let cfg = ExperimentConfig {
        true_weights: vec![w; 20],
        input: NoiseModel::gaussian(1.0),
        noise: NoiseModel::gaussian(1.0),
        algorithms: etas
            .iter()
            .map(|&e| AlgorithmSpec::new(format!("{e}"), Algorithm::Mkrsl { sigma: 1.0, lambda: 8.0 }, e))
            .collect(),
        iterations: 60_000,
        runs: 20,
        rng: RngSpec::new(2024, 0),
        steady_state_window: 10_000,
        regressor: Regressor::Independent,
        record_emse: true,
        initial_weights: None,
    };
    let res = run_experiment(&cfg, Parallelism::Parallel).unwrap();
    let mut last = 0.0;
    for &eta in &etas {
        let sim = res[&format!("{eta}")].steady_emse.unwrap();
        let theory = TheoryConfig::new(KrslParams::new(1.0, 8.0).unwrap(), eta, 20, 1.0, NoiseModel::gaussian(1.0)).unwrap();
        let predicted = steady_state_emse_taylor(&theory).unwrap();
        assert!(sim.mean > last, "EMSE not increasing at η = {eta}");
        assert!(
            (sim.mean - predicted).abs() < 0.1 * predicted + 3.0 * sim.standard_error,
            "η = {eta}: simulated {} vs theory {predicted}",
            sim.mean
        );
        last = sim.mean;
    }
}

#[test]
fn sweep_baseline_and_trend() {
    let mut base = small(
        NoiseModel::mixture(0.06, NoiseModel::gaussian(1.0), NoiseModel::gaussian(15.0)),
        vec![mkrsl(0.005)],
    );
    base.iterations = 3000;
    base.steady_state_window = 1000;
    let sweep = outlier_robustness_sweep(&base, &[15.0, 60.0], &[0.0, 0.15, 0.3], Parallelism::Parallel).unwrap();
    // c = 0 never draws outliers, so the variance axis cannot matter there.
    assert_eq!(sweep.wep("mkrsl", 0, 0), sweep.wep("mkrsl", 1, 0));
    let mut clean = base.clone();
    clean.noise = NoiseModel::mixture(0.0, NoiseModel::gaussian(1.0), NoiseModel::gaussian(15.0));
    let baseline = run_experiment(&clean, Parallelism::Parallel).unwrap()["mkrsl"].steady_wep.unwrap().mean;
    assert_eq!(sweep.wep("mkrsl", 0, 0), Some(baseline));
    assert_eq!(sweep.decreases_in_probability("mkrsl", 1.0), 0);
    assert_eq!(sweep.increases_in_variance("mkrsl", 1.0), 0);
    assert!(outlier_robustness_sweep(&small(NoiseModel::gaussian(1.0), vec![mkrsl(0.01)]), &[15.0], &[0.1], Parallelism::Sequential).is_err());
}

#[test]
fn config_json_rejects_unknown_keys() {
    let cfg = small(NoiseModel::gaussian(1.0), vec![mkrsl(0.01)]);
    let mut v = serde_json::to_value(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(back, cfg);
    v["iterationz"] = serde_json::json!(5);
    assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
}
