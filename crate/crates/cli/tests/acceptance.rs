//! End-to-end acceptance checks. Each test prints one PASS/FAIL line before
//! asserting, so `cargo test -- --nocapture` gives a readable scorecard.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use clap::Parser;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use varorder_cli::{run, Cli};
use varorder_core::analysis::{
    coefficient_draws, decomposition_summary, latent_decomposition, order_posterior, truncation_threshold,
    ComponentKind,
};
use varorder_core::autodiff::GradientContext;
use varorder_core::model::{log_likelihood, MgpState, UnconstrainedParams};
use varorder_core::nuts::{diagnose, ess, sample, LogDensity, SamplerConfig};
use varorder_core::reparam::{a_to_pacf, a_to_var, check_stationary, pacf_to_a, var_to_pacf};
use varorder_core::sim::{random_model, simulate, Start, StudyGrid};
use varorder_core::{fit, Dataset, Matrix, Model, ModelConfig, VarModel};

fn verdict(criterion: u32, what: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion} [{tag}] {what}: {detail}");
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> Matrix<f64> {
    let x = normal_matrix(rng, m, m, 1.0);
    x.matmul_t(&x).scale(1.0 / m as f64).add(&Matrix::identity(m).scale(0.5))
}

fn max_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).max_abs()
}

#[test]
fn c1_threshold_table() {
    let expected = [
        (1, 1000, 0.081),
        (3, 1000, 0.103),
        (5, 1000, 0.112),
        (7, 1000, 0.117),
        (3, 100, 0.326),
        (3, 500, 0.146),
    ];
    let mut worst: f64 = 0.0;
    let mut cells = Vec::new();
    for (m, n, want) in expected {
        let got = truncation_threshold(m, n, 0.99).unwrap();
        worst = worst.max((got - want).abs());
        cells.push(format!("m={m} n={n} {got:.4}"));
    }
    let ok = worst <= 0.0005;
    verdict(1, "truncation thresholds", ok, &format!("{}; worst deviation {worst:.2e}", cells.join(", ")));
    assert!(ok);
}

#[test]
fn c2_reparameterization_soundness() {
    let (mut unstable, mut roundtrip, mut lyapunov) = (0usize, 0.0f64, 0.0f64);
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(1..=4);
        let sigma = random_spd(&mut rng, m);
        let a: Vec<Matrix<f64>> = (0..p).map(|_| normal_matrix(&mut rng, m, m, 1.0)).collect();

        let (model, _) = a_to_var(&sigma, &a).unwrap();
        if !check_stationary(&model.phi).0 {
            unstable += 1;
        }
        let pacf = a_to_pacf(&a).unwrap();
        let (sigma_back, pacf_back) = var_to_pacf(&model).unwrap();
        let a_back = pacf_to_a(&pacf_back).unwrap();
        roundtrip = roundtrip.max(max_diff(&sigma, &sigma_back));
        for s in 0..p {
            roundtrip = roundtrip.max(max_diff(&pacf[s], &pacf_back[s]));
            roundtrip = roundtrip.max(max_diff(&a[s], &a_back[s]));
        }
        // Solved independently through the companion form.
        let oracle = VarModel::from_coefficients(model.sigma.clone(), model.phi.clone()).unwrap();
        let scale = oracle.gamma[0].max_abs();
        for (g, h) in model.gamma.iter().zip(&oracle.gamma) {
            lyapunov = lyapunov.max(max_diff(g, h) / scale);
        }
    }
    let ok = unstable == 0 && roundtrip < 1e-8 && lyapunov < 1e-8;
    verdict(
        2,
        "reparameterization (500 cases)",
        ok,
        &format!("non-stationary {unstable}, roundtrip error {roundtrip:.2e}, autocovariance rel. error {lyapunov:.2e}"),
    );
    assert!(ok);
}

/// Joint density of `y_1..y_n` with the covariance laid out from the
/// autocovariances, through nalgebra's Cholesky.
fn joint_gaussian_logpdf(data: &Dataset, model: &VarModel<f64>) -> f64 {
    let (n, m) = (data.n(), data.m());
    let gamma = model.autocovariances(n);
    let cov = DMatrix::from_fn(n * m, n * m, |r, c| {
        let (s, i, t, j) = (r / m, r % m, c / m, c % m);
        if s >= t {
            gamma[s - t][(i, j)]
        } else {
            gamma[t - s][(j, i)]
        }
    });
    let x = DVector::from_iterator(n * m, (0..n).flat_map(|t| data.row(t).to_vec()));
    let chol = cov.cholesky().expect("joint covariance must be SPD");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let z = chol.l().solve_lower_triangular(&x).unwrap();
    -0.5 * ((n * m) as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

#[test]
fn c3_likelihood_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let m = 1 + case % 2;
        let p_max = 1 + (case / 2) % 3;
        let p = 1 + rng.random_range(0..p_max);
        let n = rng.random_range(p_max.max(2)..=6);
        let sigma = random_spd(&mut rng, m);
        let a: Vec<Matrix<f64>> = (0..p).map(|_| normal_matrix(&mut rng, m, m, 1.0)).collect();
        let (model, _) = a_to_var(&sigma, &a).unwrap();
        let data = Dataset::new(normal_matrix(&mut rng, n, m, 1.5));
        let oracle = joint_gaussian_logpdf(&data, &model);
        worst = worst.max((log_likelihood(&data, &model, p_max).unwrap() - oracle).abs());

        let mut a_full = a.clone();
        a_full.resize(p_max, Matrix::zeros(m, m));
        let state = MgpState {
            lambda: vec![Matrix::from_fn(m, m, |_, _| 1.0); p_max],
            delta: vec![1.0; p_max],
        };
        let cfg = ModelConfig {
            p_max,
            ..ModelConfig::default()
        };
        let post = Model::new(&data, &cfg).unwrap();
        let theta = post.layout().pack(&UnconstrainedParams::from_natural(a_full, &state, &sigma).unwrap());
        worst = worst.max((post.log_posterior_parts(&theta).likelihood - oracle).abs());
    }
    let ok = worst < 1e-8;
    verdict(3, "likelihood vs joint Gaussian (100 models)", ok, &format!("worst abs. error {worst:.2e}"));
    assert!(ok);
}

#[test]
fn c4_gradient_finite_differences() {
    let (_, truth) = random_model(2, 2, 404).unwrap();
    let data = simulate(&truth, 50, 405, Start::Exact).unwrap();
    let cfg = ModelConfig {
        p_max: 3,
        ..ModelConfig::default()
    };
    let model = Model::new(&data, &cfg).unwrap();
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(406);
    let mut ctx = GradientContext::new();
    let mut grad = vec![0.0; d];
    let (mut worst_rel, mut worst_abs, mut bad) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..20 {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.log_posterior_grad(&mut ctx, &theta, &mut grad);
        for k in 0..d {
            let h = 1e-5 * theta[k].abs().max(1.0);
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let fd = (model.log_posterior(&tp) - model.log_posterior(&tm)) / (2.0 * h);
            let g = grad[k];
            if g.abs() < 1e-6 {
                worst_abs = worst_abs.max((g - fd).abs());
                bad += usize::from((g - fd).abs() >= 1e-7);
            } else {
                let rel = (g - fd).abs() / g.abs();
                worst_rel = worst_rel.max(rel);
                bad += usize::from(rel >= 1e-5);
            }
        }
    }
    let ok = bad == 0;
    verdict(
        4,
        "gradient vs central differences (20 points)",
        ok,
        &format!("{d} coordinates, worst rel. {worst_rel:.2e}, worst abs. {worst_abs:.2e}, failures {bad}"),
    );
    assert!(ok);
}

#[derive(Clone)]
struct StdNormal(usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_and_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

fn mean_and_mcse(traces: &[Vec<f64>]) -> (f64, f64) {
    let all: Vec<f64> = traces.iter().flatten().copied().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (all.len() - 1) as f64;
    (mean, (var / ess(traces)).sqrt())
}

#[test]
fn c5_sampler_calibration() {
    let d = 10;
    let cfg = SamplerConfig {
        chains: 4,
        warmup: 1000,
        samples: 2000,
        seed: 505,
        ..SamplerConfig::default()
    };
    let draws = sample(&StdNormal(d), &cfg).unwrap();
    let mut worst_z: f64 = 0.0;
    for k in 0..d {
        let (mean, mcse) = mean_and_mcse(&draws.traces(k));
        worst_z = worst_z.max(mean.abs() / mcse);
    }
    let rows: Vec<&[f64]> = draws.iter().collect();
    let total = rows.len() as f64;
    let means: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / total).collect();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / (total - 1.0)
    });
    let frob = (cov - DMatrix::<f64>::identity(d, d)).norm() / (d as f64).sqrt();
    let ok_a = worst_z < 3.0 && frob < 0.1;
    verdict(
        5,
        "(a) 10-d standard normal",
        ok_a,
        &format!("worst |mean|/MCSE {worst_z:.2}, relative Frobenius covariance error {frob:.3}"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(506);
    let data = Dataset::new(normal_matrix(&mut rng, 10, 2, 1.0));
    let model_cfg = ModelConfig {
        p_max: 3,
        prior_only: true,
        ..ModelConfig::default()
    };
    let model = Arc::new(Model::new(&data, &model_cfg).unwrap());
    let sampler = SamplerConfig {
        chains: 4,
        warmup: 1000,
        samples: 2500,
        seed: 507,
        ..SamplerConfig::default()
    };
    let names = model.layout().names();
    let draws = sample(&model.density(), &sampler).unwrap().with_names(names.clone());
    let mut worst_z: f64 = 0.0;
    let mut check = |k: usize, target: f64| {
        let traces: Vec<Vec<f64>> = draws.traces(k).into_iter().map(|c| c.into_iter().map(f64::exp).collect()).collect();
        let (mean, mcse) = mean_and_mcse(&traces);
        worst_z = worst_z.max((mean - target).abs() / mcse);
    };
    check(names.iter().position(|n| n == "log_delta[1]").unwrap(), 2.5);
    for (k, name) in names.iter().enumerate() {
        if name.starts_with("log_lambda") {
            check(k, 1.0);
        }
    }
    let rhat = diagnose(&draws).max_rhat;
    let ok_b = worst_z < 3.0 && rhat < 1.01;
    verdict(
        5,
        "(b) prior-only run",
        ok_b,
        &format!("worst |mean - prior mean|/MCSE {worst_z:.2}, max split R-hat {rhat:.4}"),
    );
    assert!(ok_a && ok_b);
}

#[test]
fn c6_scaled_order_study() {
    let grid = StudyGrid {
        m: vec![3],
        p: vec![2],
        n: vec![500],
        replicates: 3,
        seed: 20240501,
        start: Start::Exact,
    };
    let model_cfg = ModelConfig {
        p_max: 6,
        ..ModelConfig::default()
    };
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 500,
        samples: 1000,
        ..SamplerConfig::default()
    };
    let report = varorder_core::sim::run_study(&grid, &model_cfg, &sampler, 0.99, &|_| {});
    let mut hits = 0;
    let mut cells = Vec::new();
    for c in &report.cells {
        let (mode, mass) = match (&c.pmf, c.modal_order) {
            (Some(pmf), Some(mode)) => (mode, pmf[mode]),
            _ => {
                cells.push(format!("replicate {} failed: {:?}", c.cell.replicate, c.error));
                continue;
            }
        };
        if mode == 2 && mass > 0.4 {
            hits += 1;
        }
        cells.push(format!("mode {mode} (mass {mass:.3}, R-hat {:.3})", c.max_rhat.unwrap_or(f64::NAN)));
    }
    let ok = hits >= 2;
    verdict(6, "scaled order study (m=3, p=2, n=500)", ok, &format!("{hits}/3 at mode 2; {}", cells.join(", ")));
    assert!(ok);
}

#[test]
fn c7_decomposition_recovery() {
    let phi = vec![Matrix::from_vec(1, 1, vec![1.0]), Matrix::from_vec(1, 1, vec![-0.5])];
    let comps = latent_decomposition(&phi, 2, 1.0);
    let pair = comps.iter().find(|c| c.kind == ComponentKind::ComplexPair);
    let exact_ok = comps.len() == 1
        && pair.is_some_and(|c| {
            (c.modulus - 0.5f64.sqrt()).abs() < 1e-4 && (c.period_samples.unwrap() - 8.0).abs() < 1e-3
        });
    let exact = pair.map_or("no complex pair".to_string(), |c| {
        format!("modulus {:.6}, period {:.6}", c.modulus, c.period_samples.unwrap())
    });

    let truth = VarModel::from_coefficients(Matrix::identity(1), phi).unwrap();
    let data = simulate(&truth, 1000, 707, Start::Exact).unwrap();
    let model_cfg = ModelConfig {
        p_max: 4,
        ..ModelConfig::default()
    };
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 500,
        samples: 1000,
        seed: 708,
        ..SamplerConfig::default()
    };
    let result = fit(&data, &model_cfg, &sampler).unwrap();
    let layout = result.model.layout();
    let modal = order_posterior(&result.draws, layout, data.n(), 0.99).unwrap().mode();
    let summary = decomposition_summary(&coefficient_draws(&result.draws, layout).unwrap(), modal, 1, 1.0).unwrap();
    let interval = summary.components.first().map(|c| c.period_samples.clone());
    let fit_ok = interval.as_ref().is_some_and(|i| i.lo <= 8.0 && 8.0 <= i.hi);
    let fitted = interval.map_or("no component".to_string(), |i| {
        format!("modal order {modal}, period mean {:.3}, 95% [{:.3}, {:.3}]", i.mean, i.lo, i.hi)
    });
    let ok = exact_ok && fit_ok;
    verdict(7, "decomposition recovery", ok, &format!("exact: {exact}; fitted: {fitted}"));
    assert!(ok);
}

fn cli(args: &[&str]) -> varorder_cli::Result<()> {
    run(Cli::try_parse_from(std::iter::once("varorder").chain(args.iter().copied())).unwrap())
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timing.json" {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn write_json(path: &Path, value: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

#[test]
fn c8_reproducible_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    write_json(&spec, serde_json::json!({"m": 2, "p": 1, "n": 120, "seed": 808}));
    let sim = tmp.path().join("sim");
    let run_dir = tmp.path().join("run");
    let config = tmp.path().join("fit.json");
    write_json(
        &config,
        serde_json::json!({
            "data": sim.join("data.csv"),
            "output": run_dir,
            "model": {"p_max": 2},
            "sampler": {"chains": 2, "warmup": 150, "samples": 150, "seed": 809},
            "analysis": {"refit": true}
        }),
    );
    let sim_arg = sim.to_str().unwrap();
    let mut snaps = Vec::new();
    for _ in 0..2 {
        cli(&["simulate", "--spec", spec.to_str().unwrap(), "--out", sim_arg]).unwrap();
        cli(&["fit", "--config", config.to_str().unwrap()]).unwrap();
        cli(&["analyze", "--run", run_dir.to_str().unwrap(), "--granger", "--decompose"]).unwrap();
        snaps.push((snapshot(&sim), snapshot(&run_dir)));
    }
    let files = snaps[0].0.len() + snaps[0].1.len();
    let mut differing = Vec::new();
    for (dir, a, b) in [("sim", &snaps[0].0, &snaps[1].0), ("run", &snaps[0].1, &snaps[1].1)] {
        for (k, v) in a {
            if b.get(k) != Some(v) {
                differing.push(format!("{dir}/{}", k.display()));
            }
        }
    }
    let ok = differing.is_empty() && snaps[0] == snaps[1] && files > 10;
    verdict(
        8,
        "byte-identical reruns (simulate, fit, analyze)",
        ok,
        &format!("{files} files compared, differing: {differing:?}"),
    );
    assert!(ok);
}

#[test]
fn c9_eeg_like_pipeline() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eeg");
    let config = tmp.path().join("eeg.json");
    write_json(
        &config,
        serde_json::json!({
            "data": fixtures.join("eeg_like.csv"),
            "output": out,
            "model": {"p_max": 2},
            "sampler": {"chains": 2, "warmup": 100, "samples": 100, "max_treedepth": 6, "seed": 909},
            "analysis": {
                "time_step": 30.0,
                "time_unit": "s",
                "regions": fixtures.join("eeg_like_regions.csv")
            }
        }),
    );
    let result = cli(&["fit", "--config", config.to_str().unwrap()]);
    let mut problems = Vec::new();
    if let Err(e) = &result {
        problems.push(format!("fit failed: {e}"));
    }
    let read = |name: &str| fs::read_to_string(out.join(name)).unwrap_or_default();
    let pmf: serde_json::Value = serde_json::from_str(&read("order_pmf.json")).unwrap_or_default();
    let mass: f64 = pmf["pmf"].as_array().map_or(0.0, |a| a.iter().filter_map(|v| v.as_f64()).sum());
    if pmf["pmf"].as_array().map(Vec::len) != Some(3) || (mass - 1.0).abs() > 1e-9 {
        problems.push("order_pmf.json lacks a 3-point pmf".into());
    }
    let dot = read("granger.dot");
    if !(dot.starts_with("digraph") && dot.contains("left frontal") && dot.contains("pos=\"")) {
        problems.push("granger.dot lacks region labels or positions".into());
    }
    let dec: serde_json::Value = serde_json::from_str(&read("decomposition.json")).unwrap_or_default();
    if dec["time_unit"] != "s" || dec["components"].as_array().is_none_or(Vec::is_empty) {
        problems.push("decomposition.json lacks components in seconds".into());
    }
    for name in ["order_pmf.svg", "decomposition.csv", "decomposition.svg", "diagnostics.json", "manifest.json"] {
        if !out.join(name).exists() {
            problems.push(format!("missing {name}"));
        }
    }
    let ok = problems.is_empty();
    let detail = if ok {
        let first = &dec["components"][0]["period_time"];
        format!(
            "modal order {}, first component period {:.0} s [{:.0}, {:.0}]",
            pmf["mode"],
            first["mean"].as_f64().unwrap_or(f64::NAN),
            first["lo"].as_f64().unwrap_or(f64::NAN),
            first["hi"].as_f64().unwrap_or(f64::NAN)
        )
    } else {
        problems.join("; ")
    };
    verdict(9, "EEG-like fixture end to end", ok, &detail);
    assert!(ok);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_varorder");
    let tmp = tempfile::tempdir().unwrap();
    let bad_csv = tmp.path().join("bad.csv");
    fs::write(&bad_csv, "a,b\n1,2\n3,oops\n").unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap();

    let out = status(&["fit", "--data", bad_csv.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3") && stderr.contains("'b'"), "{stderr}");

    assert_eq!(status(&["fit", "--bogus"]).status.code(), Some(2));
    assert_eq!(status(&["diagnose", "--run", tmp.path().join("none").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(status(&["--version"]).status.code(), Some(0));
}
