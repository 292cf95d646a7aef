use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use varorder_core::model::ParamLayout;
use varorder_core::nuts::{diagnose, Diagnostics, PosteriorDraws};
use varorder_core::reparam::check_stationary;
use varorder_core::sim::{derive_seed, random_model, run_study, simulate, CellOutput, StudyCell};
use varorder_core::analysis::coefficient_draws;
use varorder_core::nuts::SamplerConfig;
use varorder_core::{fit, Dataset, Matrix, ModelConfig, VarModel};

use crate::config::{config_hash, read_json, sha256_hex, to_json, AnalysisConfig, RunConfig, SimulateSpec, StudyConfig};
use crate::csvio::{
    chain_csv, fmt_f64, matrix_from_rows, read_draws, read_series, series_csv, write_draws, write_series, write_table,
};
use crate::error::{CliError, Result};
use crate::report::{file_hashes, write_analysis, write_file, AnalysisInput, OrderReport};
use crate::svg::bar_chart;
use crate::truth::GroundTruth;

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("varorder-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("varorder-core".to_string(), varorder_core::VERSION.to_string()),
    ])
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Wall-clock times live apart from the manifest so that every other file
/// is reproducible byte for byte.
fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    #[derive(Serialize)]
    struct Timing {
        wall_seconds: f64,
    }
    write_file(&dir.join("timing.json"), &to_json(&Timing { wall_seconds: seconds }))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub m: usize,
    pub names: Vec<String>,
    /// Column means removed before fitting.
    pub means: Vec<f64>,
}

/// Record of a run: enough to repeat it and to check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub versions: BTreeMap<String, String>,
    pub config_sha256: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub data: Option<DataInfo>,
    /// SHA-256 of every output except the manifest and `timing.json`.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    fn new<C: Serialize>(command: &str, config: &C, seed: u64, data: Option<DataInfo>, files: BTreeMap<String, String>) -> Self {
        Self {
            command: command.into(),
            versions: versions(),
            config_sha256: config_hash(config),
            seed,
            config: serde_json::to_value(config).expect("serializable config"),
            data,
            files,
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("manifest.json"), &to_json(self)).map(|_| ())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(CliError::Usage(format!("{}: not a run directory (no manifest.json)", dir.display())));
        }
        read_json(&path)
    }
}

/// Simulate a dataset and record the generating model.
pub fn cmd_simulate(spec_path: &Path, out: &Path) -> Result<()> {
    let start = Instant::now();
    let spec: SimulateSpec = read_json(spec_path)?;
    let (a, model): (Option<Vec<Matrix<f64>>>, VarModel<f64>) = match (&spec.model, spec.m, spec.p) {
        (Some(ms), _, _) => {
            let phi = ms
                .phi
                .iter()
                .map(|f| matrix_from_rows(f, "phi"))
                .collect::<Result<Vec<_>>>()?;
            let (stable, radius) = check_stationary(&phi);
            if !stable {
                return Err(CliError::Usage(format!("model is not stationary (spectral radius {radius})")));
            }
            (None, VarModel::from_coefficients(matrix_from_rows(&ms.sigma, "sigma")?, phi)?)
        }
        (None, Some(m), Some(p)) => {
            let (a, model) = random_model(m, p, derive_seed(spec.seed, &[1]))?;
            (Some(a), model)
        }
        _ => return Err(CliError::Usage("spec needs either `model` or both `m` and `p`".into())),
    };
    if spec.n < model.order() {
        return Err(CliError::Usage(format!("n = {} is smaller than the order p = {}", spec.n, model.order())));
    }
    let names = match &spec.names {
        Some(n) if n.len() != model.dim() => {
            return Err(CliError::Usage(format!("{} names given for {} components", n.len(), model.dim())))
        }
        Some(n) => n.clone(),
        None => (1..=model.dim()).map(|i| format!("y{i}")).collect(),
    };
    let data = simulate(&model, spec.n, derive_seed(spec.seed, &[2]), spec.start)?;
    create_dir(out)?;
    let data_path = out.join("data.csv");
    write_series(&data_path, &names, &data.y)?;
    let truth_path = out.join("truth.json");
    GroundTruth::new(&model, a.as_deref(), spec.n, spec.seed, spec.start)?.write(&truth_path)?;
    let files = file_hashes(out, &[data_path, truth_path])?;
    Manifest::new("simulate", &spec, spec.seed, None, files).write(out)?;
    write_timing(out, start.elapsed().as_secs_f64())
}

/// Options of `fit` given on the command line; they override the config.
#[derive(Debug, Clone, Default)]
pub struct FitArgs {
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    if let Some(s) = args.seed {
        cfg.sampler.seed = s;
    }
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no data file given (--data or config `data`)".into()))?;
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory given (--out or config `output`)".into()))?;

    let (names, y) = read_series(&data_path)?;
    let (n, m) = (y.rows(), y.cols());
    cfg.validate(m)?;
    if n <= cfg.model.p_max {
        return Err(CliError::Usage(format!(
            "{}: {n} rows is not more than p_max = {}",
            data_path.display(),
            cfg.model.p_max
        )));
    }
    let data = Dataset::centered(y)
        .with_names(names.clone())
        .with_time_step(cfg.analysis.time_step, cfg.analysis.time_unit.clone());

    let result = fit(&data, &cfg.model, &cfg.sampler)?;
    let refit = |order: usize| refit_coefficients(&data, &cfg, order);

    create_dir(&out)?;
    let mut written = Vec::new();
    let centered = out.join("data_centered.csv");
    write_series(&centered, &names, &data.y)?;
    written.push(centered);
    written.extend(write_draws(&out, &result.draws)?);
    written.push(write_file(&out.join("diagnostics.json"), &to_json(&result.diagnostics))?);
    written.extend(write_analysis(
        &out,
        &AnalysisInput {
            draws: &result.draws,
            layout: result.model.layout(),
            n,
            names: &names,
            settings: &cfg.analysis,
            refit: Some(&refit),
        },
    )?);
    let bytes = fs::read(&data_path).map_err(CliError::io(&data_path))?;
    let info = DataInfo {
        path: data_path.display().to_string(),
        sha256: sha256_hex(&bytes),
        n,
        m,
        names,
        means: data.means.clone(),
    };
    let files = file_hashes(&out, &written)?;
    let mut manifest = Manifest::new("fit", &cfg, cfg.sampler.seed, Some(info), files);
    // Where the outputs go does not change them.
    manifest.config_sha256 = config_hash(&RunConfig {
        output: None,
        ..cfg.clone()
    });
    manifest.write(&out)?;
    write_timing(&out, start.elapsed().as_secs_f64())
}

/// Coefficient draws of a second fit with `p_max = order`.
fn refit_coefficients(data: &Dataset, cfg: &RunConfig, order: usize) -> Result<Vec<Vec<Matrix<f64>>>> {
    let model = ModelConfig {
        p_max: order,
        ..cfg.model.clone()
    };
    let sampler = SamplerConfig {
        seed: derive_seed(cfg.sampler.seed, &[4, order as u64]),
        ..cfg.sampler.clone()
    };
    let result = fit(data, &model, &sampler)?;
    Ok(coefficient_draws(&result.draws, result.model.layout())?)
}

/// Options of `analyze`. Unset values fall back to the run's config,
/// except the Granger and decomposition switches, which default to off.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeArgs {
    pub run: PathBuf,
    pub out: Option<PathBuf>,
    pub beta: Option<f64>,
    pub granger: bool,
    pub decompose: bool,
    pub components: Option<usize>,
    pub regions: Option<PathBuf>,
}

fn load_run(run: &Path) -> Result<(RunConfig, DataInfo, PosteriorDraws)> {
    let manifest = Manifest::read(run)?;
    if manifest.command != "fit" {
        return Err(CliError::Usage(format!("{}: not a fit run", run.display())));
    }
    let cfg: RunConfig = serde_json::from_value(manifest.config)
        .map_err(|e| CliError::Usage(format!("{}: bad manifest config: {e}", run.display())))?;
    let info = manifest
        .data
        .ok_or_else(|| CliError::Usage(format!("{}: manifest lacks data info", run.display())))?;
    let draws = read_draws(run, cfg.sampler.max_treedepth)?;
    let layout = ParamLayout::new(info.m, cfg.model.p_max);
    if draws.param_names != layout.names() {
        return Err(CliError::Usage(format!("{}: draw columns do not match the model", run.display())));
    }
    Ok((cfg, info, draws))
}

/// Re-summarize stored draws without refitting.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let (cfg, info, draws) = load_run(&args.run)?;
    let settings = AnalysisConfig {
        beta: args.beta.unwrap_or(cfg.analysis.beta),
        granger: args.granger,
        decompose: args.decompose,
        components: args.components.unwrap_or(cfg.analysis.components),
        regions: args.regions.clone().or(cfg.analysis.regions.clone()),
        ..cfg.analysis.clone()
    };
    settings.validate()?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("analysis"));
    create_dir(&out)?;
    let layout = ParamLayout::new(info.m, cfg.model.p_max);
    let refit = |order: usize| {
        let (_, y) = read_series(&args.run.join("data_centered.csv"))?;
        let data = Dataset::new(y).with_names(info.names.clone());
        refit_coefficients(&data, &cfg, order)
    };
    let written = write_analysis(
        &out,
        &AnalysisInput {
            draws: &draws,
            layout: &layout,
            n: info.n,
            names: &info.names,
            settings: &settings,
            refit: Some(&refit),
        },
    )?;
    let files = file_hashes(&out, &written)?;
    Manifest::new("analyze", &settings, cfg.sampler.seed, Some(info), files).write(&out)
}

/// Recompute convergence diagnostics from stored draws.
pub fn cmd_diagnose(run: &Path) -> Result<Diagnostics> {
    let (_, _, draws) = load_run(run)?;
    Ok(diagnose(&draws))
}

pub fn format_diagnostics(d: &Diagnostics) -> String {
    let mut s = format!(
        "{} chains x {} draws, {} divergences, {} at max treedepth\nmax R-hat {:.4}, min bulk ESS {:.1}\n\n",
        d.chains, d.draws_per_chain, d.divergences, d.treedepth_hits, d.max_rhat, d.min_ess_bulk
    );
    s.push_str(&format!(
        "{:<22} {:>12} {:>12} {:>8} {:>10} {:>12}\n",
        "parameter", "mean", "sd", "rhat", "ess_bulk", "mcse_mean"
    ));
    for p in &d.params {
        s.push_str(&format!(
            "{:<22} {:>12.5} {:>12.5} {:>8.4} {:>10.1} {:>12.2e}\n",
            p.name, p.mean, p.sd, p.rhat, p.ess_bulk, p.mcse_mean
        ));
    }
    s
}

/// Per-cell files, rendered by workers and written by the orchestrator.
struct CellFiles {
    dir: String,
    files: Vec<(String, String)>,
}

fn cell_dir(c: &StudyCell) -> String {
    format!("cell{:04}_m{}_p{}_n{}_r{}", c.index, c.m, c.p, c.n, c.replicate)
}

fn render_cell(out: &CellOutput, cfg: &StudyConfig) -> Result<CellFiles> {
    let truth = GroundTruth::new(&out.truth, Some(&out.a), out.cell.n, cfg.grid.seed, cfg.grid.start)?;
    let mut files = vec![
        ("data.csv".to_string(), series_csv(&out.data.names, &out.data.y)?),
        ("truth.json".to_string(), to_json(&truth)),
        ("order_pmf.json".to_string(), to_json(&OrderReport::from(out.order.clone()))),
        ("diagnostics.json".to_string(), to_json(&out.diagnostics)),
    ];
    if cfg.save_draws {
        for (k, chain) in out.draws.chains.iter().enumerate() {
            files.push((format!("draws_chain{}.csv", k + 1), chain_csv(&out.draws.param_names, chain)?));
        }
    }
    Ok(CellFiles {
        dir: cell_dir(&out.cell),
        files,
    })
}


/// Run a simulation study. A study with failed cells still writes its
/// report and then returns [`CliError::PartialStudy`].
pub fn cmd_study(config: &Path, out: &Path) -> Result<()> {
    let start = Instant::now();
    let cfg: StudyConfig = read_json(config)?;
    if cfg.grid.m.is_empty() || cfg.grid.p.is_empty() || cfg.grid.n.is_empty() || cfg.grid.replicates == 0 {
        return Err(CliError::Usage("study grid has no cells".into()));
    }
    for &m in &cfg.grid.m {
        cfg.model.validate(m)?;
    }
    cfg.sampler.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(cfg.beta > 0.0 && cfg.beta < 1.0) {
        return Err(CliError::Usage(format!("beta must lie in (0, 1), got {}", cfg.beta)));
    }
    for c in cfg.grid.cells() {
        if c.n <= cfg.model.p_max || c.n < c.p {
            return Err(CliError::Usage(format!("cell with n = {} needs n > p_max = {}", c.n, cfg.model.p_max)));
        }
    }

    let rendered: Mutex<Vec<std::result::Result<CellFiles, String>>> = Mutex::new(Vec::new());
    let report = run_study(&cfg.grid, &cfg.model, &cfg.sampler, cfg.beta, &|o| {
        let r = render_cell(o, &cfg).map_err(|e| e.to_string());
        rendered.lock().expect("unpoisoned").push(r);
    });

    create_dir(out)?;
    let mut written = Vec::new();
    let mut cells = rendered.into_inner().expect("unpoisoned");
    let mut render_errors = Vec::new();
    cells.sort_by(|a, b| match (a, b) {
        (Ok(x), Ok(y)) => x.dir.cmp(&y.dir),
        _ => std::cmp::Ordering::Equal,
    });
    for cell in cells {
        match cell {
            Ok(cell) => {
                let dir = out.join("cells").join(&cell.dir);
                create_dir(&dir)?;
                for (name, contents) in &cell.files {
                    written.push(write_file(&dir.join(name), contents)?);
                }
            }
            Err(e) => render_errors.push(e),
        }
    }
    if let Some(e) = render_errors.first() {
        return Err(CliError::Usage(e.clone()));
    }

    written.push(write_file(&out.join("report.json"), &to_json(&report))?);
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            vec![
                c.cell.index.to_string(),
                c.cell.m.to_string(),
                c.cell.p.to_string(),
                c.cell.n.to_string(),
                c.cell.replicate.to_string(),
                c.modal_order.map(|v| v.to_string()).unwrap_or_default(),
                opt(c.mass_at_true),
                opt(c.threshold),
                opt(c.max_rhat),
                opt(c.min_ess_bulk),
                c.divergences.map(|v| v.to_string()).unwrap_or_default(),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let path = out.join("report.csv");
    write_table(
        &path,
        &[
            "index",
            "m",
            "p",
            "n",
            "replicate",
            "modal_order",
            "mass_at_true",
            "threshold",
            "max_rhat",
            "min_ess_bulk",
            "divergences",
            "error",
        ],
        &rows,
    )?;
    written.push(path);
    let labels: Vec<String> = report.cells.iter().map(|c| c.cell.index.to_string()).collect();
    let mass: Vec<f64> = report.cells.iter().map(|c| c.mass_at_true.unwrap_or(0.0)).collect();
    written.push(write_file(
        &out.join("mass_at_true.svg"),
        &bar_chart("Posterior mass at the true order", "cell", "probability", &labels, &mass),
    )?);
    let files = file_hashes(out, &written)?;
    Manifest::new("study", &cfg, cfg.grid.seed, None, files).write(out)?;
    write_timing(out, start.elapsed().as_secs_f64())?;
    if report.failures > 0 {
        return Err(CliError::PartialStudy {
            failed: report.failures,
            total: report.cells.len(),
        });
    }
    Ok(())
}
