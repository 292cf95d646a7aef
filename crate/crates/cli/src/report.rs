//! Analysis artifacts shared by `fit` and `analyze`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use varorder_core::analysis::{
    coefficient_draws, decomposition_summary, granger_edges, kde, order_posterior, GrangerEdge, Interval,
    OrderPosterior,
};
use varorder_core::model::ParamLayout;
use varorder_core::nuts::PosteriorDraws;
use varorder_core::Matrix;

use crate::config::{to_json, AnalysisConfig};
use crate::csvio::{fmt_f64, write_table};
use crate::error::{CliError, Result};
use crate::graph::{granger_dot, read_regions};
use crate::svg::{bar_chart, line_chart};

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    fs::write(path, contents).map_err(CliError::io(path))?;
    Ok(path.to_path_buf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub mode: usize,
    pub mode_mass: f64,
    #[serde(flatten)]
    pub posterior: OrderPosterior,
}

impl From<OrderPosterior> for OrderReport {
    fn from(posterior: OrderPosterior) -> Self {
        Self {
            mode: posterior.mode(),
            mode_mass: posterior.mass(posterior.mode()),
            posterior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerReport {
    pub modal_order: usize,
    pub names: Vec<String>,
    pub edges: Vec<GrangerEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub index: usize,
    pub draws: usize,
    pub modulus: Interval,
    pub period_samples: Interval,
    pub period_time: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub modal_order: usize,
    pub time_step: f64,
    pub time_unit: String,
    pub draws: usize,
    /// Draws with fewer quasi-periodic components than requested.
    pub missing: usize,
    pub components: Vec<ComponentReport>,
}

/// Inputs of an analysis pass over stored draws.
pub struct AnalysisInput<'a> {
    pub draws: &'a PosteriorDraws,
    pub layout: &'a ParamLayout,
    pub n: usize,
    pub names: &'a [String],
    pub settings: &'a AnalysisConfig,
    /// Coefficient draws of a fit at the given order, used when
    /// `settings.refit` is set.
    pub refit: Option<&'a dyn Fn(usize) -> Result<Vec<Vec<Matrix<f64>>>>>,
}

/// Order posterior always; Granger network and latent decomposition when
/// enabled. Returns the files written.
pub fn write_analysis(dir: &Path, input: &AnalysisInput) -> Result<Vec<PathBuf>> {
    let s = input.settings;
    let mut written = Vec::new();
    let order = OrderReport::from(order_posterior(input.draws, input.layout, input.n, s.beta)?);
    written.push(write_file(&dir.join("order_pmf.json"), &to_json(&order))?);
    let rows: Vec<Vec<String>> = order
        .posterior
        .pmf
        .iter()
        .enumerate()
        .map(|(k, p)| vec![k.to_string(), fmt_f64(*p)])
        .collect();
    let path = dir.join("order_pmf.csv");
    write_table(&path, &["order", "probability"], &rows)?;
    written.push(path);
    let labels: Vec<String> = (0..order.posterior.pmf.len()).map(|k| k.to_string()).collect();
    let title = format!("Posterior of the effective order (beta = {})", s.beta);
    written.push(write_file(
        &dir.join("order_pmf.svg"),
        &bar_chart(&title, "order", "probability", &labels, &order.posterior.pmf),
    )?);

    if !(s.granger || s.decompose) {
        return Ok(written);
    }
    let modal = order.mode;
    let phi = match (s.refit, input.refit) {
        (true, Some(refit)) if modal > 0 => refit(modal)?,
        _ => coefficient_draws(input.draws, input.layout)?,
    };

    if s.granger {
        let regions = s.regions.as_deref().map(read_regions).transpose()?;
        let report = GrangerReport {
            modal_order: modal,
            names: input.names.to_vec(),
            edges: granger_edges(&phi, modal),
        };
        written.push(write_file(&dir.join("granger.json"), &to_json(&report))?);
        written.push(write_file(
            &dir.join("granger.dot"),
            &granger_dot(input.names, &report.edges, regions.as_ref()),
        )?);
    }

    if s.decompose {
        let summary = decomposition_summary(&phi, modal, s.components, s.time_step)?;
        let report = DecompositionReport {
            modal_order: modal,
            time_step: s.time_step,
            time_unit: s.time_unit.clone(),
            draws: summary.draws,
            missing: summary.missing,
            components: summary
                .components
                .iter()
                .map(|c| ComponentReport {
                    index: c.index,
                    draws: c.moduli.len(),
                    modulus: c.modulus.clone(),
                    period_samples: c.period_samples.clone(),
                    period_time: c.period_time.clone(),
                })
                .collect(),
        };
        written.push(write_file(&dir.join("decomposition.json"), &to_json(&report))?);
        let rows: Vec<Vec<String>> = report
            .components
            .iter()
            .map(|c| {
                let mut row = vec![c.index.to_string(), c.draws.to_string()];
                for i in [&c.modulus, &c.period_samples, &c.period_time] {
                    row.extend([fmt_f64(i.mean), fmt_f64(i.lo), fmt_f64(i.hi)]);
                }
                row
            })
            .collect();
        let path = dir.join("decomposition.csv");
        write_table(
            &path,
            &[
                "component",
                "draws",
                "modulus_mean",
                "modulus_lo",
                "modulus_hi",
                "period_samples_mean",
                "period_samples_lo",
                "period_samples_hi",
                "period_time_mean",
                "period_time_lo",
                "period_time_hi",
            ],
            &rows,
        )?;
        written.push(path);

        let series: Vec<(String, Vec<f64>, Vec<f64>)> = summary
            .components
            .iter()
            .filter(|c| c.periods_samples.len() > 1)
            .map(|c| {
                let times: Vec<f64> = c.periods_samples.iter().map(|p| p * s.time_step).collect();
                // Plot the central 99% so a few extreme periods do not
                // flatten the density.
                let mut sorted = times.clone();
                sorted.sort_by(f64::total_cmp);
                let lo = varorder_core::analysis::quantile_sorted(&sorted, 0.005);
                let hi = varorder_core::analysis::quantile_sorted(&sorted, 0.995);
                let grid: Vec<f64> = (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect();
                let density = kde(&times, &grid);
                (format!("component {}", c.index), grid, density)
            })
            .collect();
        written.push(write_file(
            &dir.join("decomposition.svg"),
            &line_chart(
                "Posterior density of component periods",
                &format!("period ({})", s.time_unit),
                "density",
                &series,
            ),
        )?);
    }
    Ok(written)
}

/// SHA-256 of each file, keyed by its path relative to `base`.
pub fn file_hashes(base: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let bytes = fs::read(p).map_err(CliError::io(p))?;
        let rel = p.strip_prefix(base).unwrap_or(p);
        let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.insert(name, crate::config::sha256_hex(&bytes));
    }
    Ok(out)
}
