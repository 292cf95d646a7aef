//! CSV formats: input series, draws and sampler statistics.

use std::fs;
use std::path::{Path, PathBuf};

use varorder_core::nuts::{ChainDraws, PosteriorDraws};
use varorder_core::Matrix;

use crate::error::{CliError, Result};

/// 17 significant digits, enough to read back the same double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows of a matrix as nested vectors, for JSON.
pub fn matrix_rows(a: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|r| (0..a.cols()).map(|c| a[(r, c)]).collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Matrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Usage(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(Matrix::from_vec(rows.len(), cols, rows.concat()))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// Read a numeric series: header row of names, one row per time point.
/// Errors name the offending line and column.
pub fn read_series(path: &Path) -> Result<(Vec<String>, Matrix<f64>)> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(CliError::Usage(format!("{}: missing header row", path.display())));
    }
    let m = names.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(r + 2, |p| p.line() as usize);
        if record.len() != m {
            return Err(CliError::Usage(format!(
                "{}: line {line} (data row {}) has {} fields, expected {m}",
                path.display(),
                r + 1,
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let at = || format!("{}: line {line} (data row {}), column {} '{}'", path.display(), r + 1, c + 1, names[c]);
            if cell.is_empty() {
                return Err(CliError::Usage(format!("{}: missing value", at())));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Usage(format!("{}: non-numeric value '{cell}'", at())))?;
            if !v.is_finite() {
                return Err(CliError::Usage(format!("{}: non-finite value '{cell}'", at())));
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Usage(format!("{}: no data rows", path.display())));
    }
    Ok((names, Matrix::from_vec(n, m, values)))
}

fn csv_string<I, R>(header: &[String], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let err = |e: csv::Error| CliError::Usage(format!("csv output: {e}"));
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn series_csv(names: &[String], y: &Matrix<f64>) -> Result<String> {
    csv_string(names, (0..y.rows()).map(|r| (0..y.cols()).map(move |c| fmt_f64(y[(r, c)]))))
}

/// Generic table of strings.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    csv_string(&header, rows.iter().map(|r| r.iter().cloned()))
}

/// Draws of one chain: a header of parameter names, one row per draw.
pub fn chain_csv(names: &[String], chain: &ChainDraws) -> Result<String> {
    csv_string(names, chain.draws.iter().map(|d| d.iter().map(|&v| fmt_f64(v))))
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(path))
}

pub fn write_series(path: &Path, names: &[String], y: &Matrix<f64>) -> Result<()> {
    write_string(path, &series_csv(names, y)?)
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_string(path, &table_csv(header, rows)?)
}

pub fn draws_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("draws_chain{}.csv", chain + 1))
}

pub fn stats_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("sampler_chain{}.csv", chain + 1))
}

const STATS_HEADER: [&str; 6] = ["log_density", "accept_stat", "step_size", "treedepth", "n_leapfrog", "divergent"];

/// One draws file and one sampler-statistics file per chain.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (k, chain) in draws.chains.iter().enumerate() {
        let path = draws_path(dir, k);
        write_string(&path, &chain_csv(&draws.param_names, chain)?)?;
        written.push(path);
        let path = stats_path(dir, k);
        let rows = (0..chain.len()).map(|i| {
            vec![
                fmt_f64(chain.log_density[i]),
                fmt_f64(chain.accept_stat[i]),
                fmt_f64(chain.step_size),
                chain.treedepth[i].to_string(),
                chain.n_leapfrog[i].to_string(),
                u8::from(chain.divergent[i]).to_string(),
            ]
        });
        write_table(&path, &STATS_HEADER, &rows.collect::<Vec<_>>())?;
        written.push(path);
    }
    Ok(written)
}

fn read_numeric_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (names, y) = read_series(path)?;
    Ok((names, matrix_rows(&y)))
}

/// Read `draws_chain1.csv`, `draws_chain2.csv`, ... and, where present,
/// the matching sampler statistics.
pub fn read_draws(dir: &Path, max_treedepth: usize) -> Result<PosteriorDraws> {
    let mut names: Option<Vec<String>> = None;
    let mut chains = Vec::new();
    for k in 0.. {
        let path = draws_path(dir, k);
        if !path.exists() {
            break;
        }
        let (header, rows) = read_numeric_table(&path)?;
        match &names {
            Some(n) if *n != header => {
                return Err(CliError::Usage(format!("{}: header differs from chain 1", path.display())))
            }
            _ => names = Some(header),
        }
        let mut chain = PosteriorDraws::from_rows(Vec::new(), vec![rows]).chains.remove(0);
        let stats = stats_path(dir, k);
        if stats.exists() {
            read_stats(&stats, &mut chain)?;
        }
        chains.push(chain);
    }
    let Some(param_names) = names else {
        return Err(CliError::Usage(format!("{}: no draws_chain1.csv found", dir.display())));
    };
    Ok(PosteriorDraws {
        param_names,
        chains,
        max_treedepth,
    })
}

fn read_stats(path: &Path, chain: &mut ChainDraws) -> Result<()> {
    let (header, rows) = read_numeric_table(path)?;
    if header != STATS_HEADER || rows.len() != chain.len() {
        return Err(CliError::Usage(format!("{}: does not match its draws file", path.display())));
    }
    for (i, row) in rows.iter().enumerate() {
        chain.log_density[i] = row[0];
        chain.accept_stat[i] = row[1];
        chain.treedepth[i] = row[3] as usize;
        chain.n_leapfrog[i] = row[4] as usize;
        chain.divergent[i] = row[5] != 0.0;
    }
    chain.step_size = rows.first().map_or(f64::NAN, |r| r[2]);
    Ok(())
}
