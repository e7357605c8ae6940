//! Configuration loading, CSV series, run manifests and file comparison
//! behind the `bhsteer` command line.
//!
//! CSV layout: `t,N1..NM,VN1..VNM`, then for every tracked pair `(i, j)`
//! (one-based) `xi_i_j,xi_i_j_err,sig_i_j,sig_i_j_err,sig_j_i,sig_j_i_err,
//! zeta_i_j,zeta_i_j_err`, then `n_eff,diag_max_imag_residual`. The time
//! column holds `J·t`. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{self, AnalyticInput};
use crate::estimators::{CorrelationSeries, Estimate, EstimatorError, Observables, PairEstimate};
use crate::exact_oracle::{self, OracleError};
use crate::model::{ChainConfig, ConfigError, StateKind};
use crate::sde::{self, EnsembleError, RunOptions, Scheme};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_COMPARISON: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no analytic solution: {0}")]
    NoClosedForm(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("unreadable manifest: {0}")]
    Manifest(String),
    #[error("files cannot be compared: {0}")]
    Incompatible(String),
    #[error("comparison failed")]
    ComparisonFailed(Box<CompareReport>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::NoClosedForm(_) | CliError::Manifest(_) => EXIT_CONFIG,
            CliError::Oracle(OracleError::NormDrift { .. } | OracleError::Estimator(_)) => EXIT_FAILURE,
            CliError::Oracle(_) => EXIT_CONFIG,
            CliError::Ensemble(EnsembleError::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Ensemble(EnsembleError::Config(_)) => EXIT_CONFIG,
            CliError::Incompatible(_) | CliError::ComparisonFailed(_) => EXIT_COMPARISON,
            _ => EXIT_FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Everything needed to repeat a run; written next to its CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ChainConfig,
    pub scheme: String,
    #[serde(with = "seed_text")]
    pub seed: u64,
    pub workers: Option<usize>,
    pub wall_time_s: f64,
    pub n_traj: usize,
    pub n_diverged: usize,
    pub outputs: Vec<PathBuf>,
}

mod seed_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl RunManifest {
    pub fn path_for(csv: &Path) -> PathBuf {
        let mut name = csv.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is plain data")
    }
}

/// A configuration plus the scheme recorded with it, if it came from a
/// manifest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ChainConfig,
    pub scheme: Option<Scheme>,
}

/// Reads a TOML config, or the `.json` manifest of an earlier run, and
/// applies `key=value` overrides on top.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let Some(path) = path else {
        return Ok(LoadedConfig { config: ChainConfig::from_toml_str("", overrides)?, scheme: None });
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))?;
        let scheme = match manifest.command.as_str() {
            "run" => Some(manifest.scheme.parse().map_err(CliError::Manifest)?),
            _ => None,
        };
        let config = ChainConfig::from_toml_str(&manifest.config.to_toml_string(), overrides)?;
        return Ok(LoadedConfig { config, scheme });
    }
    Ok(LoadedConfig { config: ChainConfig::from_toml_str(&text, overrides)?, scheme: None })
}

pub fn header(wells: usize, pairs: &[(usize, usize)]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=wells).map(|j| format!("N{j}")));
    h.extend((1..=wells).map(|j| format!("VN{j}")));
    for &(i, j) in pairs {
        let (a, b) = (i + 1, j + 1);
        for name in [format!("xi_{a}_{b}"), format!("sig_{a}_{b}"), format!("sig_{b}_{a}"), format!("zeta_{a}_{b}")] {
            h.push(format!("{name}_err"));
            h.insert(h.len() - 1, name);
        }
    }
    h.push("n_eff".into());
    h.push("diag_max_imag_residual".into());
    h
}

pub fn write_csv(series: &CorrelationSeries) -> String {
    let mut out = header(series.wells, &series.pairs).join(",");
    out.push('\n');
    for (t, row) in series.times.iter().zip(&series.rows) {
        let mut fields: Vec<String> = vec![format!("{t:?}")];
        fields.extend(row.populations.iter().map(|e| format!("{:?}", e.value)));
        fields.extend(row.variances.iter().map(|e| format!("{:?}", e.value)));
        for p in &row.pairs {
            for e in [p.xi, p.sigma_ij, p.sigma_ji, p.zeta] {
                fields.push(format!("{:?}", e.value));
                fields.push(format!("{:?}", e.err));
            }
        }
        fields.push(row.count.to_string());
        fields.push(format!("{:?}", row.max_imag_residual));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// A numeric CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> =
            lines.next().ok_or_else(|| CliError::Csv("empty file".into()))?.split(',').map(|s| s.trim().to_string()).collect();
        let rows = lines
            .enumerate()
            .map(|(k, line)| {
                let row = line
                    .split(',')
                    .map(|f| f.trim().parse::<f64>().map_err(|e| CliError::Csv(format!("row {}: `{f}`: {e}", k + 1))))
                    .collect::<Result<Vec<_>, _>>()?;
                if row.len() != header.len() {
                    return Err(CliError::Csv(format!("row {} has {} fields, header has {}", k + 1, row.len(), header.len())));
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn times(&self) -> Result<Vec<f64>, CliError> {
        let t = self.column("t").ok_or_else(|| CliError::Csv("no `t` column".into()))?;
        Ok(self.rows.iter().map(|r| r[t]).collect())
    }

    /// Rebuilds the series a [`write_csv`] table was made from.
    pub fn to_series(&self) -> Result<CorrelationSeries, CliError> {
        let wells = self.header.iter().filter(|h| h.starts_with('N') && h[1..].parse::<usize>().is_ok()).count();
        let pairs: Vec<(usize, usize)> = self
            .header
            .iter()
            .filter_map(|h| h.strip_prefix("xi_").filter(|r| !r.ends_with("_err")))
            .map(|rest| {
                let (i, j) = rest.split_once('_').ok_or_else(|| CliError::Csv(format!("bad column xi_{rest}")))?;
                let parse = |s: &str| s.parse::<usize>().map_err(|_| CliError::Csv(format!("bad column xi_{rest}")));
                Ok((parse(i)? - 1, parse(j)? - 1))
            })
            .collect::<Result<_, CliError>>()?;
        if self.header != header(wells, &pairs) {
            return Err(CliError::Csv("header does not follow the series layout".into()));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut it = r[1..].iter().copied();
                let mut next = || it.next().expect("row length checked against header");
                let populations = (0..wells).map(|_| Estimate::exact(next())).collect();
                let variances = (0..wells).map(|_| Estimate::exact(next())).collect();
                let pairs = pairs
                    .iter()
                    .map(|&(i, j)| {
                        let mut est = || Estimate { value: next(), err: next() };
                        PairEstimate { i, j, xi: est(), sigma_ij: est(), sigma_ji: est(), zeta: est() }
                    })
                    .collect();
                let count = next() as u64;
                Observables { populations, variances, pairs, count, max_imag_residual: next() }
            })
            .collect();
        Ok(CorrelationSeries { wells, pairs, times: self.times()?, rows })
    }
}

/// Closed-form curves on the sample grid of a χ = 0 config.
pub fn analytic_series(config: &ChainConfig) -> Result<CorrelationSeries, CliError> {
    let config = config.clone().validate()?;
    if !config.is_linear() {
        return Err(CliError::NoClosedForm(format!("nonlinearity must be 0 (got {})", config.nonlinearity)));
    }
    let (n0, v0) = match config.initial_state {
        StateKind::Fock => (config.atoms, 0.0),
        StateKind::Coherent => (config.atoms, config.atoms),
    };
    let pairs = config.pairs();
    let times = config.sample_times();
    let rows = times
        .iter()
        .map(|&t| {
            let input = AnalyticInput::new(config.wells, config.coupling, t, n0, v0);
            let table = analytic::witness_table(&input, &pairs).map_err(|e| CliError::NoClosedForm(e.to_string()))?;
            Ok(Observables {
                populations: table.populations.into_iter().map(Estimate::exact).collect(),
                variances: table.variances.into_iter().map(Estimate::exact).collect(),
                pairs: table
                    .pairs
                    .into_iter()
                    .map(|w| PairEstimate {
                        i: w.i,
                        j: w.j,
                        xi: Estimate::exact(w.xi),
                        sigma_ij: Estimate::exact(w.sigma_ij),
                        sigma_ji: Estimate::exact(w.sigma_ji),
                        zeta: Estimate::exact(w.zeta),
                    })
                    .collect(),
                count: 0,
                max_imag_residual: 0.0,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(CorrelationSeries { wells: config.wells, pairs, times: scaled(&times, config.coupling), rows })
}

/// Exact curves for a Fock config.
pub fn oracle_series(config: &ChainConfig) -> Result<CorrelationSeries, CliError> {
    let config = config.clone().validate()?;
    let sets = exact_oracle::run_oracle(&config)?;
    let mut series = exact_oracle::oracle_series(&config, &sets)?;
    for row in &mut series.rows {
        row.count = 0;
    }
    series.times = scaled(&series.times, config.coupling);
    Ok(series)
}

/// Stochastic curves plus the run statistics.
pub fn ensemble_series(config: &ChainConfig, options: &RunOptions) -> Result<(CorrelationSeries, sde::EnsembleResult), CliError> {
    let result = sde::run_ensemble(config, options)?;
    let mut series = result.series()?;
    series.times = scaled(&series.times, config.coupling);
    Ok((series, result))
}

fn scaled(times: &[f64], coupling: f64) -> Vec<f64> {
    times.iter().map(|t| t * coupling).collect()
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    /// Gate on `|Δ| / √(σ_a² + σ_b²)`.
    pub sigma: f64,
    /// Fraction of sample times that must pass the gate.
    pub min_fraction: f64,
    /// Differences treated as zero when neither side has an error bar.
    pub abs_tol: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { sigma: 3.0, min_fraction: 0.99, abs_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnReport {
    pub name: String,
    pub max_abs_diff: f64,
    /// Largest `|Δ|/σ` over points with a nonzero combined error.
    pub max_z: f64,
    /// Points failing their gate, as a fraction of all points.
    pub fraction_failed: f64,
    /// False for columns without error bars when either file is stochastic;
    /// those are reported only.
    pub gated: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub passed: bool,
    pub rows: usize,
    pub resampled: bool,
    pub sigma: f64,
    pub min_fraction: f64,
    pub abs_tol: f64,
    pub columns: Vec<ColumnReport>,
}

impl CompareReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let width = self.columns.iter().map(|c| c.name.len()).max().unwrap_or(4);
        for c in &self.columns {
            let _ = writeln!(
                s,
                "{:<width$}  max|Δ| {:<12.4e} max z {:<8.3} failed {:>6.2}%  {}",
                c.name,
                c.max_abs_diff,
                c.max_z,
                100.0 * c.fraction_failed,
                match (c.gated, c.passed) {
                    (false, _) => "not gated",
                    (true, true) => "ok",
                    (true, false) => "FAIL",
                },
            );
        }
        let _ = writeln!(
            s,
            "{} rows{}: {}",
            self.rows,
            if self.resampled { " (resampled)" } else { "" },
            if self.passed { "PASS" } else { "FAIL" }
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

const IGNORED: [&str; 3] = ["t", "n_eff", "diag_max_imag_residual"];

fn value_columns(table: &CsvTable) -> Vec<&str> {
    table.header.iter().map(String::as_str).filter(|h| !IGNORED.contains(h) && !h.ends_with("_err")).collect()
}

/// `table` evaluated at `times` by linear interpolation in `t`.
fn resample(table: &CsvTable, times: &[f64]) -> Result<Vec<Vec<f64>>, CliError> {
    let src = table.times()?;
    let (lo, hi) = (src[0], src[src.len() - 1]);
    let slack = 1e-9 * lo.abs().max(hi.abs()).max(1.0);
    times
        .iter()
        .map(|&t| {
            if t < lo - slack || t > hi + slack {
                return Err(CliError::Incompatible(format!("time {t} lies outside [{lo}, {hi}]")));
            }
            let k = src.partition_point(|&s| s <= t).clamp(1, src.len().max(2) - 1);
            if src.len() == 1 {
                return Ok(table.rows[0].clone());
            }
            let (t0, t1) = (src[k - 1], src[k]);
            let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
            Ok(table.rows[k - 1].iter().zip(&table.rows[k]).map(|(a, b)| a + w * (b - a)).collect())
        })
        .collect()
}

fn is_exact(table: &CsvTable) -> bool {
    let errs: Vec<usize> = (0..table.header.len()).filter(|&k| table.header[k].ends_with("_err")).collect();
    table.rows.iter().all(|r| errs.iter().all(|&k| r[k] == 0.0))
}

/// Compares every value column of two series files.
///
/// Grids must coincide, or the finer file is interpolated onto the
/// coarser one. Columns with error bars pass when at least `min_fraction`
/// of the points lie within `sigma` combined standard errors (exact points
/// need `|Δ| ≤ abs_tol`). Columns without error bars must agree pointwise
/// within `abs_tol` when both files are exact and are only reported
/// otherwise.
pub fn compare_tables(a: &CsvTable, b: &CsvTable, options: &CompareOptions) -> Result<CompareReport, CliError> {
    let (ca, cb) = (value_columns(a), value_columns(b));
    let mut sa = ca.clone();
    let mut sb = cb.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        let only_a: Vec<_> = ca.iter().filter(|c| !cb.contains(c)).collect();
        let only_b: Vec<_> = cb.iter().filter(|c| !ca.contains(c)).collect();
        return Err(CliError::Incompatible(format!("columns only in first: {only_a:?}; only in second: {only_b:?}")));
    }
    if a.rows.is_empty() || b.rows.is_empty() {
        return Err(CliError::Incompatible("a file has no rows".into()));
    }
    let (ta, tb) = (a.times()?, b.times()?);
    let same_grid = ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0));
    let (coarse, rows_c, rows_f, resampled) = if same_grid {
        (a, a.rows.clone(), b.rows.clone(), false)
    } else if ta.len() <= tb.len() {
        (a, a.rows.clone(), resample(b, &ta)?, true)
    } else {
        (b, b.rows.clone(), resample(a, &tb)?, true)
    };
    let fine = if std::ptr::eq(coarse, a) { b } else { a };
    let both_exact = is_exact(a) && is_exact(b);

    let columns: Vec<ColumnReport> = ca
        .iter()
        .map(|&name| {
            let (kc, kf) = (coarse.column(name).unwrap(), fine.column(name).unwrap());
            let err_name = format!("{name}_err");
            let errs = coarse.column(&err_name).zip(fine.column(&err_name));
            let mut max_abs_diff = 0.0f64;
            let mut max_z = 0.0f64;
            let mut failed = 0usize;
            let mut hard_fail = false;
            for (rc, rf) in rows_c.iter().zip(&rows_f) {
                let d = (rc[kc] - rf[kf]).abs();
                max_abs_diff = max_abs_diff.max(d);
                match errs {
                    Some((ec, ef)) => {
                        let s = rc[ec].hypot(rf[ef]);
                        if s > 0.0 {
                            let z = d / s;
                            max_z = max_z.max(z);
                            failed += usize::from(!(z <= options.sigma));
                        } else if !(d <= options.abs_tol) {
                            failed += 1;
                            hard_fail = true;
                        }
                    }
                    None => {
                        if !(d <= options.abs_tol) {
                            failed += 1;
                            hard_fail = true;
                        }
                    }
                }
            }
            let gated = errs.is_some() || both_exact;
            let fraction_failed = if gated { failed as f64 / rows_c.len() as f64 } else { 0.0 };
            let passed = !gated || (!hard_fail && fraction_failed <= 1.0 - options.min_fraction + 1e-12);
            ColumnReport { name: name.to_string(), max_abs_diff, max_z, fraction_failed, gated, passed }
        })
        .collect();
    Ok(CompareReport {
        passed: columns.iter().all(|c| c.passed),
        rows: rows_c.len(),
        resampled,
        sigma: options.sigma,
        min_fraction: options.min_fraction,
        abs_tol: options.abs_tol,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fock(wells: usize, atoms: f64, t_max: f64) -> ChainConfig {
        let mut c = ChainConfig::new(wells, StateKind::Fock, atoms, t_max);
        c.sample_every = 50;
        c.validate().unwrap()
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            header(2, &[(0, 1)]).join(","),
            "t,N1,N2,VN1,VN2,xi_1_2,xi_1_2_err,sig_1_2,sig_1_2_err,sig_2_1,sig_2_1_err,\
             zeta_1_2,zeta_1_2_err,n_eff,diag_max_imag_residual"
        );
        let h = header(3, &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(h.len(), 1 + 6 + 3 * 8 + 2);
        assert_eq!(h[7], "xi_1_2");
        assert_eq!(h[15], "xi_1_3");
        assert_eq!(h[23], "xi_2_3");
    }

    #[test]
    fn analytic_csv_round_trips() {
        let s = analytic_series(&fock(3, 200.0, 3.0)).unwrap();
        let text = write_csv(&s);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        assert_eq!(CsvTable::parse(&text).unwrap().to_series().unwrap(), s);
    }

    #[test]
    fn analytic_rejects_unsolvable_cases() {
        assert!(matches!(analytic_series(&fock(4, 200.0, 1.0)), Err(CliError::NoClosedForm(_))));
        let mut c = fock(2, 200.0, 1.0);
        c.nonlinearity = 1e-3;
        let err = analytic_series(&c).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn coherent_analytic_has_no_entanglement() {
        let mut c = fock(2, 200.0, 5.0);
        c.initial_state = StateKind::Coherent;
        for row in analytic_series(&c).unwrap().rows {
            assert!(row.pairs[0].xi.value.abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_matches_analytic_file() {
        let c = fock(2, 4.0, 5.0);
        let a = CsvTable::parse(&write_csv(&analytic_series(&c).unwrap())).unwrap();
        let o = CsvTable::parse(&write_csv(&oracle_series(&c).unwrap())).unwrap();
        let r = compare_tables(&a, &o, &CompareOptions::default()).unwrap();
        assert!(r.passed, "{}", r.to_text());
        assert!(r.columns.iter().all(|c| c.max_abs_diff < 1e-8));
    }

    #[test]
    fn oracle_vacuum_and_guard() {
        let s = oracle_series(&fock(2, 0.0, 1.0)).unwrap();
        for row in &s.rows {
            assert!(row.populations.iter().chain(&row.variances).all(|e| e.value == 0.0));
            assert!(row.pairs.iter().all(|p| p.xi.value == 0.0 && p.sigma_ij.value == 0.0 && p.sigma_ji.value == 0.0));
        }
        let err = oracle_series(&fock(4, 200.0, 1.0)).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn identical_files_compare_clean() {
        let t = CsvTable::parse(&write_csv(&analytic_series(&fock(3, 200.0, 2.0)).unwrap())).unwrap();
        let r = compare_tables(&t, &t, &CompareOptions::default()).unwrap();
        assert!(r.passed && !r.resampled);
        assert!(r.columns.iter().all(|c| c.max_abs_diff == 0.0 && c.max_z == 0.0));
    }

    #[test]
    fn wrong_coupling_fails() {
        let good = fock(2, 200.0, 3.0);
        let mut bad = good.clone();
        bad.coupling = 1.1;
        bad.dt = good.dt;
        let a = CsvTable::parse(&write_csv(&analytic_series(&good).unwrap())).unwrap();
        let mut b = CsvTable::parse(&write_csv(&analytic_series(&bad).unwrap())).unwrap();
        let t = b.column("t").unwrap();
        for (row, ta) in b.rows.iter_mut().zip(a.times().unwrap()) {
            row[t] = ta;
        }
        let r = compare_tables(&a, &b, &CompareOptions::default()).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn finer_grid_is_resampled() {
        let coarse = fock(2, 200.0, 2.0);
        let mut fine = coarse.clone();
        fine.sample_every = 5;
        let a = CsvTable::parse(&write_csv(&analytic_series(&coarse).unwrap())).unwrap();
        let b = CsvTable::parse(&write_csv(&analytic_series(&fine).unwrap())).unwrap();
        let opts = CompareOptions { abs_tol: 1e-3, ..Default::default() };
        let r = compare_tables(&b, &a, &opts).unwrap();
        assert!(r.resampled && r.passed, "{}", r.to_text());
        assert_eq!(r.rows, a.rows.len());
    }

    #[test]
    fn mismatched_columns_are_rejected() {
        let a = CsvTable::parse(&write_csv(&analytic_series(&fock(2, 10.0, 1.0)).unwrap())).unwrap();
        let b = CsvTable::parse(&write_csv(&analytic_series(&fock(3, 10.0, 1.0)).unwrap())).unwrap();
        let err = compare_tables(&a, &b, &CompareOptions::default()).unwrap_err();
        assert!(matches!(err, CliError::Incompatible(_)));
        assert_eq!(err.exit_code(), EXIT_COMPARISON);
    }

    #[test]
    fn malformed_csv() {
        assert!(CsvTable::parse("").is_err());
        assert!(CsvTable::parse("t,N1\n0.0\n").is_err());
        assert!(CsvTable::parse("t,N1\n0.0,abc\n").is_err());
    }

    #[test]
    fn manifest_path_and_round_trip() {
        assert_eq!(RunManifest::path_for(Path::new("out/run.csv")), PathBuf::from("out/run.csv.manifest.json"));
        let mut config = fock(2, 4.0, 1.0);
        config.seed = u64::MAX;
        let m = RunManifest {
            command: "run".into(),
            version: VERSION.into(),
            config,
            scheme: Scheme::EulerMaruyama.to_string(),
            seed: u64::MAX,
            workers: Some(4),
            wall_time_s: 1.5,
            n_traj: 1,
            n_diverged: 0,
            outputs: vec![PathBuf::from("run.csv")],
        };
        let back: RunManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn config_from_manifest_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fock(3, 20.0, 1.0);
        config.nonlinearity = 0.01;
        config.seed = 99;
        let m = RunManifest {
            command: "run".into(),
            version: VERSION.into(),
            config: config.clone(),
            scheme: "em".into(),
            seed: 99,
            workers: None,
            wall_time_s: 0.0,
            n_traj: 1,
            n_diverged: 0,
            outputs: vec![],
        };
        let path = dir.path().join("x.csv.manifest.json");
        std::fs::write(&path, m.to_json()).unwrap();
        let loaded = load_config(Some(&path), &[]).unwrap();
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.scheme, Some(Scheme::EulerMaruyama));
        let loaded = load_config(Some(&path), &["n_traj=7".into()]).unwrap();
        assert_eq!(loaded.config.n_traj, 7);
    }

    #[test]
    fn config_from_overrides_only() {
        let sets: Vec<String> = ["wells=2", "atoms=4", "initial_state=fock", "t_max=1"].map(String::from).to_vec();
        assert_eq!(load_config(None, &sets).unwrap().config.wells, 2);
        assert!(matches!(load_config(None, &[]), Err(CliError::Config(_))));
    }

    fn arb_estimate() -> impl Strategy<Value = Estimate> {
        (prop::num::f64::NORMAL | prop::num::f64::ZERO, prop::num::f64::POSITIVE | prop::num::f64::ZERO)
            .prop_map(|(value, err)| Estimate { value, err })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            rows in prop::collection::vec((prop::num::f64::NORMAL, prop::collection::vec(arb_estimate(), 6 + 4 * 3), 0u64..1_000_000, prop::num::f64::POSITIVE), 1..5)
        ) {
            let pairs = vec![(0, 1), (0, 2), (1, 2)];
            let times = rows.iter().map(|r| r.0).collect();
            let obs = rows
                .iter()
                .map(|(_, e, count, resid)| Observables {
                    populations: e[0..3].iter().map(|x| Estimate::exact(x.value)).collect(),
                    variances: e[3..6].iter().map(|x| Estimate::exact(x.value)).collect(),
                    pairs: pairs
                        .iter()
                        .enumerate()
                        .map(|(k, &(i, j))| PairEstimate {
                            i,
                            j,
                            xi: e[6 + 4 * k],
                            sigma_ij: e[7 + 4 * k],
                            sigma_ji: e[8 + 4 * k],
                            zeta: e[9 + 4 * k],
                        })
                        .collect(),
                    count: *count,
                    max_imag_residual: *resid,
                })
                .collect();
            let s = CorrelationSeries { wells: 3, pairs, times, rows: obs };
            prop_assert_eq!(CsvTable::parse(&write_csv(&s)).unwrap().to_series().unwrap(), s);
        }
    }
}
