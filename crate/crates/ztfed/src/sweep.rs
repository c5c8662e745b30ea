//! Cartesian sweeps over experiment axes.
//!
//! Every (grid point, repeat) pair is a cell with its own directory under
//! `<out>/cells/` and a seed derived from the master seed and the cell
//! index. A cell whose directory already holds the same `cell.toml` and a
//! `metrics.json` is reused, so an interrupted sweep resumes where it stopped.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use ztfed_core::rng::derive_u64;

use crate::error::{AppError, AppResult};
use crate::experiment::{self, RunMetrics, METRICS_FILE};
use crate::spec::{parse_aggregator, Epsilon, ExperimentSpec, MAX_SEED};

pub const RESULTS_FILE: &str = "results.csv";
const CELL_SPEC_FILE: &str = "cell.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub repeat: usize,
    pub seed: u64,
    pub aggregator: String,
    pub clients: usize,
    pub anomaly_rate: f64,
    pub epsilon: Epsilon,
    pub missing_rate: f64,
    pub prc: f64,
}

/// One aggregated results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: usize,
    pub repeat: usize,
    pub seed: u64,
    pub aggregator: String,
    pub clients: usize,
    pub anomaly_rate: f64,
    /// A number, or `none` without privacy noise.
    pub epsilon: String,
    pub missing_rate: f64,
    #[serde(rename = "prC")]
    pub prc: f64,
    pub mae: f64,
    pub rmse: f64,
    pub maape: f64,
    pub baseline_mae: f64,
    pub baseline_rmse: f64,
    pub baseline_maape: f64,
    pub mia_sr: f64,
    pub communication_mb: f64,
    pub attacker_exclusion_rate: Option<f64>,
    pub rejected_uploads: usize,
    pub final_digest: String,
}

impl ResultRow {
    fn new(cell: &Cell, m: &RunMetrics) -> Self {
        Self {
            cell: cell.index,
            repeat: cell.repeat,
            seed: cell.seed,
            aggregator: cell.aggregator.clone(),
            clients: cell.clients,
            anomaly_rate: cell.anomaly_rate,
            epsilon: cell.epsilon.to_string(),
            missing_rate: cell.missing_rate,
            prc: cell.prc,
            mae: m.test.mae,
            rmse: m.test.rmse,
            maape: m.test.maape,
            baseline_mae: m.baseline.mae,
            baseline_rmse: m.baseline.rmse,
            baseline_maape: m.baseline.maape,
            mia_sr: m.mia.success_rate,
            communication_mb: m.communication_mb,
            attacker_exclusion_rate: m.attacker_exclusion_rate,
            rejected_uploads: m.rejected_uploads,
            final_digest: m.final_digest.clone(),
        }
    }
}

/// Grid cells in a fixed order: aggregator, clients, anomaly rate, epsilon,
/// missing rate, prC, then repeat innermost.
pub fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let s = &spec.sweep;
    let aggs = s.aggregator.clone().unwrap_or_else(|| vec![String::from(spec.fl.aggregator.name())]);
    let clients = s.clients.clone().unwrap_or_else(|| vec![spec.fl.clients]);
    let anomaly = s.anomaly_rate.clone().unwrap_or_else(|| vec![spec.fl.attack.anomaly_rate]);
    let eps = s.epsilon.clone().unwrap_or_else(|| vec![spec.epsilon()]);
    let mr = s.missing_rate.clone().unwrap_or_else(|| vec![spec.mask.total_rate]);
    let prc = s.prc.clone().unwrap_or_else(|| vec![1.0 - spec.mask.discrete_ratio]);
    let repeats = s.repeats.unwrap_or(1);
    let mut out = Vec::new();
    for a in &aggs {
        for &n in &clients {
            for &p in &anomaly {
                for &e in &eps {
                    for &m in &mr {
                        for &c in &prc {
                            for r in 0..repeats {
                                let index = out.len();
                                out.push(Cell {
                                    index,
                                    repeat: r,
                                    seed: derive_u64(spec.seed, "cell", index as u64) & MAX_SEED,
                                    aggregator: a.clone(),
                                    clients: n,
                                    anomaly_rate: p,
                                    epsilon: e,
                                    missing_rate: m,
                                    prc: c,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// The base spec with a cell's overrides applied.
pub fn cell_spec(base: &ExperimentSpec, cell: &Cell) -> AppResult<ExperimentSpec> {
    let mut s = base.clone();
    s.sweep = Default::default();
    s.seed = cell.seed;
    s.fl.aggregator = parse_aggregator(&cell.aggregator)?;
    s.fl.clients = cell.clients;
    s.fl.attack.anomaly_rate = cell.anomaly_rate;
    s.set_epsilon(cell.epsilon);
    s.mask.total_rate = cell.missing_rate;
    s.mask.discrete_ratio = 1.0 - cell.prc;
    s.out = cell_dir(&base.out, cell.index);
    s.validate()?;
    Ok(s)
}

pub fn cell_dir(out: &Path, index: usize) -> PathBuf {
    out.join("cells").join(format!("cell_{index:04}"))
}

/// Metrics of a finished cell run with the same settings, if any.
fn cached(dir: &Path, spec_text: &str) -> Option<RunMetrics> {
    let prev = fs::read_to_string(dir.join(CELL_SPEC_FILE)).ok()?;
    if prev != spec_text {
        return None;
    }
    let text = fs::read_to_string(dir.join(METRICS_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

pub struct SweepSummary {
    pub rows: Vec<ResultRow>,
    pub ran: usize,
    pub reused: usize,
}

fn run_cell(base: &ExperimentSpec, cell: &Cell) -> AppResult<(RunMetrics, bool)> {
    let spec = cell_spec(base, cell)?;
    let text = spec.to_toml();
    if let Some(m) = cached(&spec.out, &text) {
        return Ok((m, false));
    }
    let outcome = experiment::run_experiment(&spec)
        .map_err(|e| AppError::Runtime(format!("cell {}: {e}", cell.index)))?;
    experiment::write_outputs(&spec.out, &outcome)?;
    let path = spec.out.join(CELL_SPEC_FILE);
    fs::write(&path, text).map_err(AppError::path(path))?;
    Ok((outcome.metrics, true))
}

/// Run (or reuse) every cell with up to `jobs` worker threads and write the
/// aggregated results table.
pub fn run_sweep(spec: &ExperimentSpec, jobs: usize) -> AppResult<SweepSummary> {
    spec.validate()?;
    let grid = cells(spec);
    for c in &grid {
        cell_spec(spec, c)?;
    }
    fs::create_dir_all(&spec.out).map_err(AppError::path(&spec.out))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<AppResult<(RunMetrics, bool)>>>> = Mutex::new(grid.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, grid.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = grid.get(k) else { break };
                let r = run_cell(spec, cell);
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    let mut rows = Vec::with_capacity(grid.len());
    let (mut ran, mut reused) = (0, 0);
    for (cell, r) in grid.iter().zip(results.into_inner().unwrap()) {
        let (m, fresh) = r.expect("every cell visited")?;
        if fresh {
            ran += 1;
        } else {
            reused += 1;
        }
        rows.push(ResultRow::new(cell, &m));
    }
    write_results(&spec.out.join(RESULTS_FILE), &rows)?;
    Ok(SweepSummary { rows, ran, reused })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> AppResult<()> {
    let file = fs::File::create(path).map_err(AppError::path(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(AppError::path(path))
}

pub fn read_results(path: &Path) -> AppResult<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| AppError::Input { path: path.into(), reason: e.to_string() })?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| AppError::Input { path: path.into(), reason: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_a_cartesian_product_with_distinct_seeds() {
        let mut spec = ExperimentSpec::default();
        spec.sweep.missing_rate = Some(vec![0.2, 0.5]);
        spec.sweep.epsilon = Some(vec![Epsilon(Some(20.0)), Epsilon(None)]);
        spec.sweep.repeats = Some(3);
        let g = cells(&spec);
        assert_eq!(g.len(), 12);
        assert_eq!(g.iter().map(|c| c.index).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
        let mut seeds: Vec<u64> = g.iter().map(|c| c.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
        assert_eq!(cells(&spec), g);
        let s = cell_spec(&spec, &g[9]).unwrap();
        assert!(!s.fl.dp_enabled);
        assert_eq!(s.mask.total_rate, 0.5);
    }
}
