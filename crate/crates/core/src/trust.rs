//! Dynamic trust-aware aggregation and baseline aggregators.
//!
//! The trust pipeline runs cosine similarity, sharpening, a top-k trust
//! graph, damped propagation, MAD outlier filtering and finally a
//! coordinatewise median over the surviving clients.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::ModelParams;

/// Floor on the MAD so a degenerate spread never excludes everyone below median.
pub const MAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtaaConfig {
    pub neighbors: usize,
    pub sharpening: f64,
    pub damping: f64,
    pub convergence: f64,
    pub mad_coefficient: f64,
    pub max_iterations: usize,
}

impl Default for DtaaConfig {
    fn default() -> Self {
        Self { neighbors: 3, sharpening: 2.0, damping: 0.15, convergence: 1e-4, mad_coefficient: 3.0, max_iterations: 1000 }
    }
}

impl DtaaConfig {
    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.neighbors == 0 || self.neighbors >= clients {
            return Err(Error::InvalidConfig(format!(
                "neighbors must lie in [1, {}), got {}",
                clients, self.neighbors
            )));
        }
        if !(self.sharpening > 0.0) {
            return Err(Error::InvalidConfig(String::from("sharpening must be positive")));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidConfig(String::from("damping must lie in (0, 1)")));
        }
        if !(self.convergence > 0.0) || !(self.mad_coefficient > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(String::from(
                "convergence, mad_coefficient and max_iterations must be positive",
            )));
        }
        Ok(())
    }
}

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub client: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustReport {
    pub similarity: Matrix,
    pub adjacency: Matrix,
    pub initial_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub mad_threshold: f64,
    pub selected: Vec<usize>,
    pub excluded: Vec<Exclusion>,
}

fn check_updates(updates: &[ModelParams], min: usize) -> Result<()> {
    if updates.len() < min {
        return Err(Error::InvalidConfig(format!("need at least {min} updates, got {}", updates.len())));
    }
    if updates.iter().any(|u| !u.same_layout(&updates[0])) {
        return Err(Error::LayoutMismatch("client updates have differing layouts"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn similarity_matrix(updates: &[ModelParams]) -> Result<Matrix> {
    check_updates(updates, 2)?;
    let n = updates.len();
    let norms: Vec<f64> = updates.iter().map(|u| u.l2_norm()).collect();
    if let Some(i) = norms.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Client { client: i, reason: String::from("update has zero norm") });
    }
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = (dot(updates[i].as_slice(), updates[j].as_slice()) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(s)
}

/// Clamp negatives to zero, then raise to `r`.
pub fn sharpen(s: &Matrix, r: f64) -> Matrix {
    s.iter().map(|row| row.iter().map(|&v| math::powf(v.max(0.0), r)).collect()).collect()
}

/// Keep each row's `k` largest off-diagonal entries.
///
/// Ties go to the nearest following index, wrapping around, so row 0 keeps
/// its lowest-index neighbors and a fully tied matrix yields a circulant
/// graph in which every client has in-degree `k`.
pub fn build_graph(ts: &Matrix, k: usize) -> Matrix {
    let n = ts.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut cols: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let offset = |j: usize| (j + n - i) % n;
        cols.sort_by(|&x, &y| ts[i][y].total_cmp(&ts[i][x]).then(offset(x).cmp(&offset(y))));
        for &j in cols.iter().take(k) {
            a[i][j] = ts[i][j];
        }
    }
    a
}

pub fn initial_trust(a: &Matrix) -> Result<Vec<f64>> {
    let rows: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let total: f64 = rows.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Empty("trust graph has no positive edges"));
    }
    Ok(rows.into_iter().map(|r| r / total).collect())
}

fn column_normalized(a: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = a.clone();
    for j in 0..n {
        let col: f64 = (0..n).map(|i| a[i][j]).sum();
        for row in out.iter_mut() {
            row[j] = if col > 0.0 { row[j] / col } else { 0.0 };
        }
    }
    out
}

/// Returns `(t, iterations, converged)`.
pub fn propagate_trust(a: &Matrix, t0: &[f64], cfg: &DtaaConfig) -> (Vec<f64>, usize, bool) {
    let n = t0.len();
    let a_hat = column_normalized(a);
    let d = cfg.damping;
    let mut t = t0.to_vec();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let next: Vec<f64> =
            (0..n).map(|i| (1.0 - d) * dot(&a_hat[i], &t) + d * t0[i]).collect();
        iterations += 1;
        let delta: f64 = next.iter().zip(&t).map(|(x, y)| (x - y).abs()).sum();
        t = next;
        if delta < cfg.convergence {
            converged = true;
            break;
        }
    }
    let sum: f64 = t.iter().sum();
    if sum > 0.0 {
        t.iter_mut().for_each(|v| *v /= sum);
    }
    (t, iterations, converged)
}

/// Returns the retained client indices (ascending) and the cut-off.
pub fn mad_filter(t: &[f64], k_m: f64) -> Result<(Vec<usize>, f64)> {
    if t.is_empty() {
        return Err(Error::Empty("trust scores"));
    }
    let med = math::median(&mut t.to_vec());
    let mad = math::median(&mut t.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
    let threshold = med - k_m * mad.max(MAD_FLOOR);
    let mut selected: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= threshold).collect();
    if selected.is_empty() {
        let best = (0..t.len()).fold(0, |b, i| if t[i] > t[b] { i } else { b });
        selected.push(best);
    }
    Ok((selected, threshold))
}

fn per_coordinate(updates: &[&ModelParams], mut f: impl FnMut(&mut [f64]) -> f64) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::Empty("aggregation selection"))?;
    let len = first.param_count();
    let mut column = vec![0.0; updates.len()];
    let values = (0..len)
        .map(|k| {
            for (c, u) in column.iter_mut().zip(updates) {
                *c = u.as_slice()[k];
            }
            f(&mut column)
        })
        .collect();
    first.with_values(values)
}

/// Layer-by-layer coordinatewise median over the selected clients.
pub fn median_aggregate(updates: &[ModelParams], selected: &[usize]) -> Result<ModelParams> {
    if selected.iter().any(|&i| i >= updates.len()) {
        return Err(Error::InvalidConfig(String::from("selected client index out of range")));
    }
    let chosen: Vec<&ModelParams> = selected.iter().map(|&i| &updates[i]).collect();
    if chosen.iter().any(|u| !u.same_layout(chosen.first().copied().unwrap_or(u))) {
        return Err(Error::LayoutMismatch("client updates have differing layouts"));
    }
    per_coordinate(&chosen, math::median)
}

pub fn dtaa(updates: &[ModelParams], cfg: &DtaaConfig) -> Result<(ModelParams, TrustReport)> {
    check_updates(updates, 2)?;
    cfg.validate(updates.len())?;
    let similarity = similarity_matrix(updates)?;
    let adjacency = build_graph(&sharpen(&similarity, cfg.sharpening), cfg.neighbors);
    let initial_scores = initial_trust(&adjacency)?;
    let (scores, iterations_used, converged) = propagate_trust(&adjacency, &initial_scores, cfg);
    let (selected, mad_threshold) = mad_filter(&scores, cfg.mad_coefficient)?;
    let excluded = (0..updates.len())
        .filter(|i| !selected.contains(i))
        .map(|i| Exclusion {
            client: i,
            reason: format!("trust {:.6e} below MAD threshold {:.6e}", scores[i], mad_threshold),
        })
        .collect();
    let theta = median_aggregate(updates, &selected)?;
    Ok((
        theta,
        TrustReport { similarity, adjacency, initial_scores, scores, iterations_used, converged, mad_threshold, selected, excluded },
    ))
}

pub fn fedavg(updates: &[ModelParams]) -> Result<ModelParams> {
    check_updates(updates, 1)?;
    let refs: Vec<&ModelParams> = updates.iter().collect();
    let n = updates.len() as f64;
    per_coordinate(&refs, |c| c.iter().sum::<f64>() / n)
}

pub fn trimmed_mean(updates: &[ModelParams], trim_rate: f64) -> Result<ModelParams> {
    check_updates(updates, 1)?;
    if !(0.0..0.5).contains(&trim_rate) {
        return Err(Error::InvalidConfig(format!("trim rate must lie in [0, 0.5), got {trim_rate}")));
    }
    let n = updates.len();
    let cut = math::floor(trim_rate * n as f64) as usize;
    let refs: Vec<&ModelParams> = updates.iter().collect();
    per_coordinate(&refs, |c| {
        c.sort_unstable_by(f64::total_cmp);
        let kept = &c[cut..n - cut];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

/// Krum scores: sum of squared distances to the `n - f - 2` nearest others.
pub fn krum_scores(updates: &[ModelParams], f: usize) -> Result<Vec<f64>> {
    check_updates(updates, 1)?;
    let n = updates.len();
    if n < 2 * f + 3 {
        return Err(Error::InvalidConfig(format!("multikrum needs N >= 2f + 3, got N = {n}, f = {f}")));
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 =
                updates[i].as_slice().iter().zip(updates[j].as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            row.sort_unstable_by(f64::total_cmp);
            row[..n - f - 2].iter().sum()
        })
        .collect())
}

/// Average of the `m_select` clients with the lowest Krum score (ties to lower index).
pub fn multikrum_select(updates: &[ModelParams], f: usize, m_select: Option<usize>) -> Result<Vec<usize>> {
    let scores = krum_scores(updates, f)?;
    let n = updates.len();
    let m = m_select.unwrap_or(n - f);
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!("m_select must lie in [1, {n}], got {m}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    Ok(order)
}

pub fn multikrum(updates: &[ModelParams], f: usize, m_select: Option<usize>) -> Result<ModelParams> {
    let chosen = multikrum_select(updates, f, m_select)?;
    let picked: Vec<ModelParams> = chosen.iter().map(|&i| updates[i].clone()).collect();
    fedavg(&picked)
}

/// Coordinatewise median over every client.
pub fn median_all(updates: &[ModelParams]) -> Result<ModelParams> {
    check_updates(updates, 1)?;
    let all: Vec<usize> = (0..updates.len()).collect();
    median_aggregate(updates, &all)
}

/// Aggregation rules the server can run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aggregator {
    Dtaa,
    Fedavg,
    TrimmedMean { trim_rate: f64 },
    Multikrum { adversary_ratio: f64 },
    Median,
}

impl Aggregator {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Dtaa => "dtaa",
            Aggregator::Fedavg => "fedavg",
            Aggregator::TrimmedMean { .. } => "trimmed_mean",
            Aggregator::Multikrum { .. } => "multikrum",
            Aggregator::Median => "median",
        }
    }

    /// Parse a CLI-style name; baseline hyper-parameters take their defaults.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "dtaa" => Aggregator::Dtaa,
            "fedavg" => Aggregator::Fedavg,
            "trimmed_mean" | "tmean" | "t-mean" => Aggregator::TrimmedMean { trim_rate: 0.1 },
            "multikrum" => Aggregator::Multikrum { adversary_ratio: 0.3 },
            "median" => Aggregator::Median,
            _ => return None,
        })
    }

    /// Aggregate dense updates. Only the trust pipeline yields a report.
    /// Rounds too small for a rule (one upload for DTAA, fewer than three
    /// for MultiKrum) fall back to the plain mean.
    pub fn aggregate(&self, updates: &[ModelParams], cfg: &DtaaConfig) -> Result<(ModelParams, Option<TrustReport>)> {
        match *self {
            Aggregator::Dtaa if updates.len() < 2 => Ok((fedavg(updates)?, None)),
            Aggregator::Dtaa => {
                let mut c = *cfg;
                c.neighbors = c.neighbors.min(updates.len() - 1);
                dtaa(updates, &c).map(|(p, r)| (p, Some(r)))
            }
            Aggregator::Fedavg => Ok((fedavg(updates)?, None)),
            Aggregator::TrimmedMean { trim_rate } => Ok((trimmed_mean(updates, trim_rate)?, None)),
            Aggregator::Multikrum { .. } if updates.len() < 3 => Ok((fedavg(updates)?, None)),
            Aggregator::Multikrum { adversary_ratio } => {
                let n = updates.len();
                let f = (math::floor(adversary_ratio * n as f64) as usize).min(n.saturating_sub(3) / 2);
                Ok((multikrum(updates, f, None)?, None))
            }
            Aggregator::Median => Ok((median_all(updates)?, None)),
        }
    }
}
