//! Summary tables over sweep results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ztfed_core::eval::{sensitivity, utility};

use crate::error::{AppError, AppResult};
use crate::sweep::{read_results, ResultRow, RESULTS_FILE};

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean(std)` with four decimals, e.g. `0.0384(0.0049)`.
pub fn fmt_mean_std(xs: &[f64]) -> String {
    let (m, s) = mean_std(xs);
    format!("{m:.4}({s:.4})")
}

/// Grid point identity, repeats excluded. Floats are keyed by their text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub aggregator: String,
    pub clients: usize,
    pub anomaly_rate: String,
    pub epsilon: String,
    pub missing_rate: String,
    pub prc: String,
}

impl GroupKey {
    fn of(r: &ResultRow) -> Self {
        Self {
            aggregator: r.aggregator.clone(),
            clients: r.clients,
            anomaly_rate: r.anomaly_rate.to_string(),
            epsilon: r.epsilon.clone(),
            missing_rate: r.missing_rate.to_string(),
            prc: r.prc.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub key: GroupKey,
    pub rows: Vec<ResultRow>,
    /// Against the matching no-privacy group, when the grid has one.
    pub utility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    /// `missing_rate` or `prC`.
    pub axis: &'static str,
    /// Values of the other axes, rendered.
    pub context: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub sensitivities: Vec<Sensitivity>,
}

fn col(rows: &[ResultRow], f: impl Fn(&ResultRow) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

fn mean(xs: &[f64]) -> f64 {
    mean_std(xs).0
}

pub fn summarize(rows: &[ResultRow]) -> Report {
    let mut by_key: BTreeMap<GroupKey, Vec<ResultRow>> = BTreeMap::new();
    for r in rows {
        by_key.entry(GroupKey::of(r)).or_default().push(r.clone());
    }
    let maape_of = |k: &GroupKey| by_key.get(k).map(|rs| mean(&col(rs, |r| r.maape)));
    let groups = by_key
        .iter()
        .map(|(k, rs)| {
            let nodp = GroupKey { epsilon: String::from("none"), ..k.clone() };
            let utility = maape_of(&nodp).map(|base| utility(mean(&col(rs, |r| r.maape)), base));
            GroupSummary { key: k.clone(), rows: rs.clone(), utility }
        })
        .collect::<Vec<_>>();

    let mut sensitivities = Vec::new();
    for axis in ["missing_rate", "prC"] {
        let mut lines: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for g in &groups {
            let k = &g.key;
            let (x, ctx) = if axis == "missing_rate" {
                (g.rows[0].missing_rate, format!("{} N={} P={} eps={} prC={}", k.aggregator, k.clients, k.anomaly_rate, k.epsilon, k.prc))
            } else {
                (g.rows[0].prc, format!("{} N={} P={} eps={} mr={}", k.aggregator, k.clients, k.anomaly_rate, k.epsilon, k.missing_rate))
            };
            lines.entry(ctx).or_default().push((x, mean(&col(&g.rows, |r| r.rmse))));
        }
        for (context, pts) in lines {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(value) = sensitivity(&xs, &ys) {
                sensitivities.push(Sensitivity { axis, context, value });
            }
        }
    }
    Report { groups, sensitivities }
}

/// Plain-text rendering: one table row per grid point, then sensitivities.
pub fn render(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "aggregator | N | P | epsilon | missing_rate | prC | runs | MAE | RMSE | MAAPE | baseline RMSE | MIA-SR | utility | CO (MB)"
    );
    for g in &report.groups {
        let k = &g.key;
        let r = &g.rows;
        let _ = writeln!(
            s,
            "{} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {}",
            k.aggregator,
            k.clients,
            k.anomaly_rate,
            k.epsilon,
            k.missing_rate,
            k.prc,
            r.len(),
            fmt_mean_std(&col(r, |x| x.mae)),
            fmt_mean_std(&col(r, |x| x.rmse)),
            fmt_mean_std(&col(r, |x| x.maape)),
            fmt_mean_std(&col(r, |x| x.baseline_rmse)),
            fmt_mean_std(&col(r, |x| x.mia_sr)),
            g.utility.map_or_else(|| String::from("-"), |u| format!("{u:.2}")),
            fmt_mean_std(&col(r, |x| x.communication_mb)),
        );
    }
    if !report.sensitivities.is_empty() {
        let _ = writeln!(s, "\nsensitivity | context | S");
        for v in &report.sensitivities {
            let _ = writeln!(s, "S_{},rmse | {} | {:.4}", v.axis, v.context, v.value);
        }
    }
    s
}

/// Load `<dir>/results.csv` and summarize it.
pub fn report_dir(dir: &Path) -> AppResult<Report> {
    let path = dir.join(RESULTS_FILE);
    if !path.is_file() {
        return Err(AppError::Input {
            path: dir.to_path_buf(),
            reason: format!("no {RESULTS_FILE} found; run `ztfed sweep` with this output directory first"),
        });
    }
    let rows = read_results(&path)?;
    if rows.is_empty() {
        return Err(AppError::Input { path, reason: String::from("results table has no rows") });
    }
    Ok(summarize(&rows))
}
