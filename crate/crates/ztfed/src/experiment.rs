//! Full protocol runs: data preparation, simulation and evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ztfed_core::data::{
    assign_round_robin, mask_dataset, split_indices, synth_wind, MaskedWindow, WindDataset, MODEL_INPUTS,
};
use ztfed_core::eval::{communication_overhead, mia_evaluate, ImputationMetrics, MiaResult};
use ztfed_core::model::{Mas2s, Mas2sConfig, Sequence};
use ztfed_core::orchestrator::{evaluate_imputation, evaluate_mean_baseline, ClientData, RoundRecord, Simulation};
use ztfed_core::rng::{derive_rng, derive_u64};
use ztfed_core::ModelParams;

use crate::checkpoint;
use crate::csvio::load_csv;
use crate::error::{AppError, AppResult};
use crate::spec::{Epsilon, ExperimentSpec};

pub const METRICS_FILE: &str = "metrics.json";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ztck";

/// Fallback mean when a window has no observed target value.
const BASELINE_FALLBACK: f64 = 0.5;

/// Summary of one run. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub aggregator: String,
    pub clients: usize,
    pub missing_rate: f64,
    #[serde(rename = "prC")]
    pub prc: f64,
    pub epsilon: Epsilon,
    pub anomaly_rate: f64,
    pub test: ImputationMetrics,
    pub baseline: ImputationMetrics,
    pub mia: MiaResult,
    pub communication_mb: f64,
    pub rounds: usize,
    pub aborted_rounds: usize,
    pub rejected_uploads: usize,
    /// Mean share of attacker uploads left out of aggregation per round.
    pub attacker_exclusion_rate: Option<f64>,
    pub param_count: usize,
    pub final_digest: String,
}

pub struct Outcome {
    pub metrics: RunMetrics,
    pub records: Vec<RoundRecord>,
    pub model: Mas2sConfig,
    pub global: ModelParams,
}

/// Farms from `data.csv_dir` (every `*.csv`, sorted by name) or the
/// synthetic generator seeded with the master seed.
pub fn load_datasets(spec: &ExperimentSpec) -> AppResult<Vec<WindDataset>> {
    let t = spec.model.sequence_length;
    match &spec.data.csv_dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(AppError::path(dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(AppError::Input { path: dir.clone(), reason: String::from("no .csv files") });
            }
            files.iter().enumerate().map(|(i, p)| load_csv(p, i, t)).collect()
        }
        None => Ok(synth_wind(&spec.data.synth, spec.seed)?),
    }
}

/// Masked, split local data for every client. Client `i` holds farm
/// `i mod farms`; its masks and split use streams keyed by `i`.
pub fn build_clients(spec: &ExperimentSpec, datasets: &[WindDataset]) -> AppResult<Vec<ClientData>> {
    let farms = assign_round_robin(spec.fl.clients, datasets.len());
    farms
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let windows = mask_dataset(&datasets[f], &spec.mask, derive_u64(spec.seed, "client-mask", i as u64))?;
            let split = split_indices(
                windows.len(),
                spec.data.train_fraction,
                spec.data.val_fraction,
                &mut derive_rng(spec.seed, "split", i as u64),
            )?;
            if split.train.is_empty() || split.test.is_empty() {
                return Err(AppError::Config(format!(
                    "client {i}: {} windows leave an empty train or test split",
                    windows.len()
                )));
            }
            let train = split.train.iter().map(|&k| windows[k].sequence.clone()).collect();
            let test = split.test.iter().map(|&k| windows[k].clone()).collect();
            Ok(ClientData { train, test })
        })
        .collect()
}

/// Take one item from each group in turn until `limit` or exhaustion.
fn interleave<T: Clone>(groups: &[&[T]], limit: usize) -> Vec<T> {
    let mut out = Vec::new();
    let longest = groups.iter().map(|g| g.len()).max().unwrap_or(0);
    'outer: for k in 0..longest {
        for g in groups {
            if out.len() == limit {
                break 'outer;
            }
            if let Some(x) = g.get(k) {
                out.push(x.clone());
            }
        }
    }
    out
}

pub fn run_experiment(spec: &ExperimentSpec) -> AppResult<Outcome> {
    spec.validate()?;
    let datasets = load_datasets(spec)?;
    run_on(spec, &datasets)
}

/// Run against already loaded farms.
pub fn run_on(spec: &ExperimentSpec, datasets: &[WindDataset]) -> AppResult<Outcome> {
    let data = build_clients(spec, datasets)?;
    let mut fl = spec.fl;
    fl.seed = spec.seed;
    let sim = Simulation::new(fl, spec.model, data.clone())?;
    let run = sim.run()?;
    let model = Mas2s::bind(spec.model, run.global.specs())?;

    let test: Vec<MaskedWindow> = data.iter().flat_map(|c| c.test.iter().cloned()).collect();
    let metrics_test = evaluate_imputation(&model, &run.global, &test)?;
    let baseline = evaluate_mean_baseline(&test, MODEL_INPUTS, BASELINE_FALLBACK)?;

    // Equal-sized member and non-member sets, so always answering one class
    // scores exactly 50%.
    let member_groups: Vec<&[Sequence]> = run.participated.iter().map(|&i| data[i].train.as_slice()).collect();
    let test_seqs: Vec<Vec<Sequence>> = data.iter().map(|c| c.test.iter().map(|w| w.sequence.clone()).collect()).collect();
    let nonmember_groups: Vec<&[Sequence]> = test_seqs.iter().map(Vec::as_slice).collect();
    let available = |g: &[&[Sequence]]| g.iter().map(|x| x.len()).sum::<usize>();
    let n = spec.mia.member_count.min(spec.mia.nonmember_count).min(available(&member_groups)).min(available(&nonmember_groups));
    let members = interleave(&member_groups, n);
    let nonmembers = interleave(&nonmember_groups, n);
    let mia = mia_evaluate(&model, &run.global, &members, &nonmembers, &spec.mia)?;

    let rates: Vec<f64> = run.records.iter().filter_map(RoundRecord::attacker_exclusion_rate).collect();
    let metrics = RunMetrics {
        seed: spec.seed,
        aggregator: String::from(fl.aggregator.name()),
        clients: fl.clients,
        missing_rate: spec.mask.total_rate,
        prc: 1.0 - spec.mask.discrete_ratio,
        epsilon: spec.epsilon(),
        anomaly_rate: fl.attack.anomaly_rate,
        test: metrics_test,
        baseline,
        mia,
        communication_mb: communication_overhead(&run.records),
        rounds: run.records.len(),
        aborted_rounds: run.records.iter().filter(|r| r.aborted).count(),
        rejected_uploads: run.records.iter().flat_map(|r| &r.uploads).filter(|u| !u.accepted).count(),
        attacker_exclusion_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        param_count: run.global.param_count(),
        final_digest: run.global.digest().to_hex(),
    };
    Ok(Outcome { metrics, records: run.records, model: spec.model, global: run.global })
}

pub fn metrics_json(m: &RunMetrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

/// Write the round ledger, metrics and checkpoint into `dir`.
pub fn write_outputs(dir: &Path, outcome: &Outcome) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(AppError::path(dir))?;
    let rounds = dir.join(ROUNDS_FILE);
    let io = |p: &Path| AppError::path(p.to_path_buf());
    let mut w = BufWriter::new(File::create(&rounds).map_err(io(&rounds))?);
    for r in &outcome.records {
        serde_json::to_writer(&mut w, r).map_err(|e| AppError::Runtime(e.to_string()))?;
        w.write_all(b"\n").map_err(io(&rounds))?;
    }
    w.flush().map_err(io(&rounds))?;
    let metrics = dir.join(METRICS_FILE);
    fs::write(&metrics, metrics_json(&outcome.metrics)).map_err(io(&metrics))?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.model, &outcome.global)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleave_round_robin() {
        let a = [1, 2, 3];
        let b = [10];
        assert_eq!(interleave(&[&a[..], &b[..]], 10), vec![1, 10, 2, 3]);
        assert_eq!(interleave(&[&a[..], &b[..]], 2), vec![1, 10]);
        assert!(interleave::<i32>(&[], 3).is_empty());
    }
}
