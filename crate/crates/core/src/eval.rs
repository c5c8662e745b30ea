//! Attack injection and evaluation metrics.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::{mae_loss, Mas2s, Sequence};
use crate::orchestrator::RoundRecord;
use crate::params::ModelParams;

pub const BYTES_PER_MB: f64 = 1_048_576.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Fraction `P` of clients that are adversarial.
    pub anomaly_rate: f64,
    /// Fraction of each adversarial upload's coordinates that is negated.
    pub flip_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { anomaly_rate: 0.0, flip_fraction: 0.2 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.anomaly_rate) || !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(Error::InvalidConfig(String::from("attack rates must lie in [0, 1]")));
        }
        Ok(())
    }

    /// `round(P N)` distinct adversarial client ids, ascending.
    pub fn select_attackers<R: Rng + ?Sized>(&self, clients: usize, rng: &mut R) -> Vec<usize> {
        let k = math::round_count(self.anomaly_rate * clients as f64).min(clients);
        let mut ids = index::sample(rng, clients, k).into_vec();
        ids.sort_unstable();
        ids
    }
}

/// Negate `round(fraction n)` uniformly chosen coordinates.
pub fn sign_flip<R: Rng + ?Sized>(params: &ModelParams, fraction: f64, rng: &mut R) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(String::from("flip fraction must lie in [0, 1]")));
    }
    let n = params.param_count();
    let k = math::round_count(fraction * n as f64).min(n);
    let mut values = params.flatten();
    for i in index::sample(rng, n, k) {
        values[i] = -values[i];
    }
    params.with_values(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub maape: f64,
    pub count: usize,
}

/// Running sums so metrics can pool many windows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    abs: f64,
    sq: f64,
    arctan: f64,
    count: usize,
}

/// `arctan(|(y - yhat)/y|)`, with `pi/2` for `y = 0, yhat != 0` and 0 when both vanish.
pub fn maape_term(predicted: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if predicted == 0.0 {
            0.0
        } else {
            core::f64::consts::FRAC_PI_2
        }
    } else {
        math::atan(((truth - predicted) / truth).abs())
    }
}

impl MetricAccumulator {
    pub fn push(&mut self, predicted: f64, truth: f64) {
        let e = truth - predicted;
        self.abs += e.abs();
        self.sq += e * e;
        self.arctan += maape_term(predicted, truth);
        self.count += 1;
    }

    /// Add the positions of `mask` equal to 1.
    pub fn push_masked(&mut self, predicted: &[f64], truth: &[f64], mask: &[u8]) -> Result<()> {
        if predicted.len() != truth.len() || truth.len() != mask.len() {
            return Err(Error::Shape("prediction, truth and mask lengths differ"));
        }
        for ((&p, &t), &m) in predicted.iter().zip(truth).zip(mask) {
            if m == 1 {
                self.push(p, t);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<ImputationMetrics> {
        if self.count == 0 {
            return Err(Error::Empty("no missing positions to evaluate"));
        }
        let n = self.count as f64;
        Ok(ImputationMetrics { mae: self.abs / n, rmse: math::sqrt(self.sq / n), maape: self.arctan / n, count: self.count })
    }
}

/// MAE, RMSE and MAAPE over the missing positions (`mask == 1`).
pub fn imputation_metrics(predicted: &[f64], truth: &[f64], mask: &[u8]) -> Result<ImputationMetrics> {
    let mut acc = MetricAccumulator::default();
    acc.push_masked(predicted, truth, mask)?;
    acc.finish()
}

/// `sum |(x_i - x_bar)(r_i - r_bar)| / sum (x_i - x_bar)^2`.
pub fn sensitivity(xs: &[f64], rmses: &[f64]) -> Result<f64> {
    if xs.len() != rmses.len() || xs.len() < 2 {
        return Err(Error::InvalidConfig(String::from("sensitivity needs two equal-length series of at least 2 points")));
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let rm = rmses.iter().sum::<f64>() / n;
    let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if !(den > 0.0) {
        return Err(Error::InvalidConfig(String::from("sensitivity needs at least two distinct x values")));
    }
    Ok(xs.iter().zip(rmses).map(|(x, r)| ((x - xm) * (r - rm)).abs()).sum::<f64>() / den)
}

/// `(1 - MAAPE_dp)/(1 - MAAPE_nodp) * 100`.
pub fn utility(maape_dp: f64, maape_nodp: f64) -> f64 {
    (1.0 - maape_dp) / (1.0 - maape_nodp) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Threshold {
    Swept,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    pub member_count: usize,
    pub nonmember_count: usize,
    pub threshold: Threshold,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self { member_count: 500, nonmember_count: 500, threshold: Threshold::Swept }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Percentage of correct member/non-member decisions.
    pub success_rate: f64,
    pub threshold: f64,
}

/// Decide "member" iff loss < threshold and score the decisions.
pub fn mia_from_losses(members: &[f64], nonmembers: &[f64], threshold: Threshold) -> Result<MiaResult> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Empty("membership inference needs members and non-members"));
    }
    let total = (members.len() + nonmembers.len()) as f64;
    let score = |tau: f64| {
        let hit_m = members.iter().filter(|&&l| l < tau).count();
        let hit_n = nonmembers.iter().filter(|&&l| l >= tau).count();
        (hit_m + hit_n) as f64 / total * 100.0
    };
    match threshold {
        Threshold::Fixed(tau) => Ok(MiaResult { success_rate: score(tau), threshold: tau }),
        Threshold::Swept => {
            // Sweep tau over every observed loss plus +inf in one sorted pass.
            let mut all: Vec<(f64, bool)> =
                members.iter().map(|&l| (l, true)).chain(nonmembers.iter().map(|&l| (l, false))).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut correct = nonmembers.len();
            let mut best = (correct, all[0].0);
            let mut i = 0;
            while i < all.len() {
                let v = all[i].0;
                while i < all.len() && all[i].0 == v {
                    if all[i].1 {
                        correct += 1;
                    } else {
                        correct -= 1;
                    }
                    i += 1;
                }
                if correct > best.0 {
                    best = (correct, all.get(i).map_or(f64::INFINITY, |x| x.0));
                }
            }
            Ok(MiaResult { success_rate: best.0 as f64 / total * 100.0, threshold: best.1 })
        }
    }
}

/// Per-sample loss `L_a = (1/T) sum |f(X) - Y|`.
pub fn sample_losses(model: &Mas2s, params: &ModelParams, samples: &[Sequence]) -> Result<Vec<f64>> {
    samples.iter().map(|s| mae_loss(&model.predict(params, &s.inputs)?, &s.targets)).collect()
}

pub fn mia_evaluate(
    model: &Mas2s,
    params: &ModelParams,
    members: &[Sequence],
    nonmembers: &[Sequence],
    cfg: &MiaConfig,
) -> Result<MiaResult> {
    let m = sample_losses(model, params, &members[..cfg.member_count.min(members.len())])?;
    let n = sample_losses(model, params, &nonmembers[..cfg.nonmember_count.min(nonmembers.len())])?;
    mia_from_losses(&m, &n, cfg.threshold)
}

/// Fill missing positions of the target channel with the mean of the
/// observed ones, or `fallback` when none is observed.
pub fn mean_impute(inputs: &[f64], features: usize, fallback: f64) -> Vec<f64> {
    let rows = inputs.chunks_exact(features);
    let observed: Vec<f64> = rows.clone().filter(|r| r[features - 1] == 0.0).map(|r| r[0]).collect();
    let mean = if observed.is_empty() { fallback } else { observed.iter().sum::<f64>() / observed.len() as f64 };
    rows.map(|r| if r[features - 1] == 0.0 { r[0] } else { mean }).collect()
}

/// Total traffic in MB (2^20 bytes): every upload, with its proof, plus every
/// per-client download.
pub fn communication_overhead(records: &[RoundRecord]) -> f64 {
    records.iter().map(|r| r.total_bytes() as f64).sum::<f64>() / BYTES_PER_MB
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayerSpec;
    use crate::rng::derive_rng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sign_flip_counts() {
        let p = ModelParams::new(vec![(LayerSpec::new("w", vec![50]).unwrap(), (1..=50).map(f64::from).collect())]).unwrap();
        let mut rng = derive_rng(0, "flip", 0);
        assert_eq!(sign_flip(&p, 0.0, &mut rng).unwrap(), p);
        let all = sign_flip(&p, 1.0, &mut rng).unwrap();
        assert_eq!(all, p.scaled(-1.0));
        assert_eq!(sign_flip(&all, 1.0, &mut rng).unwrap(), p);
        let some = sign_flip(&p, 0.2, &mut rng).unwrap();
        assert_eq!(some.as_slice().iter().filter(|&&v| v < 0.0).count(), 10);
        let a = AttackConfig { anomaly_rate: 0.3, flip_fraction: 0.2 }.select_attackers(16, &mut rng);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn metric_examples() {
        let m = imputation_metrics(&[1.0, 2.0], &[1.0, 2.0], &[1, 1]).unwrap();
        assert_eq!((m.mae, m.rmse, m.maape), (0.0, 0.0, 0.0));
        let m = imputation_metrics(&[2.0, 4.0, 9.0], &[1.0, 2.0, 9.0], &[1, 1, 0]).unwrap();
        assert!((m.maape - core::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(m.count, 2);
        assert_eq!(maape_term(0.3, 0.0), core::f64::consts::FRAC_PI_2);
        assert!(imputation_metrics(&[1.0], &[1.0], &[0]).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let xs = [0.2, 0.5, 0.7];
        assert!((sensitivity(&xs, &[0.4, 1.0, 1.4]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(sensitivity(&xs, &[0.3; 3]).unwrap(), 0.0);
        assert!(sensitivity(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(0.2, 0.2), 100.0);
        assert_eq!(utility(0.5, 0.0), 50.0);
    }

    #[test]
    fn mia_examples() {
        let r = mia_from_losses(&[0.0; 5], &[1.0; 5], Threshold::Fixed(0.5)).unwrap();
        assert_eq!(r.success_rate, 100.0);
        let r = mia_from_losses(&[0.0; 5], &[1.0; 5], Threshold::Swept).unwrap();
        assert_eq!(r.success_rate, 100.0);
        let mut rates = Vec::new();
        for seed in 0..20 {
            let mut rng = derive_rng(seed, "mia", 0);
            let m: Vec<f64> = (0..500).map(|_| rng.random()).collect();
            let n: Vec<f64> = (0..500).map(|_| rng.random()).collect();
            rates.push(mia_from_losses(&m, &n, Threshold::Swept).unwrap().success_rate);
        }
        rates.sort_by(f64::total_cmp);
        assert!((rates[10] - 50.0).abs() <= 5.0, "median {}", rates[10]);
    }

    #[test]
    fn mean_impute_fills_missing() {
        // rows: (value, mask)
        let x = [0.2, 0.0, -1.0, 1.0, 0.6, 0.0];
        assert_eq!(mean_impute(&x, 2, 0.5), vec![0.2, 0.4, 0.6]);
        assert_eq!(mean_impute(&[-1.0, 1.0], 2, 0.5), vec![0.5]);
    }

    proptest! {
        #[test]
        fn swept_dominates_fixed(m in prop::collection::vec(0.0f64..1.0, 1..30), n in prop::collection::vec(0.0f64..1.0, 1..30), tau in -0.5f64..1.5) {
            let s = mia_from_losses(&m, &n, Threshold::Swept).unwrap();
            let f = mia_from_losses(&m, &n, Threshold::Fixed(tau)).unwrap();
            prop_assert!(s.success_rate >= f.success_rate);
            prop_assert!((0.0..=100.0).contains(&s.success_rate));
            let again = mia_from_losses(&m, &n, Threshold::Fixed(s.threshold)).unwrap();
            prop_assert_eq!(again.success_rate, s.success_rate);
        }

        #[test]
        fn maape_bounded_and_mae_le_rmse(p in prop::collection::vec(-2.0f64..2.0, 1..40), seed in 0u64..1000) {
            let mut rng = derive_rng(seed, "m", 0);
            let t: Vec<f64> = p.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = imputation_metrics(&p, &t, &vec![1; p.len()]).unwrap();
            prop_assert!(m.mae <= m.rmse + 1e-12);
            prop_assert!((0.0..=core::f64::consts::FRAC_PI_2).contains(&m.maape));
        }
    }
}
