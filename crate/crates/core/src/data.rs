//! Wind-farm windows, min-max scaling, hybrid missing masks and splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::Sequence;
use crate::rng::derive_rng;

/// Column order of every dataset; power is the imputation target.
pub const FEATURES: [&str; 6] = ["power", "speed", "direction", "temperature", "pressure", "density"];
pub const FEATURE_COUNT: usize = FEATURES.len();
/// Model inputs per step: the six features plus the mask channel.
pub const MODEL_INPUTS: usize = FEATURE_COUNT + 1;
/// Steps per day at 15-minute resolution.
pub const STEPS_PER_DAY: usize = 96;

/// Normalized windows of one farm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindDataset {
    pub farm_id: usize,
    pub sequence_length: usize,
    /// Each window is `T x 6` row-major, values in `[0, 1]`.
    pub windows: Vec<Vec<f64>>,
    pub feature_mins: [f64; FEATURE_COUNT],
    pub feature_maxs: [f64; FEATURE_COUNT],
}

impl WindDataset {
    /// Build from raw rows (`[power, speed, direction, temperature, pressure,
    /// density]`), cutting windows of `t` with stride `t` and normalizing each
    /// column over the whole farm. Trailing rows that do not fill a window
    /// are dropped.
    pub fn from_rows(farm_id: usize, rows: &[[f64; FEATURE_COUNT]], t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidConfig(String::from("sequence length must be positive")));
        }
        let n = rows.len() / t;
        if n == 0 {
            return Err(Error::InvalidConfig(format!("{} rows cannot fill one window of length {t}", rows.len())));
        }
        if let Some((r, c)) = rows.iter().enumerate().find_map(|(r, row)| row.iter().position(|v| !v.is_finite()).map(|c| (r, c))) {
            return Err(Error::InvalidConfig(format!("non-finite {} value at row {r}", FEATURES[c])));
        }
        let used = &rows[..n * t];
        let mut mins = [0.0; FEATURE_COUNT];
        let mut maxs = [0.0; FEATURE_COUNT];
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(FEATURE_COUNT);
        for c in 0..FEATURE_COUNT {
            let column: Vec<f64> = used.iter().map(|r| r[c]).collect();
            let (x, lo, hi) = minmax_normalize(&column);
            mins[c] = lo;
            maxs[c] = hi;
            cols.push(x);
        }
        let windows = (0..n)
            .map(|w| {
                let mut win = Vec::with_capacity(t * FEATURE_COUNT);
                for k in w * t..(w + 1) * t {
                    win.extend(cols.iter().map(|col| col[k]));
                }
                win
            })
            .collect();
        Ok(Self { farm_id, sequence_length: t, windows, feature_mins: mins, feature_maxs: maxs })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Normalized target channel of window `w`.
    pub fn power(&self, w: usize) -> Vec<f64> {
        self.windows[w].iter().step_by(FEATURE_COUNT).copied().collect()
    }

    /// Rows of raw (denormalized) values, windows concatenated in order.
    pub fn raw_rows(&self) -> Vec<[f64; FEATURE_COUNT]> {
        self.windows
            .iter()
            .flat_map(|w| w.chunks_exact(FEATURE_COUNT))
            .map(|row| core::array::from_fn(|c| denormalize(row[c], self.feature_mins[c], self.feature_maxs[c])))
            .collect()
    }
}

/// `(x - min)/(max - min)`; a constant column maps to 0.5.
pub fn minmax_normalize(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() {
        return (Vec::new(), 0.0, 0.0);
    }
    if max > min {
        (x.iter().map(|v| (v - min) / (max - min)).collect(), min, max)
    } else {
        (vec![0.5; x.len()], min, max)
    }
}

pub fn denormalize(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        min + v * (max - min)
    } else {
        min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub total_rate: f64,
    pub discrete_ratio: f64,
    pub run_length_min: usize,
    pub run_length_max: usize,
    pub placeholder: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { total_rate: 0.2, discrete_ratio: 0.5, run_length_min: 4, run_length_max: 16, placeholder: -1.0 }
    }
}

impl MaskConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.total_rate) || !(0.0..=1.0).contains(&self.discrete_ratio) {
            return Err(Error::InvalidConfig(String::from("mask rates must lie in [0, 1]")));
        }
        if self.run_length_min == 0 || self.run_length_min > self.run_length_max || self.run_length_max > t {
            return Err(Error::InvalidConfig(format!(
                "run lengths must satisfy 1 <= min <= max <= T, got [{}, {}] with T = {t}",
                self.run_length_min, self.run_length_max
            )));
        }
        if !self.placeholder.is_finite() {
            return Err(Error::InvalidConfig(String::from("placeholder must be finite")));
        }
        Ok(())
    }
}

/// `(mr_d, mr_c) = (r_m mr_t, (1 - r_m) mr_t)`.
pub fn split_rates(total_rate: f64, discrete_ratio: f64) -> (f64, f64) {
    let d = discrete_ratio * total_rate;
    (d, total_rate - d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridMask {
    /// 1 = missing.
    pub m: Vec<u8>,
    pub continuous_positions: Vec<usize>,
    pub discrete_positions: Vec<usize>,
}

impl HybridMask {
    pub fn missing_count(&self) -> usize {
        self.m.iter().filter(|&&b| b == 1).count()
    }

    /// Maximal runs `(start, len)` of the continuous set.
    pub fn continuous_runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &p in &self.continuous_positions {
            match runs.last_mut() {
                Some((s, l)) if *s + *l == p => *l += 1,
                _ => runs.push((p, 1)),
            }
        }
        runs
    }
}

fn run_lengths<R: Rng + ?Sized>(budget: usize, lo: usize, hi: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    let mut rem = budget;
    while rem > 0 {
        if rem < lo {
            out.push(rem);
            break;
        }
        let top = hi.min(rem);
        let ok: Vec<usize> = (lo..=top).filter(|&l| rem - l == 0 || rem - l >= lo).collect();
        let len = if ok.is_empty() { rng.random_range(lo..=top) } else { ok[rng.random_range(0..ok.len())] };
        out.push(len);
        rem -= len;
    }
    out
}

/// Sample a hybrid mask over `t` steps.
///
/// Budgets: `n = round(mr_t T)`, `n_c = min(round(mr_c T), n)`,
/// `n_d = n - n_c`. Continuous runs are non-adjacent with lengths drawn from
/// `[min, max]` and arranged by a uniform random composition of the free
/// gaps; discrete points are drawn without replacement from what is left.
pub fn generate_mask<R: Rng + ?Sized>(t: usize, cfg: &MaskConfig, rng: &mut R) -> Result<HybridMask> {
    cfg.validate(t)?;
    let n_total = math::round_count(cfg.total_rate * t as f64).min(t);
    let (_, mr_c) = split_rates(cfg.total_rate, cfg.discrete_ratio);
    let n_c = math::round_count(mr_c * t as f64).min(n_total);
    let n_d = n_total - n_c;
    let mut m = vec![0u8; t];
    let mut continuous = Vec::with_capacity(n_c);
    if n_c > 0 {
        let mut placed = false;
        for _ in 0..1000 {
            let mut lens = run_lengths(n_c, cfg.run_length_min, cfg.run_length_max, rng);
            let k = lens.len();
            let needed = n_c + k - 1;
            if needed > t {
                continue;
            }
            lens.shuffle(rng);
            // k + 1 gaps; interior gaps carry one mandatory separator.
            let slack = t - needed;
            let mut cuts: Vec<usize> = index::sample(rng, slack + k, k).into_vec();
            cuts.sort_unstable();
            let mut pos = 0;
            let mut prev = 0;
            for (r, (&cut, &len)) in cuts.iter().zip(&lens).enumerate() {
                let gap = cut - prev - if r == 0 { 0 } else { 1 };
                prev = cut;
                pos += gap + if r == 0 { 0 } else { 1 };
                for p in pos..pos + len {
                    m[p] = 1;
                    continuous.push(p);
                }
                pos += len;
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::InfeasibleMask("could not place continuous runs after 1000 attempts"));
        }
    }
    let free: Vec<usize> = (0..t).filter(|&p| m[p] == 0).collect();
    let mut discrete: Vec<usize> = index::sample(rng, free.len(), n_d).into_iter().map(|i| free[i]).collect();
    discrete.sort_unstable();
    for &p in &discrete {
        m[p] = 1;
    }
    Ok(HybridMask { m, continuous_positions: continuous, discrete_positions: discrete })
}

/// `x (1 - m) + pValue m`.
pub fn apply_mask(x: &[f64], mask: &HybridMask, placeholder: f64) -> Result<Vec<f64>> {
    if x.len() != mask.m.len() {
        return Err(Error::Shape("series and mask lengths differ"));
    }
    Ok(x.iter().zip(&mask.m).map(|(&v, &b)| if b == 1 { placeholder } else { v }).collect())
}

/// Degrade the power channel of `window` and append the mask channel.
pub fn to_sequence(window: &[f64], mask: &HybridMask, placeholder: f64) -> Result<Sequence> {
    let t = mask.m.len();
    if window.len() != t * FEATURE_COUNT {
        return Err(Error::Shape("window must be T x 6"));
    }
    let mut inputs = Vec::with_capacity(t * MODEL_INPUTS);
    let mut targets = Vec::with_capacity(t);
    for (row, &b) in window.chunks_exact(FEATURE_COUNT).zip(&mask.m) {
        inputs.push(if b == 1 { placeholder } else { row[0] });
        inputs.extend_from_slice(&row[1..]);
        inputs.push(b as f64);
        targets.push(row[0]);
    }
    Ok(Sequence { inputs, targets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedWindow {
    pub sequence: Sequence,
    pub mask: HybridMask,
}

/// Mask every window of `ds` independently; window `w` uses the stream
/// `(seed, "mask/<farm>", w)`.
pub fn mask_dataset(ds: &WindDataset, cfg: &MaskConfig, seed: u64) -> Result<Vec<MaskedWindow>> {
    let label = format!("mask/{}", ds.farm_id);
    ds.windows
        .iter()
        .enumerate()
        .map(|(w, win)| {
            let mask = generate_mask(ds.sequence_length, cfg, &mut derive_rng(seed, &label, w as u64))?;
            Ok(MaskedWindow { sequence: to_sequence(win, &mask, cfg.placeholder)?, mask })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle into train/val/test with `round(f n)` for the first two.
pub fn split_indices<R: Rng + ?Sized>(n: usize, train: f64, val: f64, rng: &mut R) -> Result<Split> {
    if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(Error::InvalidConfig(String::from("split fractions must be nonnegative and sum to at most 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = math::round_count(train * n as f64).min(n);
    let n_val = math::round_count(val * n as f64).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val_part = idx.split_off(n_train);
    Ok(Split { train: idx, val: val_part, test })
}

/// Client `i` holds farm `i mod farms`.
pub fn assign_round_robin(clients: usize, farms: usize) -> Vec<usize> {
    (0..clients).map(|i| i % farms.max(1)).collect()
}

// ---------------------------------------------------------------------------
// synthetic generator

pub const CUT_IN: f64 = 3.0;
pub const RATED: f64 = 12.0;
pub const CUT_OUT: f64 = 25.0;

/// Normalized power curve: cubic between cut-in and rated, flat to cut-out.
pub fn power_curve(speed: f64) -> f64 {
    if !(CUT_IN..CUT_OUT).contains(&speed) {
        0.0
    } else if speed >= RATED {
        1.0
    } else {
        let c3 = CUT_IN * CUT_IN * CUT_IN;
        (speed * speed * speed - c3) / (RATED * RATED * RATED - c3)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub farms: usize,
    pub samples_per_farm: usize,
    pub sequence_length: usize,
    /// Standard deviation of the power noise as a fraction of rated power.
    pub power_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { farms: 16, samples_per_farm: 60, sequence_length: STEPS_PER_DAY, power_noise: 0.02 }
    }
}

/// Raw rows of one synthetic farm.
///
/// Speed is a diurnal sinusoid plus a mean-reverting first-order
/// autoregressive perturbation; power follows [`power_curve`] scaled by the
/// farm's capacity; direction, temperature, pressure and air density are
/// correlated transforms with their own noise. Farms differ in phase, mean
/// speed, amplitude and capacity.
pub fn synth_farm_rows(farm: usize, rows: usize, power_noise: f64, seed: u64) -> Vec<[f64; FEATURE_COUNT]> {
    let mut rng = derive_rng(seed, "synth-farm", farm as u64);
    let tau = core::f64::consts::TAU;
    let phase = rng.random_range(0.0..tau);
    let mean_speed = rng.random_range(6.5..9.5);
    let amplitude = rng.random_range(1.5..3.5);
    let capacity = rng.random_range(20.0..80.0);
    let base_temp = rng.random_range(5.0..20.0);
    let base_dir = rng.random_range(0.0..360.0);
    let (theta, sigma) = (0.08, 0.45);
    let mut ou = 0.0;
    let mut dir_noise = 0.0;
    let mut out = Vec::with_capacity(rows);
    for k in 0..rows {
        let day = tau * k as f64 / STEPS_PER_DAY as f64;
        ou += -theta * ou + sigma * normal(&mut rng);
        dir_noise += -0.05 * dir_noise + 2.0 * normal(&mut rng);
        let speed = (mean_speed + amplitude * math::sin(day + phase) + ou).max(0.0);
        let curve = power_curve(speed);
        let power = if curve > 0.0 {
            (capacity * (curve + power_noise * normal(&mut rng))).clamp(0.0, capacity)
        } else {
            0.0
        };
        let direction = math::rem_euclid(base_dir + 40.0 * math::sin(day / 3.0 + phase) + dir_noise, 360.0);
        let temperature = base_temp + 6.0 * math::sin(day + phase - 1.2) + 0.4 * normal(&mut rng);
        let pressure = 1013.0 + 4.0 * math::sin(day / 5.0 + phase) - 0.25 * (temperature - base_temp) + 0.3 * normal(&mut rng);
        let density = pressure * 100.0 / (287.05 * (temperature + 273.15));
        out.push([power, speed, direction, temperature, pressure, density]);
    }
    out
}

pub fn synth_wind(cfg: &SynthConfig, seed: u64) -> Result<Vec<WindDataset>> {
    if cfg.farms == 0 || cfg.samples_per_farm == 0 || cfg.sequence_length == 0 {
        return Err(Error::InvalidConfig(String::from("farms, samples and sequence length must be positive")));
    }
    (0..cfg.farms)
        .map(|f| {
            let rows = synth_farm_rows(f, cfg.samples_per_farm * cfg.sequence_length, cfg.power_noise, seed);
            WindDataset::from_rows(f, &rows, cfg.sequence_length)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let (x, lo, hi) = minmax_normalize(&[0.0, 5.0, 10.0]);
        assert_eq!(x, vec![0.0, 0.5, 1.0]);
        assert_eq!((lo, hi), (0.0, 10.0));
        assert_eq!(minmax_normalize(&[3.0, 3.0]).0, vec![0.5, 0.5]);
        assert_eq!(denormalize(0.5, 3.0, 3.0), 3.0);
    }

    #[test]
    fn split_rate_examples() {
        assert_eq!(split_rates(0.5, 0.25), (0.125, 0.375));
        assert_eq!(split_rates(0.7, 1.0), (0.7, 0.0));
    }

    fn cfg(mr: f64, rm: f64) -> MaskConfig {
        MaskConfig { total_rate: mr, discrete_ratio: rm, ..MaskConfig::default() }
    }

    #[test]
    fn mask_counts_and_runs() {
        assert_eq!(generate_mask(96, &cfg(0.0, 0.5), &mut derive_rng(0, "m", 0)).unwrap().missing_count(), 0);
        for seed in 0..100 {
            let m = generate_mask(96, &cfg(0.5, 0.3), &mut derive_rng(seed, "m", 0)).unwrap();
            assert_eq!(m.missing_count(), 48);
            let m = generate_mask(96, &cfg(0.7, 0.0), &mut derive_rng(seed, "m", 1)).unwrap();
            assert!(m.discrete_positions.is_empty());
            for (_, len) in m.continuous_runs() {
                assert!((4..=16).contains(&len));
            }
        }
    }

    #[test]
    fn mask_infeasible_budget_errors() {
        // 10 steps, runs of exactly 4 and 9 continuous steps: needs 3 runs + 2 gaps.
        let c = MaskConfig { total_rate: 0.9, discrete_ratio: 0.0, run_length_min: 4, run_length_max: 4, placeholder: -1.0 };
        assert!(matches!(generate_mask(10, &c, &mut derive_rng(0, "m", 0)), Err(Error::InfeasibleMask(_))));
        assert!(generate_mask(10, &MaskConfig { run_length_max: 20, ..c }, &mut derive_rng(0, "m", 0)).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let x = [0.1, 0.0, 0.7];
        let none = HybridMask { m: vec![0; 3], continuous_positions: vec![], discrete_positions: vec![] };
        assert_eq!(apply_mask(&x, &none, -1.0).unwrap(), x.to_vec());
        let all = HybridMask { m: vec![1; 3], continuous_positions: vec![0, 1, 2], discrete_positions: vec![] };
        assert_eq!(apply_mask(&x, &all, -1.0).unwrap(), vec![-1.0; 3]);
    }

    #[test]
    fn sequences_carry_mask_channel() {
        let ds = &synth_wind(&SynthConfig { farms: 1, samples_per_farm: 2, sequence_length: 24, power_noise: 0.02 }, 1).unwrap()[0];
        let mw = mask_dataset(ds, &cfg(0.5, 0.5), 3).unwrap();
        for (w, item) in mw.iter().enumerate() {
            let s = &item.sequence;
            assert_eq!(s.inputs.len(), 24 * MODEL_INPUTS);
            assert_eq!(s.targets, ds.power(w));
            for t in 0..24 {
                let row = &s.inputs[t * MODEL_INPUTS..(t + 1) * MODEL_INPUTS];
                assert_eq!(row[MODEL_INPUTS - 1], item.mask.m[t] as f64);
                if item.mask.m[t] == 0 {
                    assert_eq!(row[0], s.targets[t]);
                } else {
                    assert_eq!(row[0], -1.0);
                }
            }
        }
    }

    #[test]
    fn power_curve_shape() {
        assert_eq!(power_curve(2.9), 0.0);
        assert_eq!(power_curve(CUT_IN), 0.0);
        assert_eq!(power_curve(13.0), 1.0);
        assert_eq!(power_curve(25.0), 0.0);
        let mut last = 0.0;
        for k in 0..=900 {
            let v = CUT_IN + k as f64 * 0.01;
            let p = power_curve(v);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn synthetic_data_properties() {
        let c = SynthConfig { farms: 3, samples_per_farm: 4, sequence_length: 48, power_noise: 0.0 };
        let a = synth_wind(&c, 11).unwrap();
        assert_eq!(a, synth_wind(&c, 11).unwrap());
        assert_ne!(a[0].windows, a[1].windows);
        for ds in &a {
            assert_eq!(ds.len(), 4);
            assert!(ds.windows.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
        for row in synth_farm_rows(0, 2000, 0.02, 5) {
            if row[1] < CUT_IN {
                assert_eq!(row[0], 0.0);
            }
        }
        // Noise-free rows are monotone in speed on the cubic section.
        let mut rows: Vec<_> = synth_farm_rows(1, 3000, 0.0, 5).into_iter().filter(|r| r[1] >= CUT_IN && r[1] <= RATED).collect();
        rows.sort_by(|a, b| a[1].total_cmp(&b[1]));
        assert!(rows.windows(2).all(|w| w[1][0] >= w[0][0]));
    }

    #[test]
    fn dataset_round_trip_and_windowing() {
        let rows = synth_farm_rows(2, 200, 0.02, 9);
        let ds = WindDataset::from_rows(2, &rows, 96).unwrap();
        assert_eq!(ds.len(), 2);
        for (a, b) in ds.raw_rows().iter().zip(&rows) {
            for c in 0..FEATURE_COUNT {
                assert!((a[c] - b[c]).abs() <= 1e-12 * b[c].abs().max(1.0));
            }
        }
        assert!(WindDataset::from_rows(0, &rows[..50], 96).is_err());
    }

    #[test]
    fn split_examples() {
        let s = split_indices(100, 0.8, 0.1, &mut derive_rng(1, "split", 0)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_indices(100, 0.8, 0.1, &mut derive_rng(1, "split", 0)).unwrap());
        assert_eq!(assign_round_robin(5, 2), vec![0, 1, 0, 1, 0]);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(x in prop::collection::vec(-1e3f64..1e3, 2..50)) {
            let (n, lo, hi) = minmax_normalize(&x);
            for (v, orig) in n.iter().zip(&x) {
                prop_assert!((0.0..=1.0).contains(v));
                if hi > lo {
                    prop_assert!((denormalize(*v, lo, hi) - orig).abs() < 1e-12 * hi.abs().max(lo.abs()).max(1.0));
                }
            }
        }

        // Near-full continuous budgets cannot fit non-adjacent runs; that
        // error path has its own test.
        #[test]
        fn masks_disjoint_and_exact(seed in 0u64..10_000, mr in 0.0f64..=0.9, rm in 0.0f64..=1.0) {
            let m = generate_mask(96, &cfg(mr, rm), &mut derive_rng(seed, "pm", 0)).unwrap();
            prop_assert_eq!(m.missing_count(), math::round_count(mr * 96.0));
            prop_assert!(m.continuous_positions.iter().all(|p| !m.discrete_positions.contains(p)));
            prop_assert_eq!(m.continuous_positions.len() + m.discrete_positions.len(), m.missing_count());
        }
    }
}
