//! Gaussian-mechanism perturbation of model parameters.
//!
//! Parameters are clipped to an ℓ2 ball, then perturbed with Gaussian noise
//! whose scale follows the sensitivity calibration
//! `σ = sqrt(2 ln(1.25/δ)) · Δs / ε · (T_g / K)`.
//!
//! Noise is a pure function of a private seed: block `j` of the stream is
//! `SHA-256(seed || be64(j))`, each block yields four 64-bit uniforms, and
//! consecutive uniform pairs go through Box–Muller. The same seed is the
//! witness of the Schnorr proof in [`crate::nizk`].

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_percentile: f64,
    pub global_epochs: usize,
    pub sync_interval: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { epsilon: 40.0, delta: 1e-4, clip_percentile: 0.95, global_epochs: 100, sync_interval: 10 }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_percentile > 0.0 && self.clip_percentile <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_percentile must lie in (0, 1], got {}",
                self.clip_percentile
            )));
        }
        if self.global_epochs == 0 || self.sync_interval == 0 || self.sync_interval > self.global_epochs {
            return Err(Error::InvalidConfig(format!(
                "need 0 < sync_interval <= global_epochs, got K={} T_g={}",
                self.sync_interval, self.global_epochs
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile of the norms (ascending sort, rank `ceil(p·n)`).
pub fn select_clip_threshold(norms: &[f64], percentile: f64) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::Empty("norm list for clip threshold"));
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidConfig(format!("percentile must lie in (0, 1], got {percentile}")));
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (math::ceil(percentile * sorted.len() as f64) as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// `θ / max(1, ‖θ‖₂ / τ_c)`.
pub fn clip_params(params: &ModelParams, clip_threshold: f64) -> Result<ModelParams> {
    if !(clip_threshold >= 0.0) || !clip_threshold.is_finite() {
        return Err(Error::InvalidConfig(format!("clip threshold must be finite and >= 0, got {clip_threshold}")));
    }
    let norm = params.l2_norm();
    if norm == 0.0 {
        return Ok(params.clone());
    }
    if clip_threshold == 0.0 {
        return Ok(params.scaled(0.0));
    }
    let factor = f64::max(1.0, norm / clip_threshold);
    Ok(params.scaled(1.0 / factor))
}

/// `Δs_i = 2 τ_c / |D_i|`.
pub fn local_sensitivity(clip_threshold: f64, dataset_size: usize) -> Result<f64> {
    if dataset_size == 0 {
        return Err(Error::InvalidConfig(format!("dataset size must be >= 1")));
    }
    Ok(2.0 * clip_threshold / dataset_size as f64)
}

pub fn noise_sigma(cfg: &DpConfig, sensitivity: f64) -> f64 {
    let base = math::sqrt(2.0 * math::ln(1.25 / cfg.delta)) * sensitivity / cfg.epsilon;
    base * (cfg.global_epochs as f64 / cfg.sync_interval as f64)
}

/// Deterministic standard-normal stream keyed by `seed`.
pub struct SeededNormals<'a> {
    seed: &'a [u8],
    counter: u64,
    uniforms: [f64; 4],
    next_uniform: usize,
    spare: Option<f64>,
}

impl<'a> SeededNormals<'a> {
    pub fn new(seed: &'a [u8]) -> Self {
        Self { seed, counter: 0, uniforms: [0.0; 4], next_uniform: 4, spare: None }
    }

    fn uniform(&mut self) -> f64 {
        if self.next_uniform == 4 {
            let mut h = Sha256::new();
            h.update(self.seed);
            h.update(self.counter.to_be_bytes());
            let block: [u8; 32] = h.finalize().into();
            for (slot, chunk) in self.uniforms.iter_mut().zip(block.chunks_exact(8)) {
                let x = u64::from_be_bytes(chunk.try_into().unwrap());
                // 53 high bits, offset by half an ulp so 0 and 1 are unreachable
                *slot = ((x >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            }
            self.counter += 1;
            self.next_uniform = 0;
        }
        let u = self.uniforms[self.next_uniform];
        self.next_uniform += 1;
        u
    }
}

impl Iterator for SeededNormals<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if let Some(z) = self.spare.take() {
            return Some(z);
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(r * math::sin(theta));
        Some(r * math::cos(theta))
    }
}

/// Noise shaped like `shape_of`, each entry `σ · z` from the seeded stream.
pub fn seeded_gaussian_noise(seed: &[u8], shape_of: &ModelParams, sigma: f64) -> Result<ModelParams> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let values: Vec<f64> = SeededNormals::new(seed).take(shape_of.param_count()).map(|z| sigma * z).collect();
    shape_of.with_values(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub noised: ModelParams,
    pub clip_threshold: f64,
    pub sigma: f64,
}

/// Clip, then add seeded noise calibrated from the dataset size.
pub fn perturb(
    params: &ModelParams,
    cfg: &DpConfig,
    clip_threshold: f64,
    dataset_size: usize,
    seed: &[u8],
) -> Result<Perturbation> {
    cfg.validate()?;
    params.validate()?;
    let clipped = clip_params(params, clip_threshold)?;
    let sensitivity = local_sensitivity(clip_threshold, dataset_size)?;
    let sigma = noise_sigma(cfg, sensitivity);
    let noise = seeded_gaussian_noise(seed, params, sigma)?;
    Ok(Perturbation { noised: clipped.add(&noise)?, clip_threshold, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LayerSpec;
    use alloc::vec;
    use proptest::prelude::*;

    fn params(values: Vec<f64>) -> ModelParams {
        let n = values.len();
        ModelParams::new(vec![(LayerSpec::new("w", vec![n]).unwrap(), values)]).unwrap()
    }

    #[test]
    fn percentile_nearest_rank() {
        let norms: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(select_clip_threshold(&norms, 0.95).unwrap(), 95.0);
        assert_eq!(select_clip_threshold(&[7.0], 0.95).unwrap(), 7.0);
        assert_eq!(select_clip_threshold(&[7.0], 0.01).unwrap(), 7.0);
        assert_eq!(select_clip_threshold(&[2.0, 2.0, 2.0], 0.5).unwrap(), 2.0);
        assert!(select_clip_threshold(&[], 0.95).is_err());
    }

    #[test]
    fn clipping_cases() {
        // ‖(6, 8)‖ = 10 clipped to 5 halves each entry.
        let p = params(vec![6.0, 8.0]);
        assert_eq!(clip_params(&p, 5.0).unwrap().flatten(), vec![3.0, 4.0]);
        let small = params(vec![0.6, 0.8, 2.8]);
        assert!(small.l2_norm() < 5.0);
        assert_eq!(clip_params(&small, 5.0).unwrap(), small);
        let zero = params(vec![0.0, 0.0]);
        assert_eq!(clip_params(&zero, 5.0).unwrap(), zero);
        assert!(clip_params(&p, -1.0).is_err());
    }

    #[test]
    fn sensitivity_cases() {
        assert!((local_sensitivity(5.0, 100).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(local_sensitivity(0.0, 10).unwrap(), 0.0);
        assert_eq!(local_sensitivity(3.0, 20).unwrap(), local_sensitivity(3.0, 10).unwrap() / 2.0);
        assert!(local_sensitivity(1.0, 0).is_err());
    }

    #[test]
    fn sigma_calibration() {
        let cfg = DpConfig::default();
        let expected = libm::sqrt(2.0 * libm::log(12500.0)) / 40.0 * 10.0;
        assert!((noise_sigma(&cfg, 1.0) - expected).abs() < 1e-12);
        assert!((noise_sigma(&cfg, 1.0) - 1.0859).abs() < 1e-4);
        assert_eq!(noise_sigma(&cfg, 0.0), 0.0);
        let flat = DpConfig { global_epochs: 10, sync_interval: 10, ..cfg };
        assert!((noise_sigma(&flat, 1.0) * 10.0 - noise_sigma(&cfg, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn sigma_monotonicity() {
        let cfg = DpConfig::default();
        let mut last = f64::INFINITY;
        for eps in [1.0, 5.0, 20.0, 40.0, 60.0] {
            let s = noise_sigma(&DpConfig { epsilon: eps, ..cfg }, 1.0);
            assert!(s < last);
            last = s;
        }
        let longer = DpConfig { global_epochs: 200, ..cfg };
        assert!(noise_sigma(&longer, 1.0) > noise_sigma(&cfg, 1.0));
    }

    #[test]
    fn noise_zero_scale_and_determinism() {
        let shape = params(vec![0.0; 16]);
        assert!(seeded_gaussian_noise(b"s", &shape, 0.0).unwrap().as_slice().iter().all(|v| *v == 0.0));
        let a = seeded_gaussian_noise(b"seed", &shape, 1.0).unwrap();
        let b = seeded_gaussian_noise(b"seed", &shape, 1.0).unwrap();
        let c = seeded_gaussian_noise(b"seee", &shape, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_moments() {
        let n = 100_000;
        let draws: Vec<f64> = SeededNormals::new(b"moment-check").take(n).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn perturb_vanishes_at_huge_epsilon() {
        let p = params(vec![3.0, -4.0, 1.0]);
        let cfg = DpConfig { epsilon: 1e12, ..DpConfig::default() };
        let out = perturb(&p, &cfg, 2.0, 10, b"x").unwrap();
        let clipped = clip_params(&p, 2.0).unwrap();
        for (a, b) in out.noised.as_slice().iter().zip(clipped.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(perturb(&p, &cfg, 2.0, 10, b"x").unwrap(), out);
    }

    #[test]
    fn perturb_noise_energy_matches_sigma() {
        let p = params((0..200).map(|i| (i as f64 * 0.37).sin()).collect());
        let cfg = DpConfig::default();
        let clipped = clip_params(&p, 4.0).unwrap();
        let mut total = 0.0;
        let mut sigma = 0.0;
        for s in 0u32..100 {
            let out = perturb(&p, &cfg, 4.0, 50, &s.to_be_bytes()).unwrap();
            sigma = out.sigma;
            let diff: f64 = out.noised.as_slice().iter().zip(clipped.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            total += diff;
        }
        let expected = sigma * sigma * p.param_count() as f64;
        let observed = total / 100.0;
        assert!((observed / expected - 1.0).abs() < 0.1, "observed {observed} expected {expected}");
    }

    proptest! {
        #[test]
        fn clip_bounds_norm_and_is_idempotent(v in prop::collection::vec(-50.0f64..50.0, 1..20), tau in 0.1f64..20.0) {
            let p = params(v);
            let once = clip_params(&p, tau).unwrap();
            prop_assert!(once.l2_norm() <= tau * (1.0 + 1e-12));
            let twice = clip_params(&once, tau).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
