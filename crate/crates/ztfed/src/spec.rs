//! Experiment configuration files.
//!
//! One TOML document holds the protocol settings (`[fl]`, keys named after
//! the simulator's fields), masking, model shape, membership inference,
//! data source and optional sweep axes.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use ztfed_core::data::{MaskConfig, SynthConfig, MODEL_INPUTS};
use ztfed_core::eval::MiaConfig;
use ztfed_core::model::Mas2sConfig;
use ztfed_core::orchestrator::FlConfig;
use ztfed_core::trust::Aggregator;

use crate::error::{AppError, AppResult};

/// Largest seed a TOML integer can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Synthetic generator settings, used when `csv_dir` is unset.
    pub synth: SynthConfig,
    /// Directory of `farm_*.csv` files to load instead of synthesizing.
    pub csv_dir: Option<PathBuf>,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { synth: SynthConfig::default(), csv_dir: None, train_fraction: 0.8, val_fraction: 0.1 }
    }
}

/// A privacy budget, or none for a run without noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(pub Option<f64>);

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(e) => write!(f, "{e}"),
            None => f.write_str("none"),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(e) => s.serialize_f64(e),
            None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(e) => Ok(Epsilon(Some(e))),
            Raw::Int(e) => Ok(Epsilon(Some(e as f64))),
            Raw::Text(t) if t == "none" => Ok(Epsilon(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("epsilon must be a number or \"none\", got {t:?}"))),
        }
    }
}

/// Sweep axes. An absent axis holds the base configuration's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub missing_rate: Option<Vec<f64>>,
    /// Proportion of continuous missingness, `1 - discrete_ratio`.
    #[serde(rename = "prC", alias = "prc")]
    pub prc: Option<Vec<f64>>,
    pub epsilon: Option<Vec<Epsilon>>,
    /// Anomalous client proportion P.
    pub anomaly_rate: Option<Vec<f64>>,
    /// Client count N.
    pub clients: Option<Vec<usize>>,
    pub aggregator: Option<Vec<String>>,
    /// Independent seeds per grid point.
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSpec,
    pub fl: FlConfig,
    pub mask: MaskConfig,
    pub model: Mas2sConfig,
    pub mia: MiaConfig,
    pub sweep: SweepAxes,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("results"),
            data: DataSpec::default(),
            fl: FlConfig::default(),
            mask: MaskConfig::default(),
            model: Mas2sConfig::default(),
            mia: MiaConfig::default(),
            sweep: SweepAxes::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::path(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec is always representable as TOML")
    }

    /// Epsilon of the base configuration.
    pub fn epsilon(&self) -> Epsilon {
        Epsilon(self.fl.dp_enabled.then_some(self.fl.dp.epsilon))
    }

    pub fn set_epsilon(&mut self, e: Epsilon) {
        match e.0 {
            Some(v) => {
                self.fl.dp_enabled = true;
                self.fl.dp.epsilon = v;
            }
            None => self.fl.dp_enabled = false,
        }
    }

    /// Check every section and the agreements between them.
    pub fn validate(&self) -> AppResult<()> {
        let cfg = |m: String| AppError::Config(m);
        if self.seed > MAX_SEED || self.fl.seed > MAX_SEED {
            return Err(cfg(format!("seeds must not exceed {MAX_SEED}")));
        }
        self.model.validate()?;
        if self.model.input_features != MODEL_INPUTS {
            return Err(cfg(format!("model.input_features must be {MODEL_INPUTS} (six features and the mask channel)")));
        }
        if self.data.synth.sequence_length != self.model.sequence_length {
            return Err(cfg(format!(
                "data.synth.sequence_length ({}) differs from model.sequence_length ({})",
                self.data.synth.sequence_length, self.model.sequence_length
            )));
        }
        let (tr, va) = (self.data.train_fraction, self.data.val_fraction);
        if !(tr > 0.0 && va >= 0.0 && tr + va < 1.0) {
            return Err(cfg(String::from("need train_fraction > 0, val_fraction >= 0 and a nonempty test share")));
        }
        self.fl.validate()?;
        self.mask.validate(self.model.sequence_length)?;
        if self.mia.member_count == 0 || self.mia.nonmember_count == 0 {
            return Err(cfg(String::from("mia member and nonmember counts must be positive")));
        }
        let s = &self.sweep;
        let empty = [
            ("missing_rate", s.missing_rate.as_ref().map(Vec::len)),
            ("prC", s.prc.as_ref().map(Vec::len)),
            ("epsilon", s.epsilon.as_ref().map(Vec::len)),
            ("anomaly_rate", s.anomaly_rate.as_ref().map(Vec::len)),
            ("clients", s.clients.as_ref().map(Vec::len)),
            ("aggregator", s.aggregator.as_ref().map(Vec::len)),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, n)| *n == Some(0)) {
            return Err(cfg(format!("sweep axis `{name}` is empty")));
        }
        if s.repeats == Some(0) {
            return Err(cfg(String::from("sweep.repeats must be positive")));
        }
        for name in s.aggregator.iter().flatten() {
            parse_aggregator(name)?;
        }
        Ok(())
    }
}

pub fn parse_aggregator(name: &str) -> AppResult<Aggregator> {
    Aggregator::from_name(name).ok_or_else(|| {
        AppError::Config(format!("unknown aggregator `{name}` (expected dtaa, fedavg, tmean, multikrum or median)"))
    })
}
