//! In-memory federated protocol simulator with byte accounting.
//!
//! Every global epoch a seeded subset of clients trains locally. On sync
//! epochs (`t_g mod K == 0`) those clients clip and noise their parameters,
//! prove knowledge of the noise seed, compress, frame and seal the result.
//! The server opens and checks each upload, aggregates the survivors, and
//! sends the new global model back to every client over its own channel.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    compress, compress_lossless, decrypt_and_verify, dequantize, encrypt_and_mac, message_size_bytes, pack_update,
    unpack_update, ChannelKey, CompressedParams, CompressionConfig, Direction, Transmission, RAW_BITS,
};
use crate::data::MaskedWindow;
use crate::dp::{perturb, select_clip_threshold, DpConfig, Perturbation};
use crate::error::{Error, Result};
use crate::eval::{mean_impute, sign_flip, AttackConfig, ImputationMetrics, MetricAccumulator};
use crate::math;
use crate::model::{impute, train_local, AdamConfig, AdamState, Mas2s, Mas2sConfig, Sequence};
use crate::nizk::{nizk_prove, nizk_verify, GroupParams, NizkProof, NizkSecret};
use crate::params::ModelParams;
use crate::rng::{derive_rng, derive_seed, SimRng};
use crate::trust::{Aggregator, DtaaConfig, TrustReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupChoice {
    /// 2048-bit modulus, 256-bit subgroup.
    Schnorr2048,
    /// 512-bit modulus, 160-bit subgroup; fast, for tests and sweeps.
    Test512,
}

impl GroupChoice {
    pub fn params(self) -> GroupParams {
        match self {
            GroupChoice::Schnorr2048 => GroupParams::schnorr_2048(),
            GroupChoice::Test512 => GroupParams::test_512(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub global_epochs: usize,
    pub sync_interval: usize,
    pub clients: usize,
    pub participation: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub dp: DpConfig,
    pub compression: CompressionConfig,
    pub dtaa: DtaaConfig,
    pub aggregator: Aggregator,
    pub adam: AdamConfig,
    pub attack: AttackConfig,
    pub dp_enabled: bool,
    pub nizk_enabled: bool,
    pub civ_enabled: bool,
    pub compression_enabled: bool,
    /// Zero every client's optimizer moments after applying a global model.
    pub reset_adam_on_sync: bool,
    pub nizk_group: GroupChoice,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            global_epochs: 100,
            sync_interval: 10,
            clients: 16,
            participation: 0.5,
            local_epochs: 20,
            batch_size: 32,
            dp: DpConfig::default(),
            compression: CompressionConfig::default(),
            dtaa: DtaaConfig::default(),
            aggregator: Aggregator::Dtaa,
            adam: AdamConfig::default(),
            attack: AttackConfig::default(),
            dp_enabled: true,
            nizk_enabled: true,
            civ_enabled: true,
            compression_enabled: true,
            reset_adam_on_sync: false,
            nizk_group: GroupChoice::Schnorr2048,
            seed: 0,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_epochs == 0 || self.sync_interval == 0 || self.sync_interval > self.global_epochs {
            return Err(Error::InvalidConfig(String::from("need 1 <= sync_interval <= global_epochs")));
        }
        if self.clients == 0 {
            return Err(Error::InvalidConfig(String::from("need at least one client")));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidConfig(String::from("participation must lie in (0, 1]")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig(String::from("batch_size must be positive")));
        }
        self.dp_config().validate()?;
        self.compression.validate()?;
        self.attack.validate()?;
        if self.aggregator == Aggregator::Dtaa && self.clients >= 2 {
            let mut d = self.dtaa;
            d.neighbors = d.neighbors.min(self.clients - 1);
            d.validate(self.clients)?;
        }
        Ok(())
    }

    /// Privacy settings with the run's epoch counts.
    pub fn dp_config(&self) -> DpConfig {
        DpConfig { global_epochs: self.global_epochs, sync_interval: self.sync_interval, ..self.dp }
    }

    pub fn clients_per_epoch(&self) -> usize {
        math::round_count(self.participation * self.clients as f64).clamp(1, self.clients)
    }

    pub fn sync_rounds(&self) -> usize {
        self.global_epochs / self.sync_interval
    }
}

/// `max(1, round(E N))` distinct ids, ascending.
pub fn select_clients<R: Rng + ?Sized>(clients: usize, participation: f64, rng: &mut R) -> Vec<usize> {
    let k = math::round_count(participation * clients as f64).clamp(1, clients.max(1));
    let mut ids = index::sample(rng, clients, k.min(clients)).into_vec();
    ids.sort_unstable();
    ids
}

/// A client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: Vec<Sequence>,
    pub test: Vec<MaskedWindow>,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub params: ModelParams,
    pub adam: AdamState,
    pub is_attacker: bool,
    /// Last download failed its integrity check.
    pub integrity_flag: bool,
    pub loss_trace: Vec<f64>,
    key: ChannelKey,
    train_rng: SimRng,
    iv_rng: SimRng,
    nizk_rng: SimRng,
    attack_rng: SimRng,
}

impl ClientState {
    pub fn key(&self) -> &ChannelKey {
        &self.key
    }
}

/// Everything a client produced for one upload.
#[derive(Debug, Clone)]
pub struct UploadArtifacts {
    pub client: usize,
    pub clean: ModelParams,
    /// Parameters after any adversarial manipulation, before noise.
    pub submitted: ModelParams,
    pub perturbation: Option<Perturbation>,
    pub proof: Option<NizkProof>,
    pub compressed: CompressedParams,
    pub frame: Vec<u8>,
    pub message: Transmission,
}

impl UploadArtifacts {
    pub fn upload(&self) -> Upload {
        Upload {
            client: self.client,
            message: self.message.clone(),
            proof_bytes: self.proof.as_ref().map_or(0, |p| p.encoded_len()),
        }
    }
}

/// What the server receives from one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub client: usize,
    pub message: Transmission,
    pub proof_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UploadRecord {
    pub client: usize,
    /// Message bytes excluding the proof.
    pub upload_bytes: usize,
    pub proof_bytes: usize,
    pub hmac_ok: Option<bool>,
    pub decode_ok: bool,
    pub nizk_ok: Option<bool>,
    /// Noised-digest binding, checkable only for lossless uploads.
    pub digest_ok: Option<bool>,
    pub accepted: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DownloadRecord {
    pub client: usize,
    pub bytes: usize,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_epoch: usize,
    pub selected: Vec<usize>,
    pub attackers: Vec<usize>,
    pub clip_threshold: Option<f64>,
    pub sigma: Option<f64>,
    pub uploads: Vec<UploadRecord>,
    /// Clients whose updates entered the aggregate.
    pub aggregated: Vec<usize>,
    pub aggregator: String,
    pub trust: Option<TrustReport>,
    pub aborted: bool,
    pub downloads: Vec<DownloadRecord>,
    pub global_digest: String,
}

impl RoundRecord {
    pub fn total_bytes(&self) -> usize {
        self.uploads.iter().map(|u| u.upload_bytes + u.proof_bytes).sum::<usize>()
            + self.downloads.iter().map(|d| d.bytes).sum::<usize>()
    }

    /// Fraction of this round's adversarial uploads kept out of the aggregate.
    pub fn attacker_exclusion_rate(&self) -> Option<f64> {
        let sent: Vec<usize> = self.uploads.iter().map(|u| u.client).filter(|c| self.attackers.contains(c)).collect();
        if sent.is_empty() {
            return None;
        }
        let kept_out = sent.iter().filter(|c| !self.aggregated.contains(c)).count();
        Some(kept_out as f64 / sent.len() as f64)
    }
}

pub struct ServerOutcome {
    pub downloads: Vec<(usize, Transmission)>,
    pub record: RoundRecord,
}

pub struct Simulation {
    cfg: FlConfig,
    model: Mas2s,
    group: GroupParams,
    clients: Vec<ClientState>,
    data: Vec<ClientData>,
    attackers: Vec<usize>,
    global: ModelParams,
    server_rng: SimRng,
    records: Vec<RoundRecord>,
    participated: Vec<bool>,
}

pub struct RunOutput {
    pub global: ModelParams,
    pub records: Vec<RoundRecord>,
    pub participated: Vec<usize>,
    pub attackers: Vec<usize>,
}

impl Simulation {
    pub fn new(cfg: FlConfig, model_cfg: Mas2sConfig, data: Vec<ClientData>) -> Result<Self> {
        cfg.validate()?;
        if data.len() != cfg.clients {
            return Err(Error::InvalidConfig(format!("{} client datasets for {} clients", data.len(), cfg.clients)));
        }
        if let Some(i) = data.iter().position(|d| d.train.is_empty()) {
            return Err(Error::Client { client: i, reason: String::from("no training data") });
        }
        let global = model_cfg.init_params(&mut derive_rng(cfg.seed, "init", 0))?;
        let model = Mas2s::bind(model_cfg, global.specs())?;
        let attackers = cfg.attack.select_attackers(cfg.clients, &mut derive_rng(cfg.seed, "attackers", 0));
        let clients = (0..cfg.clients)
            .map(|i| {
                let id = i as u64;
                ClientState {
                    id: i,
                    params: global.clone(),
                    adam: AdamState::new(cfg.adam, global.param_count()),
                    is_attacker: attackers.contains(&i),
                    integrity_flag: false,
                    loss_trace: Vec::new(),
                    key: ChannelKey::new(derive_seed(cfg.seed, "channel-key", id)),
                    train_rng: derive_rng(cfg.seed, "train", id),
                    iv_rng: derive_rng(cfg.seed, "client-iv", id),
                    nizk_rng: derive_rng(cfg.seed, "nizk", id),
                    attack_rng: derive_rng(cfg.seed, "attack", id),
                }
            })
            .collect();
        Ok(Self {
            group: cfg.nizk_group.params(),
            server_rng: derive_rng(cfg.seed, "server-iv", 0),
            participated: vec![false; cfg.clients],
            cfg,
            model,
            clients,
            data,
            attackers,
            global,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &FlConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Mas2s {
        &self.model
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn client_mut(&mut self, id: usize) -> &mut ClientState {
        &mut self.clients[id]
    }

    pub fn attackers(&self) -> &[usize] {
        &self.attackers
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn group(&self) -> &GroupParams {
        &self.group
    }

    pub fn select(&self, global_epoch: usize) -> Vec<usize> {
        select_clients(self.cfg.clients, self.cfg.participation, &mut derive_rng(self.cfg.seed, "select", global_epoch as u64))
    }

    pub fn train_clients(&mut self, ids: &[usize]) -> Result<()> {
        for &i in ids {
            self.participated[i] = true;
            let c = &mut self.clients[i];
            let trace = train_local(
                &self.model,
                &mut c.params,
                &self.data[i].train,
                self.cfg.local_epochs,
                self.cfg.batch_size,
                &mut c.adam,
                &mut c.train_rng,
            )
            .map_err(|e| Error::Client { client: i, reason: e.to_string() })?;
            c.loss_trace.extend(trace);
        }
        Ok(())
    }

    /// Clipping threshold and dataset size shared by one sync round: the
    /// percentile of the uploaders' norms and the smallest local dataset,
    /// so the noise covers the largest per-client sensitivity.
    fn round_privacy(&self, ids: &[usize]) -> Result<(f64, usize)> {
        let norms: Vec<f64> = ids.iter().map(|&i| self.clients[i].params.l2_norm()).collect();
        let tau = select_clip_threshold(&norms, self.cfg.dp.clip_percentile)?;
        let n = ids.iter().map(|&i| self.data[i].train.len()).min().ok_or(Error::Empty("uploading clients"))?;
        Ok((tau, n))
    }

    /// One client's upload pipeline.
    pub fn client_round(&mut self, id: usize, clip_threshold: f64, dataset_size: usize) -> Result<UploadArtifacts> {
        let cfg = self.cfg;
        let tag = |e: Error| Error::Client { client: id, reason: e.to_string() };
        let c = &mut self.clients[id];
        let clean = c.params.clone();
        let submitted = if c.is_attacker {
            sign_flip(&clean, cfg.attack.flip_fraction, &mut c.attack_rng).map_err(tag)?
        } else {
            clean.clone()
        };
        let secret = NizkSecret::random(&self.group, &mut c.nizk_rng);
        let perturbation = if cfg.dp_enabled {
            Some(perturb(&submitted, &cfg.dp_config(), clip_threshold, dataset_size, &secret.seed_bytes()).map_err(tag)?)
        } else {
            None
        };
        let outgoing = perturbation.as_ref().map_or(&submitted, |p| &p.noised);
        let proof = if cfg.nizk_enabled {
            Some(nizk_prove(&secret, &self.group, outgoing, &submitted).map_err(tag)?)
        } else {
            None
        };
        let compressed =
            if cfg.compression_enabled { compress(outgoing, &cfg.compression) } else { compress_lossless(outgoing) }.map_err(tag)?;
        let frame = pack_update(&compressed, Direction::Upload, proof.as_ref()).map_err(tag)?;
        let message = if cfg.civ_enabled {
            let iv: [u8; 16] = c.iv_rng.random();
            Transmission::Sealed(encrypt_and_mac(&frame, &c.key, iv, Direction::Upload))
        } else {
            Transmission::Plain(frame.clone())
        };
        Ok(UploadArtifacts { client: id, clean, submitted, perturbation, proof, compressed, frame, message })
    }

    /// Upload pipelines of `ids` with the round's shared privacy parameters.
    pub fn prepare_uploads(&mut self, ids: &[usize]) -> Result<(Vec<UploadArtifacts>, Option<(f64, f64)>)> {
        let (tau, n) = self.round_privacy(ids)?;
        let arts = ids.iter().map(|&i| self.client_round(i, tau, n)).collect::<Result<Vec<_>>>()?;
        let privacy = arts.first().and_then(|a| a.perturbation.as_ref()).map(|p| (p.clip_threshold, p.sigma));
        Ok((arts, privacy))
    }

    fn open_upload(&self, up: &Upload) -> (UploadRecord, Option<ModelParams>) {
        let size = message_size_bytes(&up.message);
        let mut rec = UploadRecord {
            client: up.client,
            upload_bytes: size.saturating_sub(up.proof_bytes),
            proof_bytes: up.proof_bytes.min(size),
            hmac_ok: None,
            decode_ok: false,
            nizk_ok: None,
            digest_ok: None,
            accepted: false,
            reason: None,
        };
        let Some(client) = self.clients.get(up.client) else {
            rec.reason = Some(String::from("unknown client id"));
            return (rec, None);
        };
        let frame = match &up.message {
            Transmission::Sealed(m) => {
                if m.direction != Direction::Upload {
                    rec.reason = Some(String::from("wrong message direction"));
                    return (rec, None);
                }
                match decrypt_and_verify(m, &client.key) {
                    Ok(f) => {
                        rec.hmac_ok = Some(true);
                        f
                    }
                    Err(e) => {
                        rec.hmac_ok = Some(matches!(e, Error::PaddingError));
                        rec.reason = Some(e.to_string());
                        return (rec, None);
                    }
                }
            }
            Transmission::Plain(f) => {
                if self.cfg.civ_enabled {
                    rec.reason = Some(String::from("unsealed upload while integrity checks are on"));
                    return (rec, None);
                }
                f.clone()
            }
        };
        let update = match unpack_update(&frame, self.global.specs()) {
            Ok(u) if u.direction == Direction::Upload => u,
            Ok(_) => {
                rec.reason = Some(String::from("frame is not an upload"));
                return (rec, None);
            }
            Err(e) => {
                rec.reason = Some(e.to_string());
                return (rec, None);
            }
        };
        rec.decode_ok = true;
        let dense = match dequantize(&update.params) {
            Ok(d) => d,
            Err(e) => {
                rec.decode_ok = false;
                rec.reason = Some(e.to_string());
                return (rec, None);
            }
        };
        if self.cfg.nizk_enabled {
            let Some(proof) = &update.proof else {
                rec.nizk_ok = Some(false);
                rec.reason = Some(String::from("missing proof"));
                return (rec, None);
            };
            let ok = nizk_verify(proof, &self.group);
            rec.nizk_ok = Some(ok);
            if !ok {
                rec.reason = Some(String::from("proof rejected"));
                return (rec, None);
            }
            if update.params.layers.iter().all(|l| l.bits == RAW_BITS) {
                let bound = dense.digest() == proof.digest_noised;
                rec.digest_ok = Some(bound);
                if !bound {
                    rec.reason = Some(String::from("proof not bound to uploaded parameters"));
                    return (rec, None);
                }
            }
        }
        rec.accepted = true;
        (rec, Some(dense))
    }

    /// Open, check and aggregate `uploads`, then seal the global model for
    /// every client.
    pub fn server_round(&mut self, uploads: &[Upload], global_epoch: usize) -> Result<ServerOutcome> {
        let mut sorted: Vec<&Upload> = uploads.iter().collect();
        sorted.sort_by_key(|u| u.client);
        let mut records = Vec::with_capacity(sorted.len());
        let mut accepted: Vec<(usize, ModelParams)> = Vec::new();
        for up in sorted {
            let (rec, dense) = self.open_upload(up);
            if let Some(d) = dense {
                accepted.push((up.client, d));
            }
            records.push(rec);
        }
        let mut aggregated = Vec::new();
        let mut trust = None;
        let aborted = accepted.is_empty();
        if !aborted {
            let dense: Vec<ModelParams> = accepted.iter().map(|(_, d)| d.clone()).collect();
            let (theta, report) = self.cfg.aggregator.aggregate(&dense, &self.cfg.dtaa)?;
            aggregated = match &report {
                Some(r) => r.selected.iter().map(|&k| accepted[k].0).collect(),
                None => accepted.iter().map(|(c, _)| *c).collect(),
            };
            if let Some(mut r) = report {
                for e in &mut r.excluded {
                    e.client = accepted[e.client].0;
                }
                r.selected = aggregated.clone();
                trust = Some(r);
            }
            self.global = theta;
        }
        let outgoing = if self.cfg.compression_enabled {
            compress(&self.global, &self.cfg.compression)?
        } else {
            compress_lossless(&self.global)?
        };
        let frame = pack_update(&outgoing, Direction::Download, None)?;
        let downloads = self
            .clients
            .iter()
            .map(|c| {
                let msg = if self.cfg.civ_enabled {
                    let iv: [u8; 16] = self.server_rng.random();
                    Transmission::Sealed(encrypt_and_mac(&frame, &c.key, iv, Direction::Download))
                } else {
                    Transmission::Plain(frame.clone())
                };
                (c.id, msg)
            })
            .collect();
        let record = RoundRecord {
            round: self.records.len() + 1,
            global_epoch,
            selected: records.iter().map(|r| r.client).collect(),
            attackers: self.attackers.clone(),
            clip_threshold: None,
            sigma: None,
            uploads: records,
            aggregated,
            aggregator: String::from(self.cfg.aggregator.name()),
            trust,
            aborted,
            downloads: Vec::new(),
            global_digest: self.global.digest().to_hex(),
        };
        Ok(ServerOutcome { downloads, record })
    }

    /// Verify and install a download; on any failure the client keeps its
    /// parameters and raises its integrity flag.
    pub fn client_apply(&mut self, id: usize, download: &Transmission) -> bool {
        let specs = self.global.specs().to_vec();
        let civ = self.cfg.civ_enabled;
        let reset = self.cfg.reset_adam_on_sync;
        let c = &mut self.clients[id];
        let frame = match download {
            Transmission::Sealed(m) if m.direction == Direction::Download => decrypt_and_verify(m, &c.key).ok(),
            Transmission::Plain(f) if !civ => Some(f.clone()),
            _ => None,
        };
        let params = frame
            .and_then(|f| unpack_update(&f, &specs).ok())
            .filter(|u| u.direction == Direction::Download && u.proof.is_none())
            .and_then(|u| dequantize(&u.params).ok());
        match params {
            Some(p) => {
                c.params = p;
                c.integrity_flag = false;
                if reset {
                    c.adam.reset();
                }
                true
            }
            None => {
                c.integrity_flag = true;
                false
            }
        }
    }

    /// One global epoch; returns the round record on sync epochs.
    pub fn global_epoch(&mut self, t_g: usize) -> Result<Option<RoundRecord>> {
        let ids = self.select(t_g);
        self.train_clients(&ids)?;
        if t_g % self.cfg.sync_interval != 0 {
            return Ok(None);
        }
        let (arts, privacy) = self.prepare_uploads(&ids)?;
        let uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        let ServerOutcome { downloads, mut record } = self.server_round(&uploads, t_g)?;
        record.clip_threshold = privacy.map(|p| p.0);
        record.sigma = privacy.map(|p| p.1);
        for (id, msg) in &downloads {
            let applied = self.client_apply(*id, msg);
            record.downloads.push(DownloadRecord { client: *id, bytes: message_size_bytes(msg), applied });
        }
        self.records.push(record.clone());
        Ok(Some(record))
    }

    pub fn run(mut self) -> Result<RunOutput> {
        for t_g in 1..=self.cfg.global_epochs {
            self.global_epoch(t_g)?;
        }
        Ok(RunOutput {
            global: self.global,
            records: self.records,
            participated: (0..self.cfg.clients).filter(|&i| self.participated[i]).collect(),
            attackers: self.attackers,
        })
    }
}

/// Impute every window (observed positions kept) and score the missing ones.
pub fn evaluate_imputation(model: &Mas2s, params: &ModelParams, windows: &[MaskedWindow]) -> Result<ImputationMetrics> {
    let mut acc = MetricAccumulator::default();
    for w in windows {
        let out = impute(model, params, &w.sequence.inputs, true)?;
        acc.push_masked(&out, &w.sequence.targets, &w.mask.m)?;
    }
    acc.finish()
}

/// Per-window mean imputation of the target channel.
pub fn evaluate_mean_baseline(windows: &[MaskedWindow], features: usize, fallback: f64) -> Result<ImputationMetrics> {
    let mut acc = MetricAccumulator::default();
    for w in windows {
        let out = mean_impute(&w.sequence.inputs, features, fallback);
        acc.push_masked(&out, &w.sequence.targets, &w.mask.m)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{mask_dataset, synth_wind, MaskConfig, SynthConfig, MODEL_INPUTS};
    use crate::eval::communication_overhead;

    fn tiny_model() -> Mas2sConfig {
        Mas2sConfig { input_features: MODEL_INPUTS, hidden_size: 4, heads: 1, key_dim: 2, sequence_length: 12 }
    }

    fn tiny_data(clients: usize, seed: u64) -> Vec<ClientData> {
        let sc = SynthConfig { farms: clients, samples_per_farm: 6, sequence_length: 12, power_noise: 0.02 };
        synth_wind(&sc, seed)
            .unwrap()
            .iter()
            .map(|ds| {
                let mut w = mask_dataset(ds, &MaskConfig { run_length_max: 6, ..MaskConfig::default() }, seed).unwrap();
                let test = w.split_off(4);
                ClientData { train: w.into_iter().map(|m| m.sequence).collect(), test }
            })
            .collect()
    }

    fn tiny_cfg() -> FlConfig {
        FlConfig {
            global_epochs: 4,
            sync_interval: 2,
            clients: 4,
            participation: 1.0,
            local_epochs: 1,
            batch_size: 4,
            nizk_group: GroupChoice::Test512,
            compression: CompressionConfig { retain_fraction: 0.3, bits: 4 },
            dtaa: DtaaConfig { neighbors: 2, ..DtaaConfig::default() },
            ..FlConfig::default()
        }
    }

    #[test]
    fn selection_examples() {
        let mut rng = derive_rng(0, "sel", 0);
        assert_eq!(select_clients(16, 1.0, &mut rng), (0..16).collect::<Vec<_>>());
        assert_eq!(select_clients(16, 0.5, &mut rng).len(), 8);
        assert_eq!(select_clients(16, 0.01, &mut rng).len(), 1);
        assert_eq!(select_clients(10, 0.5, &mut derive_rng(3, "s", 0)), select_clients(10, 0.5, &mut derive_rng(3, "s", 0)));
    }

    #[test]
    fn full_run_is_deterministic_and_accounted() {
        let run = || Simulation::new(tiny_cfg(), tiny_model(), tiny_data(4, 1)).unwrap().run().unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.global.digest(), b.global.digest());
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 2);
        for r in &a.records {
            assert_eq!(r.uploads.len(), 4);
            assert_eq!(r.downloads.len(), 4);
            assert!(r.uploads.iter().all(|u| u.accepted && u.hmac_ok == Some(true) && u.nizk_ok == Some(true)));
            assert!(r.downloads.iter().all(|d| d.applied));
        }
        let total: usize = a.records.iter().map(|r| r.total_bytes()).sum();
        assert_eq!(communication_overhead(&a.records), total as f64 / 1_048_576.0);
    }

    #[test]
    fn byte_ledger_matches_serialized_lengths() {
        let mut sim = Simulation::new(tiny_cfg(), tiny_model(), tiny_data(4, 2)).unwrap();
        let ids = sim.select(2);
        sim.train_clients(&ids).unwrap();
        let (arts, _) = sim.prepare_uploads(&ids).unwrap();
        let uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        let out = sim.server_round(&uploads, 2).unwrap();
        for (rec, art) in out.record.uploads.iter().zip(&arts) {
            assert_eq!(rec.upload_bytes + rec.proof_bytes, art.message.to_bytes().len());
            assert_eq!(rec.proof_bytes, art.proof.as_ref().unwrap().to_bytes().len());
        }
        for (_, d) in &out.downloads {
            assert_eq!(message_size_bytes(d), d.to_bytes().len());
        }
    }

    #[test]
    fn tampered_upload_is_excluded() {
        let cfg = FlConfig { clients: 8, aggregator: Aggregator::Fedavg, ..tiny_cfg() };
        let mut sim = Simulation::new(cfg, tiny_model(), tiny_data(8, 3)).unwrap();
        let ids: Vec<usize> = (0..8).collect();
        sim.train_clients(&ids).unwrap();
        let (arts, _) = sim.prepare_uploads(&ids).unwrap();
        let mut uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        if let Transmission::Sealed(m) = &mut uploads[5].message {
            m.ciphertext[7] ^= 0x10;
        }
        let out = sim.server_round(&uploads, 2).unwrap();
        let rec = &out.record;
        assert_eq!(rec.uploads[5].hmac_ok, Some(false));
        assert!(!rec.uploads[5].accepted);
        assert_eq!(rec.aggregated, vec![0, 1, 2, 3, 4, 6, 7]);

        // The result equals aggregating the seven honest uploads alone.
        let mut sim2 = Simulation::new(cfg, tiny_model(), tiny_data(8, 3)).unwrap();
        sim2.train_clients(&ids).unwrap();
        let (arts2, _) = sim2.prepare_uploads(&ids).unwrap();
        let honest: Vec<Upload> = arts2.iter().filter(|a| a.client != 5).map(UploadArtifacts::upload).collect();
        let out2 = sim2.server_round(&honest, 2).unwrap();
        assert_eq!(out.record.global_digest, out2.record.global_digest);
    }

    #[test]
    fn forged_proof_is_excluded() {
        let mut sim = Simulation::new(FlConfig { compression_enabled: false, ..tiny_cfg() }, tiny_model(), tiny_data(4, 4)).unwrap();
        let ids: Vec<usize> = (0..4).collect();
        let (mut arts, _) = sim.prepare_uploads(&ids).unwrap();
        // Client 2 re-seals a frame whose proof response was altered.
        let a = &mut arts[2];
        let mut proof = a.proof.clone().unwrap();
        proof.r_s += 1u32;
        let frame = pack_update(&a.compressed, Direction::Upload, Some(&proof)).unwrap();
        let key = sim.clients()[2].key().clone();
        a.message = Transmission::Sealed(encrypt_and_mac(&frame, &key, [5; 16], Direction::Upload));
        a.proof = Some(proof);
        let uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        let rec = sim.server_round(&uploads, 2).unwrap().record;
        assert_eq!(rec.uploads[2].hmac_ok, Some(true));
        assert_eq!(rec.uploads[2].nizk_ok, Some(false));
        assert!(!rec.aggregated.contains(&2));
        assert!(rec.uploads.iter().filter(|u| u.client != 2).all(|u| u.digest_ok == Some(true)));
    }

    #[test]
    fn ablation_path_is_plain_raw_params() {
        let cfg = FlConfig {
            dp_enabled: false,
            nizk_enabled: false,
            civ_enabled: false,
            compression_enabled: false,
            aggregator: Aggregator::Fedavg,
            ..tiny_cfg()
        };
        let mut sim = Simulation::new(cfg, tiny_model(), tiny_data(4, 5)).unwrap();
        let (arts, privacy) = sim.prepare_uploads(&[0, 1, 2, 3]).unwrap();
        assert!(privacy.is_none());
        for a in &arts {
            let Transmission::Plain(bytes) = &a.message else { panic!("expected plaintext") };
            let u = unpack_update(bytes, sim.global().specs()).unwrap();
            assert!(u.proof.is_none());
            let back = dequantize(&u.params).unwrap();
            assert_eq!(back.digest(), a.clean.digest());
        }
        // With everything off the aggregate is the plain mean of the f32 uploads.
        let uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        sim.server_round(&uploads, 2).unwrap();
        let dense: Vec<ModelParams> =
            arts.iter().map(|a| dequantize(&compress_lossless(&a.clean).unwrap()).unwrap()).collect();
        assert_eq!(sim.global(), &crate::trust::fedavg(&dense).unwrap());
    }

    #[test]
    fn downloads_apply_exactly_or_within_half_scale() {
        let mut sim = Simulation::new(FlConfig { compression_enabled: false, ..tiny_cfg() }, tiny_model(), tiny_data(4, 6)).unwrap();
        sim.global_epoch(1).unwrap();
        let rec = sim.global_epoch(2).unwrap().unwrap();
        assert!(sim.clients().iter().all(|c| c.params.digest().to_hex() == rec.global_digest));

        let mut sim = Simulation::new(tiny_cfg(), tiny_model(), tiny_data(4, 6)).unwrap();
        sim.global_epoch(1).unwrap();
        sim.global_epoch(2).unwrap();
        let c = compress(sim.global(), &sim.config().compression).unwrap();
        let max_scale = c.layers.iter().map(|l| l.scale).fold(0.0, f64::max);
        let dense = dequantize(&c).unwrap();
        for client in sim.clients() {
            for (a, b) in client.params.as_slice().iter().zip(dense.as_slice()) {
                assert!((a - b).abs() <= max_scale / 2.0 + 1e-6);
            }
        }
    }

    #[test]
    fn tampered_download_keeps_old_params() {
        let mut sim = Simulation::new(tiny_cfg(), tiny_model(), tiny_data(4, 7)).unwrap();
        let ids: Vec<usize> = (0..4).collect();
        let (arts, _) = sim.prepare_uploads(&ids).unwrap();
        let uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        let out = sim.server_round(&uploads, 2).unwrap();
        let before = sim.clients()[1].params.clone();
        let mut msg = out.downloads[1].1.clone();
        if let Transmission::Sealed(m) = &mut msg {
            m.mac_tag[0] ^= 1;
        }
        assert!(!sim.client_apply(1, &msg));
        assert_eq!(sim.clients()[1].params, before);
        assert!(sim.clients()[1].integrity_flag);
        // A message sealed for another client fails too.
        assert!(!sim.client_apply(1, &out.downloads[2].1));
        assert!(sim.client_apply(1, &out.downloads[1].1));
    }

    #[test]
    fn zero_survivors_abort_the_round() {
        let mut sim = Simulation::new(tiny_cfg(), tiny_model(), tiny_data(4, 8)).unwrap();
        let before = sim.global().clone();
        let (arts, _) = sim.prepare_uploads(&[0, 1]).unwrap();
        let mut uploads: Vec<Upload> = arts.iter().map(UploadArtifacts::upload).collect();
        for u in &mut uploads {
            if let Transmission::Sealed(m) = &mut u.message {
                m.iv[0] ^= 1;
            }
        }
        let rec = sim.server_round(&uploads, 2).unwrap().record;
        assert!(rec.aborted);
        assert_eq!(sim.global(), &before);
    }

    #[test]
    fn one_sync_when_epochs_equal_interval() {
        let cfg = FlConfig { global_epochs: 3, sync_interval: 3, ..tiny_cfg() };
        let out = Simulation::new(cfg, tiny_model(), tiny_data(4, 9)).unwrap().run().unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].global_epoch, 3);
    }

    #[test]
    fn metrics_on_test_windows() {
        let data = tiny_data(2, 10);
        let sim = Simulation::new(FlConfig { clients: 2, ..tiny_cfg() }, tiny_model(), data.clone()).unwrap();
        let m = evaluate_imputation(sim.model(), sim.global(), &data[0].test).unwrap();
        let b = evaluate_mean_baseline(&data[0].test, MODEL_INPUTS, 0.5).unwrap();
        assert_eq!(m.count, b.count);
        assert!(m.rmse.is_finite() && b.rmse.is_finite());
    }
}
