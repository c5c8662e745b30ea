//! Compressed, authenticated parameter transport.
//!
//! Parameters are sparsified per layer (largest magnitudes kept), the kept
//! values are affinely quantized to `b` bits, the result is framed into the
//! wire format below, and the frame is sealed with AES-128-CBC plus
//! HMAC-SHA-256 over `direction || iv || ciphertext` (encrypt-then-MAC).
//!
//! Plaintext frame, all integers big-endian:
//!
//! ```text
//! "ZTF1" | direction u8 | layer_count u16
//! per layer:
//!   name_len u16 | name | entry_count u32
//!   | retention mask (one bit per layer entry, MSB first, padded to a byte)
//!   | q_values (bitwidth bits each, MSB first, padded to a byte)
//!   | scale f64 | zero_point i32 | bitwidth u8
//! proof_flag u8 | proof (see `NizkProof::to_bytes`) if flag = 1
//! ```
//!
//! Bitwidth 32 marks a lossless layer: each q value is the IEEE-754 bit
//! pattern of an `f32`, with scale 1 and zero point 0.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;
use crate::nizk::NizkProof;
use crate::params::{LayerSpec, ModelParams};

type Aes128CbcEnc = cbc::Encryptor<aes::Aes128>;
type Aes128CbcDec = cbc::Decryptor<aes::Aes128>;
type HmacSha256 = Hmac<Sha256>;

pub const MAGIC: &[u8; 4] = b"ZTF1";
/// Bitwidth tag for lossless `f32` payloads.
pub const RAW_BITS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Fraction of entries kept per layer.
    pub retain_fraction: f64,
    pub bits: u8,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { retain_fraction: 0.3, bits: 4 }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.retain_fraction > 0.0 && self.retain_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "retain_fraction must lie in (0, 1], got {}",
                self.retain_fraction
            )));
        }
        if !(2..=16).contains(&self.bits) {
            return Err(Error::InvalidConfig(format!("bits must lie in [2, 16], got {}", self.bits)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Upload,
    Download,
}

impl Direction {
    pub fn byte(self) -> u8 {
        match self {
            Direction::Upload => 0x01,
            Direction::Download => 0x02,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0x01 => Ok(Direction::Upload),
            0x02 => Ok(Direction::Download),
            _ => Err(Error::Decode("unknown direction byte")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

/// Keep the `ceil(retain·n)` largest-magnitude entries of each layer; ties go
/// to the lower index and the kept indices come back ascending.
pub fn sparsify(params: &ModelParams, retain_fraction: f64) -> Result<Vec<SparseLayer>> {
    if !(retain_fraction > 0.0 && retain_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("retain fraction must lie in (0, 1], got {retain_fraction}")));
    }
    let mut out = Vec::with_capacity(params.layer_count());
    for li in 0..params.layer_count() {
        let layer = params.layer(li);
        let keep = (math::ceil(retain_fraction * layer.len() as f64) as usize).clamp(1, layer.len());
        let mut order: Vec<u32> = (0..layer.len() as u32).collect();
        if keep < layer.len() {
            order.select_nth_unstable_by(keep - 1, |&a, &b| {
                layer[b as usize].abs().total_cmp(&layer[a as usize].abs()).then(a.cmp(&b))
            });
            order.truncate(keep);
            order.sort_unstable();
        }
        let values = order.iter().map(|&i| layer[i as usize]).collect();
        out.push(SparseLayer { indices: order, values });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub q_values: Vec<u32>,
    pub scale: f64,
    pub zero_point: i32,
}

/// Affine `b`-bit quantization: `scale = (max - min)/(2^b - 1)` (1 for a
/// constant list), `zero_point = round(-min/scale)`,
/// `q = clamp(round(v/scale) + zero_point, 0, 2^b - 1)`.
pub fn quantize(values: &[f64], bits: u8) -> Result<Quantized> {
    if values.is_empty() {
        return Err(Error::Empty("values to quantize"));
    }
    if !(2..=16).contains(&bits) {
        return Err(Error::InvalidConfig(format!("bits must lie in [2, 16], got {bits}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(String::from("cannot quantize non-finite values")));
    }
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let levels = ((1u32 << bits) - 1) as f64;
    let scale = if max > min { (max - min) / levels } else { 1.0 };
    let zero_point = math::round(-min / scale) as i32;
    let q_values = values
        .iter()
        .map(|&v| (math::round(v / scale) + zero_point as f64).clamp(0.0, levels) as u32)
        .collect();
    Ok(Quantized { q_values, scale, zero_point })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub spec: LayerSpec,
    pub kept_indices: Vec<u32>,
    pub q_values: Vec<u32>,
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u8,
}

impl CompressedLayer {
    fn check(&self) -> Result<()> {
        if self.kept_indices.len() != self.q_values.len() {
            return Err(Error::Decode("index and value counts differ"));
        }
        if self.kept_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Decode("kept indices not strictly ascending"));
        }
        if self.kept_indices.last().is_some_and(|&i| i as usize >= self.spec.len()) {
            return Err(Error::Decode("kept index beyond layer bounds"));
        }
        if self.bits != RAW_BITS {
            if !(2..=16).contains(&self.bits) {
                return Err(Error::Decode("unsupported bitwidth"));
            }
            let max_q = (1u32 << self.bits) - 1;
            if self.q_values.iter().any(|&q| q > max_q) {
                return Err(Error::Decode("quantized value exceeds bitwidth"));
            }
            if !(self.scale > 0.0) || !self.scale.is_finite() {
                return Err(Error::Decode("scale must be positive and finite"));
            }
        }
        Ok(())
    }

    fn decode_value(&self, q: u32) -> f64 {
        if self.bits == RAW_BITS {
            f32::from_bits(q) as f64
        } else {
            self.scale * (q as f64 - self.zero_point as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedParams {
    pub layers: Vec<CompressedLayer>,
}

impl CompressedParams {
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn kept_entries(&self) -> usize {
        self.layers.iter().map(|l| l.kept_indices.len()).sum()
    }
}

pub fn compress(params: &ModelParams, cfg: &CompressionConfig) -> Result<CompressedParams> {
    cfg.validate()?;
    params.validate()?;
    let sparse = sparsify(params, cfg.retain_fraction)?;
    let layers = sparse
        .into_iter()
        .zip(params.specs())
        .map(|(s, spec)| {
            let q = quantize(&s.values, cfg.bits)?;
            Ok(CompressedLayer {
                spec: spec.clone(),
                kept_indices: s.indices,
                q_values: q.q_values,
                scale: q.scale,
                zero_point: q.zero_point,
                bits: cfg.bits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressedParams { layers })
}

/// Every entry, carried as raw `f32`.
pub fn compress_lossless(params: &ModelParams) -> Result<CompressedParams> {
    params.validate()?;
    let layers = params
        .specs()
        .iter()
        .enumerate()
        .map(|(li, spec)| CompressedLayer {
            spec: spec.clone(),
            kept_indices: (0..spec.len() as u32).collect(),
            q_values: params.layer(li).iter().map(|&v| (v as f32).to_bits()).collect(),
            scale: 1.0,
            zero_point: 0,
            bits: RAW_BITS,
        })
        .collect();
    Ok(CompressedParams { layers })
}

/// Dense reconstruction; dropped coordinates are exactly zero.
pub fn dequantize(c: &CompressedParams) -> Result<ModelParams> {
    let mut layers = Vec::with_capacity(c.layers.len());
    for layer in &c.layers {
        layer.check()?;
        let mut dense = alloc::vec![0.0; layer.spec.len()];
        for (&i, &q) in layer.kept_indices.iter().zip(&layer.q_values) {
            dense[i as usize] = layer.decode_value(q);
        }
        layers.push((layer.spec.clone(), dense));
    }
    ModelParams::new(layers)
}

// ---------------------------------------------------------------------------
// framing

fn pack_bits(values: impl Iterator<Item = u32>, bits: u8, out: &mut Vec<u8>) {
    let mut acc: u64 = 0;
    let mut n: u32 = 0;
    for v in values {
        acc = (acc << bits) | (v as u64 & ((1u64 << bits) - 1));
        n += bits as u32;
        while n >= 8 {
            out.push((acc >> (n - 8)) as u8);
            n -= 8;
        }
    }
    if n > 0 {
        out.push((acc << (8 - n)) as u8);
    }
}

fn unpack_bits(buf: &[u8], count: usize, bits: u8) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut n: u32 = 0;
    let mut bytes = buf.iter();
    while out.len() < count {
        while n < bits as u32 {
            acc = (acc << 8) | *bytes.next().unwrap_or(&0) as u64;
            n += 8;
        }
        out.push(((acc >> (n - bits as u32)) & ((1u64 << bits) - 1)) as u32);
        n -= bits as u32;
    }
    out
}

fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Frame a compressed update. Proofs ride on uploads only.
pub fn pack_update(c: &CompressedParams, direction: Direction, proof: Option<&NizkProof>) -> Result<Vec<u8>> {
    if direction == Direction::Download && proof.is_some() {
        return Err(Error::InvalidConfig(String::from("download messages carry no proof")));
    }
    if c.layers.len() > u16::MAX as usize {
        return Err(Error::InvalidConfig(String::from("too many layers for the wire format")));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(direction.byte());
    out.extend_from_slice(&(c.layers.len() as u16).to_be_bytes());
    for layer in &c.layers {
        layer.check()?;
        let name = layer.spec.name().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(layer.kept_indices.len() as u32).to_be_bytes());
        let mut mask = alloc::vec![0u8; layer.spec.len().div_ceil(8)];
        for &i in &layer.kept_indices {
            mask[i as usize / 8] |= 0x80 >> (i % 8);
        }
        out.extend_from_slice(&mask);
        pack_bits(layer.q_values.iter().copied(), layer.bits, &mut out);
        out.extend_from_slice(&layer.scale.to_be_bytes());
        out.extend_from_slice(&layer.zero_point.to_be_bytes());
        out.push(layer.bits);
    }
    match proof {
        Some(p) => {
            out.push(1);
            out.extend_from_slice(&p.to_bytes());
        }
        None => out.push(0),
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub direction: Direction,
    pub params: CompressedParams,
    pub proof: Option<NizkProof>,
}

/// Parse a frame against the receiver's known layer layout.
///
/// The bitwidth byte trails the packed values it describes, so each layer
/// is parsed by trying the admissible widths and keeping the one whose
/// trailing byte matches and whose remainder parses.
pub fn unpack_update(bytes: &[u8], specs: &[LayerSpec]) -> Result<Update> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::Decode("missing ZTF1 magic"));
    }
    let direction = Direction::from_byte(bytes[4])?;
    let layer_count = u16::from_be_bytes([bytes[5], bytes[6]]) as usize;
    if layer_count != specs.len() {
        return Err(Error::Decode("layer count differs from expected layout"));
    }
    let mut layers = Vec::with_capacity(layer_count);
    let proof = parse_layers(bytes, 7, specs, &mut layers)?;
    if direction == Direction::Download && proof.is_some() {
        return Err(Error::Decode("download frame carries a proof"));
    }
    Ok(Update { direction, params: CompressedParams { layers }, proof })
}

fn parse_layers(
    bytes: &[u8],
    pos: usize,
    specs: &[LayerSpec],
    layers: &mut Vec<CompressedLayer>,
) -> Result<Option<NizkProof>> {
    let Some((spec, rest_specs)) = specs.split_first() else {
        return parse_tail(bytes, pos);
    };
    let rd = |from: usize, n: usize| bytes.get(from..from + n).ok_or(Error::Decode("truncated frame"));
    let name_len = u16::from_be_bytes(rd(pos, 2)?.try_into().unwrap()) as usize;
    let name = rd(pos + 2, name_len)?;
    if name != spec.name().as_bytes() {
        return Err(Error::Decode("layer name differs from expected layout"));
    }
    let mut p = pos + 2 + name_len;
    let entry_count = u32::from_be_bytes(rd(p, 4)?.try_into().unwrap()) as usize;
    p += 4;
    let mask = rd(p, spec.len().div_ceil(8))?;
    p += mask.len();
    let kept: Vec<u32> =
        (0..spec.len() as u32).filter(|&i| mask[i as usize / 8] & (0x80 >> (i % 8)) != 0).collect();
    if kept.len() != entry_count {
        return Err(Error::Decode("entry count disagrees with retention mask"));
    }
    let mut last_err = Error::Decode("no admissible bitwidth");
    for bits in core::iter::once(RAW_BITS).chain((2u8..=16).rev()) {
        let values_end = p + packed_len(entry_count, bits);
        let Ok(trailer) = rd(values_end, 13) else { continue };
        if trailer[12] != bits {
            continue;
        }
        let layer = CompressedLayer {
            spec: spec.clone(),
            kept_indices: kept.clone(),
            q_values: unpack_bits(&bytes[p..values_end], entry_count, bits),
            scale: f64::from_be_bytes(trailer[..8].try_into().unwrap()),
            zero_point: i32::from_be_bytes(trailer[8..12].try_into().unwrap()),
            bits,
        };
        if let Err(e) = layer.check() {
            last_err = e;
            continue;
        }
        layers.push(layer);
        match parse_layers(bytes, values_end + 13, rest_specs, layers) {
            Ok(proof) => return Ok(proof),
            Err(e) => {
                layers.pop();
                last_err = e;
            }
        }
    }
    Err(last_err)
}

fn parse_tail(bytes: &[u8], pos: usize) -> Result<Option<NizkProof>> {
    match bytes.get(pos) {
        Some(0) if bytes.len() == pos + 1 => Ok(None),
        Some(1) => {
            let (proof, used) = NizkProof::from_bytes(&bytes[pos + 1..])?;
            if pos + 1 + used != bytes.len() {
                return Err(Error::Decode("trailing bytes after proof"));
            }
            Ok(Some(proof))
        }
        Some(0) => Err(Error::Decode("trailing bytes after frame")),
        Some(_) => Err(Error::Decode("invalid proof flag")),
        None => Err(Error::Decode("truncated frame before proof flag")),
    }
}

// ---------------------------------------------------------------------------
// confidentiality and integrity

/// Pre-shared 32-byte secret; cipher and MAC keys are labeled SHA-256 splits.
#[derive(Clone, PartialEq, Eq)]
pub struct ChannelKey {
    sym_key: [u8; 32],
}

impl core::fmt::Debug for ChannelKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("ChannelKey { .. }")
    }
}

impl ChannelKey {
    pub fn new(sym_key: [u8; 32]) -> Self {
        Self { sym_key }
    }

    fn derive(&self, label: &[u8]) -> [u8; 16] {
        let h = Sha256::new().chain_update(label).chain_update(self.sym_key).finalize();
        h[..16].try_into().unwrap()
    }

    pub fn cipher_key(&self) -> [u8; 16] {
        self.derive(b"ztfed/aes-128-cbc")
    }

    pub fn mac_key(&self) -> [u8; 16] {
        self.derive(b"ztfed/hmac-sha256")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedMessage {
    pub direction: Direction,
    pub iv: [u8; 16],
    pub ciphertext: Vec<u8>,
    pub mac_tag: [u8; 32],
}

fn mac_for(key: &ChannelKey, direction: Direction, iv: &[u8; 16], ciphertext: &[u8]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(&key.mac_key()).expect("HMAC accepts any key length");
    mac.update(&[direction.byte()]);
    mac.update(iv);
    mac.update(ciphertext);
    mac
}

pub fn encrypt_and_mac(payload: &[u8], key: &ChannelKey, iv: [u8; 16], direction: Direction) -> EncryptedMessage {
    let ciphertext = Aes128CbcEnc::new(&key.cipher_key().into(), &iv.into()).encrypt_padded_vec_mut::<Pkcs7>(payload);
    let mac_tag = mac_for(key, direction, &iv, &ciphertext).finalize().into_bytes().into();
    EncryptedMessage { direction, iv, ciphertext, mac_tag }
}

/// MAC first (constant-time compare), then decrypt and strip padding.
pub fn decrypt_and_verify(msg: &EncryptedMessage, key: &ChannelKey) -> Result<Vec<u8>> {
    mac_for(key, msg.direction, &msg.iv, &msg.ciphertext).verify_slice(&msg.mac_tag).map_err(|_| Error::MacMismatch)?;
    if msg.ciphertext.is_empty() || msg.ciphertext.len() % 16 != 0 {
        return Err(Error::PaddingError);
    }
    Aes128CbcDec::new(&key.cipher_key().into(), &msg.iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(&msg.ciphertext)
        .map_err(|_| Error::PaddingError)
}

impl EncryptedMessage {
    /// `direction u8 | iv [16] | ciphertext_len u32 | ciphertext | tag [32]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes());
        out.push(self.direction.byte());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.mac_tag);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 53 {
            return Err(Error::Decode("truncated encrypted message"));
        }
        let direction = Direction::from_byte(buf[0])?;
        let iv: [u8; 16] = buf[1..17].try_into().unwrap();
        let len = u32::from_be_bytes(buf[17..21].try_into().unwrap()) as usize;
        if buf.len() != 21 + len + 32 {
            return Err(Error::Decode("encrypted message length mismatch"));
        }
        Ok(Self {
            direction,
            iv,
            ciphertext: buf[21..21 + len].to_vec(),
            mac_tag: buf[21 + len..].try_into().unwrap(),
        })
    }

    pub fn size_bytes(&self) -> usize {
        1 + 16 + 4 + self.ciphertext.len() + 32
    }
}

/// What actually crosses the simulated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transmission {
    /// Packed frame without confidentiality (integrity checks disabled).
    Plain(Vec<u8>),
    Sealed(EncryptedMessage),
}

impl Transmission {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Transmission::Plain(b) => b.clone(),
            Transmission::Sealed(m) => m.to_bytes(),
        }
    }
}

/// Exact serialized length of a transmitted message.
pub fn message_size_bytes(msg: &Transmission) -> usize {
    match msg {
        Transmission::Plain(b) => b.len(),
        Transmission::Sealed(m) => m.size_bytes(),
    }
}
