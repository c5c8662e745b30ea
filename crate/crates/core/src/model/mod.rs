//! Multi-head-attention sequence-to-sequence imputation model.
//!
//! A bidirectional LSTM encodes the window, a decoder LSTM attends over the
//! encoder states with scaled dot-product heads, and a linear head emits one
//! value per step. Gradients are derived by hand (backpropagation through
//! time) and checked against central finite differences in the tests.
//!
//! Layer layout, with `H` hidden units, `F` inputs, `N_h` heads of width
//! `d_k`:
//!
//! | layers | shape |
//! |---|---|
//! | `enc_fwd.w_{f,i,o,c}`, `enc_bwd.w_{f,i,o,c}` | `[H, H + F]` |
//! | `enc_fwd.b_*`, `enc_bwd.b_*` | `[H]` |
//! | `attn.h{m}.w_q` | `[d_k, H]` |
//! | `attn.h{m}.w_k`, `attn.h{m}.w_v` | `[d_k, 2H]` |
//! | `attn.w_o` | `[H, N_h d_k]` |
//! | `dec.w_{f,i,o,c}` | `[H, 3H]` acting on `[s_prev, c, s_prev]` |
//! | `dec.b_*` | `[H]` |
//! | `out.w`, `out.b` | `[1, H]`, `[1]` |
//!
//! Layers the model does not know are carried along with zero gradient.

mod adam;
mod lstm;
mod train;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use lstm::LstmWeights;
pub use train::{impute, train_local, TrainConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::params::{LayerSpec, ModelParams};
use lstm::{matvec, matvec_t_acc, outer_acc, LstmStep};

const GATES: [&str; 4] = ["f", "i", "o", "c"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mas2sConfig {
    /// Input channels per step, including the trailing mask channel.
    pub input_features: usize,
    pub hidden_size: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub sequence_length: usize,
}

impl Default for Mas2sConfig {
    fn default() -> Self {
        Self { input_features: 7, hidden_size: 128, heads: 2, key_dim: 32, sequence_length: 96 }
    }
}

impl Mas2sConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_features == 0
            || self.hidden_size == 0
            || self.heads == 0
            || self.key_dim == 0
            || self.sequence_length == 0
        {
            return Err(Error::InvalidConfig(String::from("model dimensions must all be positive")));
        }
        Ok(())
    }

    /// `8H(H+F) + 8H + N_h d_k 5H + H N_h d_k + 12H^2 + 4H + H + 1`.
    pub fn param_count(&self) -> usize {
        let (h, f, nh, dk) = (self.hidden_size, self.input_features, self.heads, self.key_dim);
        8 * h * (h + f) + 8 * h + nh * dk * 5 * h + h * nh * dk + 12 * h * h + 4 * h + h + 1
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let (h, f, nh, dk) = (self.hidden_size, self.input_features, self.heads, self.key_dim);
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| specs.push(LayerSpec::new(name, shape).expect("valid spec"));
        let lstm = |prefix: &str, cols: usize, push: &mut dyn FnMut(String, Vec<usize>)| {
            for g in GATES {
                push(format!("{prefix}.w_{g}"), vec![h, cols]);
            }
            for g in GATES {
                push(format!("{prefix}.b_{g}"), vec![h]);
            }
        };
        lstm("enc_fwd", h + f, &mut push);
        lstm("enc_bwd", h + f, &mut push);
        for m in 0..nh {
            push(format!("attn.h{m}.w_q"), vec![dk, h]);
            push(format!("attn.h{m}.w_k"), vec![dk, 2 * h]);
            push(format!("attn.h{m}.w_v"), vec![dk, 2 * h]);
        }
        push(String::from("attn.w_o"), vec![h, nh * dk]);
        lstm("dec", 3 * h, &mut push);
        push(String::from("out.w"), vec![1, h]);
        push(String::from("out.b"), vec![1]);
        specs
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer; a bias shares the
    /// bound of its gate matrix.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams> {
        self.validate()?;
        let specs = self.layer_specs();
        let mut layers = Vec::with_capacity(specs.len());
        let mut last_fan_in = 1;
        for spec in specs {
            let fan_in = match spec.shape() {
                [_, cols] => *cols,
                _ => last_fan_in,
            };
            last_fan_in = fan_in;
            let bound = 1.0 / math::sqrt(fan_in as f64);
            let values = (0..spec.len()).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push((spec, values));
        }
        ModelParams::new(layers)
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmIdx {
    w: [(usize, usize); 4],
    b: [(usize, usize); 4],
}

/// Offsets of every model layer inside a flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    enc: [LstmIdx; 2],
    w_q: Vec<(usize, usize)>,
    w_k: Vec<(usize, usize)>,
    w_v: Vec<(usize, usize)>,
    w_o: (usize, usize),
    dec: LstmIdx,
    out_w: (usize, usize),
    out_b: (usize, usize),
}

/// A configuration bound to a concrete parameter layout.
#[derive(Debug, Clone)]
pub struct Mas2s {
    cfg: Mas2sConfig,
    layout: Layout,
    param_count: usize,
}

fn range<'a>(v: &'a [f64], r: (usize, usize)) -> &'a [f64] {
    &v[r.0..r.0 + r.1]
}

/// Per-sequence activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    enc: [Vec<LstmStep>; 2],
    /// `T x 2H` encoder states.
    encoded: Vec<f64>,
    /// `[head][t][d_k]`.
    keys: Vec<f64>,
    values: Vec<f64>,
    /// `[t][head][d_k]`.
    queries: Vec<f64>,
    /// `[t][head][T]`.
    alphas: Vec<f64>,
    /// `[t][head * d_k]`.
    concat: Vec<f64>,
    dec: Vec<LstmStep>,
    pub outputs: Vec<f64>,
}

impl ForwardCache {
    /// Attention weights of head `m` at decoder step `t`.
    pub fn attention(&self, t: usize, m: usize, heads: usize) -> &[f64] {
        let len = self.enc[0].len();
        &self.alphas[(t * heads + m) * len..(t * heads + m + 1) * len]
    }

    pub fn encoded(&self) -> &[f64] {
        &self.encoded
    }

    pub fn decoder_states(&self) -> impl Iterator<Item = &[f64]> {
        self.dec.iter().map(|s| s.h.as_slice())
    }
}

impl Mas2s {
    /// Resolve the layout of `specs` for `cfg`; every model layer must be
    /// present with the expected shape, extra layers are allowed.
    pub fn bind(cfg: Mas2sConfig, specs: &[LayerSpec]) -> Result<Self> {
        cfg.validate()?;
        let mut offsets = Vec::with_capacity(specs.len());
        let mut acc = 0;
        for s in specs {
            offsets.push(acc);
            acc += s.len();
        }
        let find = |want: &LayerSpec| -> Result<(usize, usize)> {
            let i = specs
                .iter()
                .position(|s| s.name() == want.name())
                .ok_or_else(|| Error::InvalidConfig(format!("missing model layer {}", want.name())))?;
            if specs[i].shape() != want.shape() {
                return Err(Error::InvalidLayer { name: String::from(want.name()), reason: "shape differs from model config" });
            }
            Ok((offsets[i], want.len()))
        };
        let want = cfg.layer_specs();
        let idx: Vec<(usize, usize)> = want.iter().map(find).collect::<Result<_>>()?;
        let lstm = |base: usize| LstmIdx {
            w: core::array::from_fn(|g| idx[base + g]),
            b: core::array::from_fn(|g| idx[base + 4 + g]),
        };
        let nh = cfg.heads;
        let attn = 16;
        Ok(Self {
            cfg,
            layout: Layout {
                enc: [lstm(0), lstm(8)],
                w_q: (0..nh).map(|m| idx[attn + 3 * m]).collect(),
                w_k: (0..nh).map(|m| idx[attn + 3 * m + 1]).collect(),
                w_v: (0..nh).map(|m| idx[attn + 3 * m + 2]).collect(),
                w_o: idx[attn + 3 * nh],
                dec: lstm(attn + 3 * nh + 1),
                out_w: idx[attn + 3 * nh + 9],
                out_b: idx[attn + 3 * nh + 10],
            },
            param_count: acc,
        })
    }

    pub fn config(&self) -> &Mas2sConfig {
        &self.cfg
    }

    fn lstm<'a>(&self, p: &'a [f64], idx: &LstmIdx, input: usize) -> LstmWeights<'a> {
        LstmWeights {
            w: idx.w.map(|r| range(p, r)),
            b: idx.b.map(|r| range(p, r)),
            hidden: self.cfg.hidden_size,
            input,
        }
    }

    fn check(&self, params: &ModelParams, inputs: &[f64]) -> Result<()> {
        if params.param_count() != self.param_count {
            return Err(Error::LayoutMismatch("parameters do not match the bound model layout"));
        }
        if inputs.len() != self.cfg.sequence_length * self.cfg.input_features {
            return Err(Error::Shape("input window must be T x F"));
        }
        Ok(())
    }

    /// Bidirectional encoder states, `T x 2H` row-major.
    pub fn encode(&self, params: &ModelParams, inputs: &[f64]) -> Result<Vec<f64>> {
        self.check(params, inputs)?;
        Ok(self.run_encoder(params.as_slice(), inputs).1)
    }

    fn run_encoder(&self, p: &[f64], x: &[f64]) -> ([Vec<LstmStep>; 2], Vec<f64>) {
        let (t_len, f, h) = (self.cfg.sequence_length, self.cfg.input_features, self.cfg.hidden_size);
        let mut steps: [Vec<Option<LstmStep>>; 2] = [vec![None; t_len], vec![None; t_len]];
        for dir in 0..2 {
            let w = self.lstm(p, &self.layout.enc[dir], f);
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            for k in 0..t_len {
                let t = if dir == 0 { k } else { t_len - 1 - k };
                let mut z = Vec::with_capacity(h + f);
                z.extend_from_slice(&h_prev);
                z.extend_from_slice(&x[t * f..(t + 1) * f]);
                let s = w.forward(z, &c_prev);
                h_prev.clone_from(&s.h);
                c_prev.clone_from(&s.c);
                steps[dir][t] = Some(s);
            }
        }
        let [a, b] = steps;
        let enc: [Vec<LstmStep>; 2] = [a.into_iter().flatten().collect(), b.into_iter().flatten().collect()];
        let mut encoded = vec![0.0; t_len * 2 * h];
        for t in 0..t_len {
            encoded[t * 2 * h..t * 2 * h + h].copy_from_slice(&enc[0][t].h);
            encoded[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&enc[1][t].h);
        }
        (enc, encoded)
    }

    pub fn forward(&self, params: &ModelParams, inputs: &[f64]) -> Result<ForwardCache> {
        self.check(params, inputs)?;
        let p = params.as_slice();
        let (t_len, h, nh, dk) = (self.cfg.sequence_length, self.cfg.hidden_size, self.cfg.heads, self.cfg.key_dim);
        let (enc, encoded) = self.run_encoder(p, inputs);

        let mut keys = vec![0.0; nh * t_len * dk];
        let mut values = vec![0.0; nh * t_len * dk];
        for m in 0..nh {
            for t in 0..t_len {
                let hs = &encoded[t * 2 * h..(t + 1) * 2 * h];
                let o = (m * t_len + t) * dk;
                matvec(range(p, self.layout.w_k[m]), 2 * h, hs, &mut keys[o..o + dk]);
                matvec(range(p, self.layout.w_v[m]), 2 * h, hs, &mut values[o..o + dk]);
            }
        }

        let inv_sqrt = 1.0 / math::sqrt(dk as f64);
        let dec_w = self.lstm(p, &self.layout.dec, 2 * h);
        let out_w = range(p, self.layout.out_w);
        let out_b = range(p, self.layout.out_b)[0];
        let mut queries = vec![0.0; t_len * nh * dk];
        let mut alphas = vec![0.0; t_len * nh * t_len];
        let mut concat = vec![0.0; t_len * nh * dk];
        let mut dec = Vec::with_capacity(t_len);
        let mut outputs = Vec::with_capacity(t_len);
        let mut s_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            for m in 0..nh {
                let qo = (t * nh + m) * dk;
                matvec(range(p, self.layout.w_q[m]), h, &s_prev, &mut queries[qo..qo + dk]);
                let q = &queries[qo..qo + dk];
                let ao = (t * nh + m) * t_len;
                let alpha = &mut alphas[ao..ao + t_len];
                for (i, a) in alpha.iter_mut().enumerate() {
                    let k = &keys[(m * t_len + i) * dk..(m * t_len + i + 1) * dk];
                    *a = q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>() * inv_sqrt;
                }
                softmax(alpha);
                let head = &mut concat[t * nh * dk + m * dk..t * nh * dk + (m + 1) * dk];
                for (i, &a) in alpha.iter().enumerate() {
                    let v = &values[(m * t_len + i) * dk..(m * t_len + i + 1) * dk];
                    for (hd, vv) in head.iter_mut().zip(v) {
                        *hd += a * vv;
                    }
                }
            }
            let mut ctx = vec![0.0; h];
            matvec(range(p, self.layout.w_o), nh * dk, &concat[t * nh * dk..(t + 1) * nh * dk], &mut ctx);
            let mut z = Vec::with_capacity(3 * h);
            z.extend_from_slice(&s_prev);
            z.extend_from_slice(&ctx);
            z.extend_from_slice(&s_prev);
            let step = dec_w.forward(z, &c_prev);
            outputs.push(out_w.iter().zip(&step.h).map(|(a, b)| a * b).sum::<f64>() + out_b);
            s_prev.clone_from(&step.h);
            c_prev.clone_from(&step.c);
            dec.push(step);
        }
        Ok(ForwardCache { enc, encoded, keys, values, queries, alphas, concat, dec, outputs })
    }

    pub fn predict(&self, params: &ModelParams, inputs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(params, inputs)?.outputs)
    }

    /// Gradient of `weight * (1/T) sum_t |y_t - yhat_t|`, accumulated into
    /// the flat `grad` (length = parameter count).
    pub fn backward(&self, params: &ModelParams, cache: &ForwardCache, targets: &[f64], weight: f64, grad: &mut [f64]) -> Result<()> {
        let (t_len, h, nh, dk, f) =
            (self.cfg.sequence_length, self.cfg.hidden_size, self.cfg.heads, self.cfg.key_dim, self.cfg.input_features);
        if targets.len() != t_len || cache.outputs.len() != t_len {
            return Err(Error::Shape("targets must have length T"));
        }
        if grad.len() != self.param_count || params.param_count() != self.param_count {
            return Err(Error::LayoutMismatch("gradient buffer does not match the bound model layout"));
        }
        let p = params.as_slice();
        let lay = &self.layout;
        let scale = weight / t_len as f64;
        let inv_sqrt = 1.0 / math::sqrt(dk as f64);

        // Split `grad` into disjoint per-layer views via a scratch copy per block.
        let mut g = Grads::new(grad);
        let dec_w = self.lstm(p, &lay.dec, 2 * h);
        let out_w = range(p, lay.out_w);
        let w_o = range(p, lay.w_o);

        let mut d_keys = vec![0.0; nh * t_len * dk];
        let mut d_values = vec![0.0; nh * t_len * dk];
        let mut ds_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];
        for t in (0..t_len).rev() {
            let diff = cache.outputs[t] - targets[t];
            let dy = if diff > 0.0 { scale } else if diff < 0.0 { -scale } else { 0.0 };
            let step = &cache.dec[t];
            let mut ds: Vec<f64> = ds_next.clone();
            if dy != 0.0 {
                let gw = g.block(lay.out_w);
                for k in 0..h {
                    gw[k] += dy * step.h[k];
                    ds[k] += dy * out_w[k];
                }
                g.block(lay.out_b)[0] += dy;
            }
            let (dz, dc_prev) = {
                let (mut dw, mut db) = g.lstm(&lay.dec);
                dec_w.backward(step, &ds, &dc_next, &mut dw, &mut db)
            };
            dc_next = dc_prev;
            let s_prev: &[f64] = if t == 0 { &zeros } else { &cache.dec[t - 1].h };
            let mut ds_prev: Vec<f64> = (0..h).map(|k| dz[k] + dz[2 * h + k]).collect();
            let dctx = &dz[h..2 * h];
            let u = &cache.concat[t * nh * dk..(t + 1) * nh * dk];
            outer_acc(g.block(lay.w_o), nh * dk, dctx, u);
            let mut du = vec![0.0; nh * dk];
            matvec_t_acc(w_o, nh * dk, dctx, &mut du);
            for m in 0..nh {
                let dhead = &du[m * dk..(m + 1) * dk];
                let alpha = cache.attention(t, m, nh);
                let q = &cache.queries[(t * nh + m) * dk..(t * nh + m + 1) * dk];
                let mut dalpha = vec![0.0; t_len];
                for i in 0..t_len {
                    let o = (m * t_len + i) * dk;
                    let v = &cache.values[o..o + dk];
                    dalpha[i] = dhead.iter().zip(v).map(|(a, b)| a * b).sum();
                    for (dv, &dh) in d_values[o..o + dk].iter_mut().zip(dhead) {
                        *dv += alpha[i] * dh;
                    }
                }
                let dot: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                let mut dq = vec![0.0; dk];
                for i in 0..t_len {
                    let dscore = alpha[i] * (dalpha[i] - dot) * inv_sqrt;
                    if dscore == 0.0 {
                        continue;
                    }
                    let o = (m * t_len + i) * dk;
                    for j in 0..dk {
                        dq[j] += dscore * cache.keys[o + j];
                        d_keys[o + j] += dscore * q[j];
                    }
                }
                outer_acc(g.block(lay.w_q[m]), h, &dq, s_prev);
                matvec_t_acc(range(p, lay.w_q[m]), h, &dq, &mut ds_prev);
            }
            ds_next = ds_prev;
        }

        let mut d_encoded = vec![0.0; t_len * 2 * h];
        for m in 0..nh {
            for t in 0..t_len {
                let o = (m * t_len + t) * dk;
                let hs = &cache.encoded[t * 2 * h..(t + 1) * 2 * h];
                let dh = &mut d_encoded[t * 2 * h..(t + 1) * 2 * h];
                outer_acc(g.block(lay.w_k[m]), 2 * h, &d_keys[o..o + dk], hs);
                matvec_t_acc(range(p, lay.w_k[m]), 2 * h, &d_keys[o..o + dk], dh);
                outer_acc(g.block(lay.w_v[m]), 2 * h, &d_values[o..o + dk], hs);
                matvec_t_acc(range(p, lay.w_v[m]), 2 * h, &d_values[o..o + dk], dh);
            }
        }

        for dir in 0..2 {
            let w = self.lstm(p, &lay.enc[dir], f);
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            for k in 0..t_len {
                let t = if dir == 0 { t_len - 1 - k } else { k };
                let mut dh = dh_next.clone();
                for (a, b) in dh.iter_mut().zip(&d_encoded[t * 2 * h + dir * h..t * 2 * h + (dir + 1) * h]) {
                    *a += b;
                }
                let (dz, dc_prev) = {
                    let (mut dw, mut db) = g.lstm(&lay.enc[dir]);
                    w.backward(&cache.enc[dir][t], &dh, &dc_next, &mut dw, &mut db)
                };
                dh_next = dz[..h].to_vec();
                dc_next = dc_prev;
            }
        }
        Ok(())
    }

    /// Mean MAE over `batch` and its gradient as parameters.
    pub fn loss_and_grad(&self, params: &ModelParams, batch: &[Sequence]) -> Result<(f64, ModelParams)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let mut grad = vec![0.0; self.param_count];
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            let cache = self.forward(params, &s.inputs)?;
            loss += w * mae_loss(&cache.outputs, &s.targets)?;
            self.backward(params, &cache, &s.targets, w, &mut grad)?;
        }
        Ok((loss, params.with_values(grad)?))
    }

    pub fn batch_loss(&self, params: &ModelParams, batch: &[Sequence]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("evaluation batch"));
        }
        let mut total = 0.0;
        for s in batch {
            total += mae_loss(&self.predict(params, &s.inputs)?, &s.targets)?;
        }
        Ok(total / batch.len() as f64)
    }
}

/// Hands out mutable views of disjoint layer blocks of one gradient buffer.
struct Grads<'a> {
    buf: &'a mut [f64],
}

impl<'a> Grads<'a> {
    fn new(buf: &'a mut [f64]) -> Self {
        Self { buf }
    }

    fn block(&mut self, r: (usize, usize)) -> &mut [f64] {
        &mut self.buf[r.0..r.0 + r.1]
    }

    fn lstm(&mut self, idx: &LstmIdx) -> ([&mut [f64]; 4], [&mut [f64]; 4]) {
        let mut ranges: Vec<(usize, usize, usize)> =
            idx.w.iter().chain(&idx.b).enumerate().map(|(k, &(o, l))| (o, l, k)).collect();
        ranges.sort_unstable();
        let mut out: [Option<&mut [f64]>; 8] = Default::default();
        let mut rest: &mut [f64] = &mut *self.buf;
        let mut consumed = 0;
        for (o, l, k) in ranges {
            let (_, tail) = core::mem::take(&mut rest).split_at_mut(o - consumed);
            let (blk, tail) = tail.split_at_mut(l);
            out[k] = Some(blk);
            rest = tail;
            consumed = o + l;
        }
        let mut it = out.into_iter().map(|b| b.expect("all gate blocks assigned"));
        let w = core::array::from_fn(|_| it.next().unwrap());
        let b = core::array::from_fn(|_| it.next().unwrap());
        (w, b)
    }
}

fn softmax(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// One training or evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    /// `T x F` row-major: degraded features followed by the mask channel.
    pub inputs: Vec<f64>,
    /// Ground-truth target channel, length `T`.
    pub targets: Vec<f64>,
}

/// `(1/T) sum_t |y_t - yhat_t|`.
pub fn mae_loss(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    if predicted.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape("prediction and target lengths differ or are empty"));
    }
    Ok(predicted.iter().zip(targets).map(|(a, b)| (a - b).abs()).sum::<f64>() / targets.len() as f64)
}
