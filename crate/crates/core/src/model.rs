//! The diarization network: an embedding encoder over acoustic frames and an
//! attractor decoder over enrollment tokens, tied together by
//! `posteriors = sigmoid(A · Eᵀ)` and a frame-level binary cross entropy.
//!
//! Neither sequence carries positional encoding, so the encoder is
//! equivariant to frame permutations and the decoder to speaker-slot
//! permutations. Sublayers are post-norm: `x = norm(x + sublayer(x))`.

use crate::container::{Container, NamedArray};
use crate::features::FeatureSequence;
use crate::numerics::{Tape, Tensor, Var};
use crate::simulate::LabeledMixture;
use crate::{Error, Real, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Posterior clamp applied inside the loss before taking logs.
pub const LOSS_EPS: Real = 1e-7;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub f_in: usize,
    pub dropout: Real,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            n_heads: 4,
            enc_layers: 4,
            dec_layers: 4,
            ffn_dim: 1024,
            f_in: 345,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.f_in == 0 {
            return Err(Error::input("model dimensions must be >= 1"));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::input("layer counts must be >= 1"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::input(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::input("dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Clone, Debug)]
pub struct LinearP {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearP {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as Real).sqrt();
        let w = Tensor::new(
            vec![fan_in, fan_out],
            (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect(),
        )
        .unwrap();
        LinearP { w, b: Tensor::zeros(vec![fan_out]) }
    }
}

#[derive(Clone, Debug)]
pub struct NormP {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl NormP {
    fn init(dim: usize) -> Self {
        NormP {
            gain: Tensor::new(vec![dim], vec![1.0; dim]).unwrap(),
            bias: Tensor::zeros(vec![dim]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttnP {
    pub q: LinearP,
    pub k: LinearP,
    pub v: LinearP,
    pub o: LinearP,
}

impl AttnP {
    fn init(rng: &mut ChaCha8Rng, d: usize) -> Self {
        AttnP {
            q: LinearP::init(rng, d, d),
            k: LinearP::init(rng, d, d),
            v: LinearP::init(rng, d, d),
            o: LinearP::init(rng, d, d),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncLayerP {
    pub attn: AttnP,
    pub norm1: NormP,
    pub ff1: LinearP,
    pub ff2: LinearP,
    pub norm2: NormP,
}

#[derive(Clone, Debug)]
pub struct DecLayerP {
    pub self_attn: AttnP,
    pub norm1: NormP,
    pub cross_attn: AttnP,
    pub norm2: NormP,
    pub ff1: LinearP,
    pub ff2: LinearP,
    pub norm3: NormP,
}

/// All trainable tensors. The three speech-type embeddings are ordinary
/// parameters (rows [non, sgl, ovl] of `type_emb`), never derived from the
/// embedding sequence.
#[derive(Clone, Debug)]
pub struct Parameters {
    pub cfg: ModelConfig,
    pub input: LinearP,
    pub enc: Vec<EncLayerP>,
    pub dec: Vec<DecLayerP>,
    pub type_emb: Tensor,
}

impl Parameters {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let input = LinearP::init(&mut rng, cfg.f_in, d);
        let enc = (0..cfg.enc_layers)
            .map(|_| EncLayerP {
                attn: AttnP::init(&mut rng, d),
                norm1: NormP::init(d),
                ff1: LinearP::init(&mut rng, d, cfg.ffn_dim),
                ff2: LinearP::init(&mut rng, cfg.ffn_dim, d),
                norm2: NormP::init(d),
            })
            .collect();
        let mut dec: Vec<DecLayerP> = (0..cfg.dec_layers)
            .map(|_| DecLayerP {
                self_attn: AttnP::init(&mut rng, d),
                norm1: NormP::init(d),
                cross_attn: AttnP::init(&mut rng, d),
                norm2: NormP::init(d),
                ff1: LinearP::init(&mut rng, d, cfg.ffn_dim),
                ff2: LinearP::init(&mut rng, cfg.ffn_dim, d),
                norm3: NormP::init(d),
            })
            .collect();
        // Attractors and embeddings both leave a unit-variance norm, so raw
        // A·Eᵀ logits start at std ~ sqrt(D). Shrinking the gain of the final
        // attractor norm keeps initial posteriors near 0.5; the gain is
        // trained like any other parameter.
        let last_gain = 0.5 / (d as Real).sqrt();
        if let Some(last) = dec.last_mut() {
            last.norm3.gain.values.iter_mut().for_each(|v| *v = last_gain);
        }
        use rand_distr::StandardNormal;
        let type_emb = Tensor::new(
            vec![3, d],
            (0..3 * d).map(|_| rng.sample::<f64, _>(StandardNormal) as Real).collect(),
        )
        .unwrap();
        Ok(Parameters { cfg: cfg.clone(), input, enc, dec, type_emb })
    }

    /// Visit every tensor in a fixed order shared with [`BoundParams`].
    pub fn for_each_named(&self, f: &mut impl FnMut(&str, &Tensor)) {
        let lin = |f: &mut dyn FnMut(&str, &Tensor), prefix: &str, p: &LinearP| {
            f(&format!("{prefix}.w"), &p.w);
            f(&format!("{prefix}.b"), &p.b);
        };
        let norm = |f: &mut dyn FnMut(&str, &Tensor), prefix: &str, p: &NormP| {
            f(&format!("{prefix}.gain"), &p.gain);
            f(&format!("{prefix}.bias"), &p.bias);
        };
        let attn = |f: &mut dyn FnMut(&str, &Tensor), prefix: &str, p: &AttnP| {
            lin(f, &format!("{prefix}.q"), &p.q);
            lin(f, &format!("{prefix}.k"), &p.k);
            lin(f, &format!("{prefix}.v"), &p.v);
            lin(f, &format!("{prefix}.o"), &p.o);
        };
        lin(f, "input", &self.input);
        for (i, l) in self.enc.iter().enumerate() {
            attn(f, &format!("enc{i}.attn"), &l.attn);
            norm(f, &format!("enc{i}.norm1"), &l.norm1);
            lin(f, &format!("enc{i}.ff1"), &l.ff1);
            lin(f, &format!("enc{i}.ff2"), &l.ff2);
            norm(f, &format!("enc{i}.norm2"), &l.norm2);
        }
        for (i, l) in self.dec.iter().enumerate() {
            attn(f, &format!("dec{i}.self"), &l.self_attn);
            norm(f, &format!("dec{i}.norm1"), &l.norm1);
            attn(f, &format!("dec{i}.cross"), &l.cross_attn);
            norm(f, &format!("dec{i}.norm2"), &l.norm2);
            lin(f, &format!("dec{i}.ff1"), &l.ff1);
            lin(f, &format!("dec{i}.ff2"), &l.ff2);
            norm(f, &format!("dec{i}.norm3"), &l.norm3);
        }
        f("type_emb", &self.type_emb);
    }

    pub fn for_each_named_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        let lin = |f: &mut dyn FnMut(&str, &mut Tensor), prefix: &str, p: &mut LinearP| {
            f(&format!("{prefix}.w"), &mut p.w);
            f(&format!("{prefix}.b"), &mut p.b);
        };
        let norm = |f: &mut dyn FnMut(&str, &mut Tensor), prefix: &str, p: &mut NormP| {
            f(&format!("{prefix}.gain"), &mut p.gain);
            f(&format!("{prefix}.bias"), &mut p.bias);
        };
        let attn = |f: &mut dyn FnMut(&str, &mut Tensor), prefix: &str, p: &mut AttnP| {
            lin(f, &format!("{prefix}.q"), &mut p.q);
            lin(f, &format!("{prefix}.k"), &mut p.k);
            lin(f, &format!("{prefix}.v"), &mut p.v);
            lin(f, &format!("{prefix}.o"), &mut p.o);
        };
        lin(f, "input", &mut self.input);
        for (i, l) in self.enc.iter_mut().enumerate() {
            attn(f, &format!("enc{i}.attn"), &mut l.attn);
            norm(f, &format!("enc{i}.norm1"), &mut l.norm1);
            lin(f, &format!("enc{i}.ff1"), &mut l.ff1);
            lin(f, &format!("enc{i}.ff2"), &mut l.ff2);
            norm(f, &format!("enc{i}.norm2"), &mut l.norm2);
        }
        for (i, l) in self.dec.iter_mut().enumerate() {
            attn(f, &format!("dec{i}.self"), &mut l.self_attn);
            norm(f, &format!("dec{i}.norm1"), &mut l.norm1);
            attn(f, &format!("dec{i}.cross"), &mut l.cross_attn);
            norm(f, &format!("dec{i}.norm2"), &mut l.norm2);
            lin(f, &format!("dec{i}.ff1"), &mut l.ff1);
            lin(f, &format!("dec{i}.ff2"), &mut l.ff2);
            norm(f, &format!("dec{i}.norm3"), &mut l.norm3);
        }
        f("type_emb", &mut self.type_emb);
    }

    pub fn n_tensors(&self) -> usize {
        let mut n = 0;
        self.for_each_named(&mut |_, _| n += 1);
        n
    }

    pub fn n_values(&self) -> usize {
        let mut n = 0;
        self.for_each_named(&mut |_, t| n += t.numel());
        n
    }

    /// Serialize into a container with versioned layout.
    pub fn write_arrays(&self, c: &mut Container, prefix: &str) {
        self.for_each_named(&mut |name, t| {
            c.push(NamedArray::from_reals(format!("{prefix}{name}"), t.shape.clone(), &t.values));
        });
    }

    pub fn read_arrays(cfg: &ModelConfig, c: &Container, prefix: &str) -> Result<Self> {
        let mut params = Parameters::init(cfg, 0)?;
        let mut missing: Vec<String> = Vec::new();
        params.for_each_named_mut(&mut |name, t| {
            match c.get(&format!("{prefix}{name}")) {
                Ok(arr) if arr.shape == t.shape => t.values = arr.to_reals(),
                Ok(arr) => missing.push(format!("{name} (shape {:?} vs {:?})", arr.shape, t.shape)),
                Err(_) => missing.push(name.to_string()),
            }
        });
        if missing.is_empty() {
            Ok(params)
        } else {
            Err(Error::format(format!("checkpoint missing/mismatched arrays: {missing:?}")))
        }
    }
}

// ---------------------------------------------------------------------------
// Tape-bound parameters

#[derive(Clone, Copy)]
pub struct LinearV {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy)]
pub struct NormV {
    pub gain: Var,
    pub bias: Var,
}

#[derive(Clone, Copy)]
pub struct AttnV {
    pub q: LinearV,
    pub k: LinearV,
    pub v: LinearV,
    pub o: LinearV,
}

#[derive(Clone, Copy)]
pub struct EncLayerV {
    pub attn: AttnV,
    pub norm1: NormV,
    pub ff1: LinearV,
    pub ff2: LinearV,
    pub norm2: NormV,
}

#[derive(Clone, Copy)]
pub struct DecLayerV {
    pub self_attn: AttnV,
    pub norm1: NormV,
    pub cross_attn: AttnV,
    pub norm2: NormV,
    pub ff1: LinearV,
    pub ff2: LinearV,
    pub norm3: NormV,
}

pub struct BoundParams {
    pub input: LinearV,
    pub enc: Vec<EncLayerV>,
    pub dec: Vec<DecLayerV>,
    pub type_emb: Var,
    ordered: Vec<Var>,
}

impl BoundParams {
    /// Vars in the same order as [`Parameters::for_each_named`].
    pub fn ordered_vars(&self) -> &[Var] {
        &self.ordered
    }
}

impl Parameters {
    /// Copy all parameter tensors onto a tape. With `trainable`, leaves are
    /// marked for gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let mut ordered = Vec::with_capacity(self.n_tensors());
        let mut put = |tape: &mut Tape, t: &Tensor| -> Var {
            let mut t = t.clone();
            t.requires_grad = trainable;
            t.grad = None;
            let v = tape.leaf(t);
            ordered.push(v);
            v
        };
        let lin = |tape: &mut Tape,
                   put: &mut dyn FnMut(&mut Tape, &Tensor) -> Var,
                   p: &LinearP| LinearV { w: put(tape, &p.w), b: put(tape, &p.b) };
        let norm = |tape: &mut Tape,
                    put: &mut dyn FnMut(&mut Tape, &Tensor) -> Var,
                    p: &NormP| NormV { gain: put(tape, &p.gain), bias: put(tape, &p.bias) };
        let attn = |tape: &mut Tape,
                    put: &mut dyn FnMut(&mut Tape, &Tensor) -> Var,
                    p: &AttnP| AttnV {
            q: LinearV { w: put(tape, &p.q.w), b: put(tape, &p.q.b) },
            k: LinearV { w: put(tape, &p.k.w), b: put(tape, &p.k.b) },
            v: LinearV { w: put(tape, &p.v.w), b: put(tape, &p.v.b) },
            o: LinearV { w: put(tape, &p.o.w), b: put(tape, &p.o.b) },
        };

        let input = lin(tape, &mut put, &self.input);
        let enc = self
            .enc
            .iter()
            .map(|l| EncLayerV {
                attn: attn(tape, &mut put, &l.attn),
                norm1: norm(tape, &mut put, &l.norm1),
                ff1: lin(tape, &mut put, &l.ff1),
                ff2: lin(tape, &mut put, &l.ff2),
                norm2: norm(tape, &mut put, &l.norm2),
            })
            .collect();
        let dec = self
            .dec
            .iter()
            .map(|l| DecLayerV {
                self_attn: attn(tape, &mut put, &l.self_attn),
                norm1: norm(tape, &mut put, &l.norm1),
                cross_attn: attn(tape, &mut put, &l.cross_attn),
                norm2: norm(tape, &mut put, &l.norm2),
                ff1: lin(tape, &mut put, &l.ff1),
                ff2: lin(tape, &mut put, &l.ff2),
                norm3: norm(tape, &mut put, &l.norm3),
            })
            .collect();
        let type_emb = put(tape, &self.type_emb);
        BoundParams { input, enc, dec, type_emb, ordered }
    }
}

// ---------------------------------------------------------------------------
// Forward graph builders

const NORM_EPS: Real = 1e-5;

/// Optional dropout source; `None` disables dropout (inference).
pub struct DropoutCtx<'a> {
    pub p: Real,
    pub rng: &'a mut ChaCha8Rng,
}

fn dropout(tape: &mut Tape, x: Var, ctx: &mut Option<DropoutCtx>) -> Result<Var> {
    let Some(ctx) = ctx.as_mut() else { return Ok(x) };
    if ctx.p <= 0.0 {
        return Ok(x);
    }
    let t = tape.value(x);
    let keep = 1.0 - ctx.p;
    let mask: Vec<Real> = (0..t.numel())
        .map(|_| if ctx.rng.gen_range(0.0..1.0) < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = tape.constant(Tensor::new(t.shape.clone(), mask)?);
    tape.mul(x, m)
}

fn linear(tape: &mut Tape, x: Var, p: LinearV) -> Result<Var> {
    let xw = tape.matmul(x, p.w)?;
    let rows = tape.value(xw).rows();
    let b = tape.broadcast_row(p.b, rows)?;
    tape.add(xw, b)
}

/// Multi-head scaled dot-product attention; queries from `q_in`, keys and
/// values from `kv_in`. No masking: token sets, not sequences.
fn multi_head_attention(
    tape: &mut Tape,
    q_in: Var,
    kv_in: Var,
    p: AttnV,
    n_heads: usize,
) -> Result<Var> {
    let q = linear(tape, q_in, p.q)?;
    let k = linear(tape, kv_in, p.k)?;
    let v = linear(tape, kv_in, p.v)?;
    let d = tape.value(q).cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled);
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&heads)?;
    linear(tape, merged, p.o)
}

fn feed_forward(tape: &mut Tape, x: Var, ff1: LinearV, ff2: LinearV) -> Result<Var> {
    let h = linear(tape, x, ff1)?;
    let h = tape.relu(h);
    linear(tape, h, ff2)
}

fn add_norm(tape: &mut Tape, x: Var, sub: Var, n: NormV) -> Result<Var> {
    let s = tape.add(x, sub)?;
    tape.layer_norm(s, n.gain, n.bias, NORM_EPS)
}

/// Embedding encoder: input projection then `enc_layers` post-norm blocks of
/// self-attention and feed-forward. No positional encoding.
pub fn encode_on_tape(
    tape: &mut Tape,
    x: Var,
    bound: &BoundParams,
    cfg: &ModelConfig,
    mut drop: Option<DropoutCtx>,
) -> Result<Var> {
    if tape.value(x).cols() != cfg.f_in {
        return Err(Error::shape(format!(
            "encoder input width {} != configured {}",
            tape.value(x).cols(),
            cfg.f_in
        )));
    }
    let mut h = linear(tape, x, bound.input)?;
    for layer in &bound.enc {
        let a = multi_head_attention(tape, h, h, layer.attn, cfg.n_heads)?;
        let a = dropout(tape, a, &mut drop)?;
        let h1 = add_norm(tape, h, a, layer.norm1)?;
        let f = feed_forward(tape, h1, layer.ff1, layer.ff2)?;
        let f = dropout(tape, f, &mut drop)?;
        h = add_norm(tape, h1, f, layer.norm2)?;
    }
    Ok(h)
}

/// Attractor decoder: per layer, self-attention over the enrollment tokens,
/// cross-attention into the embedding sequence (queries from the
/// self-attention output), then feed-forward; every sublayer post-normed.
pub fn decode_attractors_on_tape(
    tape: &mut Tape,
    enroll: Var,
    embeddings: Var,
    bound: &BoundParams,
    cfg: &ModelConfig,
    mut drop: Option<DropoutCtx>,
) -> Result<Var> {
    if tape.value(embeddings).rows() == 0 {
        return Err(Error::input("decoder needs a non-empty embedding sequence"));
    }
    if tape.value(enroll).cols() != cfg.d_model {
        return Err(Error::shape(format!(
            "enrollment width {} != d_model {}",
            tape.value(enroll).cols(),
            cfg.d_model
        )));
    }
    let mut h = enroll;
    for layer in &bound.dec {
        let a = multi_head_attention(tape, h, h, layer.self_attn, cfg.n_heads)?;
        let a = dropout(tape, a, &mut drop)?;
        let h1 = add_norm(tape, h, a, layer.norm1)?;
        let ca = multi_head_attention(tape, h1, embeddings, layer.cross_attn, cfg.n_heads)?;
        let ca = dropout(tape, ca, &mut drop)?;
        let h2 = add_norm(tape, h1, ca, layer.norm2)?;
        let f = feed_forward(tape, h2, layer.ff1, layer.ff2)?;
        let f = dropout(tape, f, &mut drop)?;
        h = add_norm(tape, h2, f, layer.norm3)?;
    }
    Ok(h)
}

/// `sigmoid(A · Eᵀ)`, shape (rows of A)×T.
pub fn posteriors_on_tape(tape: &mut Tape, attractors: Var, embeddings: Var) -> Result<Var> {
    let et = tape.transpose(embeddings);
    let logits = tape.matmul(attractors, et)?;
    Ok(tape.sigmoid(logits))
}

/// Mean binary cross entropy over all (S+3)×T cells, with the posterior
/// clamped to [eps, 1-eps] before the logs. Labels are constants.
pub fn bce_loss_on_tape(tape: &mut Tape, posterior: Var, labels: &LabelMatrix) -> Result<Var> {
    let t = tape.value(posterior);
    if t.rows() != labels.rows() || t.cols() != labels.t {
        return Err(Error::contract(format!(
            "loss shapes differ: posterior {}x{} vs labels {}x{}",
            t.rows(),
            t.cols(),
            labels.rows(),
            labels.t
        )));
    }
    let y: Vec<Real> = labels.data.iter().map(|&v| v as Real).collect();
    let shape = vec![labels.rows(), labels.t];
    let y_t = tape.constant(Tensor::new(shape.clone(), y.clone())?);
    let one_minus_y =
        tape.constant(Tensor::new(shape, y.iter().map(|v| 1.0 - v).collect())?);
    let c = tape.clamp(posterior, LOSS_EPS, 1.0 - LOSS_EPS);
    let log_c = tape.log(c)?;
    let neg_c = tape.scale(c, -1.0);
    let omc = tape.add_scalar(neg_c, 1.0);
    let log_omc = tape.log(omc)?;
    let t1 = tape.mul(y_t, log_c)?;
    let t2 = tape.mul(one_minus_y, log_omc)?;
    let s = tape.add(t1, t2)?;
    let m = tape.mean_all(s);
    Ok(tape.scale(m, -1.0))
}

// ---------------------------------------------------------------------------
// Plain-data types and inference entry points

/// Binary activity targets in row order [non, sgl, ovl, spk_1..spk_S].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    pub data: Vec<u8>,
    pub n_speakers: usize,
    pub t: usize,
}

impl LabelMatrix {
    pub fn new(data: Vec<u8>, n_speakers: usize, t: usize) -> Result<Self> {
        if data.len() != (n_speakers + 3) * t {
            return Err(Error::shape(format!(
                "label buffer {} != ({n_speakers}+3)x{t}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("labels must be binary"));
        }
        Ok(LabelMatrix { data, n_speakers, t })
    }

    pub fn from_mixture(mix: &LabeledMixture) -> Self {
        let mut data = Vec::with_capacity((mix.n_speakers + 3) * mix.t);
        data.extend_from_slice(&mix.type_labels);
        data.extend_from_slice(&mix.speaker_activity);
        LabelMatrix { data, n_speakers: mix.n_speakers, t: mix.t }
    }

    pub fn rows(&self) -> usize {
        self.n_speakers + 3
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.t..(r + 1) * self.t]
    }

    /// Speaker row `s` (0-based), skipping the three type rows.
    pub fn speaker_row(&self, s: usize) -> &[u8] {
        self.row(3 + s)
    }
}

/// Speaker-slot enrollment vectors; the three type rows always come from the
/// trained type embeddings and sit first in the decoder input. Zeroed slots
/// are genuine zero vectors and stay marked.
#[derive(Clone, Debug)]
pub struct EnrollmentSequence {
    pub d: usize,
    rows: Vec<Real>,
    zeroed: Vec<bool>,
}

impl EnrollmentSequence {
    pub fn empty(d: usize) -> Self {
        EnrollmentSequence { d, rows: Vec::new(), zeroed: Vec::new() }
    }

    pub fn push_speaker(&mut self, row: Vec<Real>) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::shape(format!(
                "enrollment row width {} != d {}",
                row.len(),
                self.d
            )));
        }
        self.rows.extend_from_slice(&row);
        self.zeroed.push(false);
        Ok(())
    }

    pub fn push_zero(&mut self) {
        self.rows.extend(std::iter::repeat(0.0).take(self.d));
        self.zeroed.push(true);
    }

    pub fn n_speakers(&self) -> usize {
        self.zeroed.len()
    }

    pub fn is_zeroed(&self, s: usize) -> bool {
        self.zeroed[s]
    }

    pub fn speaker_row(&self, s: usize) -> &[Real] {
        &self.rows[s * self.d..(s + 1) * self.d]
    }

    /// Build the full (S+3)×D decoder input on a tape: type embeddings from
    /// the bound parameters, then the speaker rows as constants.
    pub fn to_var(&self, tape: &mut Tape, bound: &BoundParams) -> Result<Var> {
        if self.n_speakers() == 0 {
            return Ok(bound.type_emb);
        }
        let spk = tape.constant(Tensor::new(vec![self.n_speakers(), self.d], self.rows.clone())?);
        tape.concat_rows(&[bound.type_emb, spk])
    }
}

/// Arithmetic mean of the selected embedding rows.
pub fn extract_enrollment(e: &Tensor, frame_idx: &[usize]) -> Result<Vec<Real>> {
    if frame_idx.is_empty() {
        return Err(Error::contract("extract_enrollment with empty index list"));
    }
    let (t, d) = (e.rows(), e.cols());
    if let Some(&bad) = frame_idx.iter().find(|&&i| i >= t) {
        return Err(Error::contract(format!("enrollment index {bad} out of {t} frames")));
    }
    let mut out = vec![0.0; d];
    for &i in frame_idx {
        for j in 0..d {
            out[j] += e.values[i * d + j];
        }
    }
    let inv = 1.0 / frame_idx.len() as Real;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Run the encoder in inference mode (no dropout, no gradients).
pub fn encode(x: &FeatureSequence, p: &Parameters) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, false);
    let xv = tape.constant(Tensor::new(vec![x.t, x.f], x.frames.clone())?);
    let e = encode_on_tape(&mut tape, xv, &bound, &p.cfg, None)?;
    Ok(tape.value(e).clone())
}

/// Run the attractor decoder in inference mode.
pub fn decode_attractors(
    enroll: &EnrollmentSequence,
    embeddings: &Tensor,
    p: &Parameters,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, false);
    let ev = tape.constant(embeddings.clone());
    let en = enroll.to_var(&mut tape, &bound)?;
    let a = decode_attractors_on_tape(&mut tape, en, ev, &bound, &p.cfg, None)?;
    Ok(tape.value(a).clone())
}

/// `sigmoid(A · Eᵀ)` on plain tensors.
pub fn posteriors(attractors: &Tensor, embeddings: &Tensor) -> Result<Tensor> {
    let (rows, d) = (attractors.rows(), attractors.cols());
    let (t, d2) = (embeddings.rows(), embeddings.cols());
    if d != d2 {
        return Err(Error::shape(format!("attractor width {d} != embedding width {d2}")));
    }
    let mut values = vec![0.0; rows * t];
    for r in 0..rows {
        for frame in 0..t {
            let mut dot = 0.0;
            for j in 0..d {
                dot += attractors.values[r * d + j] * embeddings.values[frame * d + j];
            }
            values[r * t + frame] = crate::numerics::sigmoid_scalar(dot);
        }
    }
    Tensor::new(vec![rows, t], values)
}

/// Mean binary cross entropy on plain data (posterior clamped first).
pub fn bce_loss(posterior: &Tensor, labels: &LabelMatrix) -> Result<Real> {
    if posterior.rows() != labels.rows() || posterior.cols() != labels.t {
        return Err(Error::contract(format!(
            "loss shapes differ: posterior {}x{} vs labels {}x{}",
            posterior.rows(),
            posterior.cols(),
            labels.rows(),
            labels.t
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.data.iter().enumerate() {
        let p = posterior.values[i].max(LOSS_EPS).min(1.0 - LOSS_EPS);
        total += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(total / labels.data.len() as Real)
}

/// Posterior matrix and thresholded binary activity ((S+3)×T each) for one
/// utterance. Activity uses `posterior >= threshold`.
pub fn forward_diarize(
    x: &FeatureSequence,
    enroll: &EnrollmentSequence,
    p: &Parameters,
    threshold: Real,
) -> Result<(Tensor, Vec<u8>)> {
    let e = encode(x, p)?;
    diarize_from_embeddings(&e, enroll, p, threshold)
}

/// Same as [`forward_diarize`] but reusing a precomputed embedding sequence.
pub fn diarize_from_embeddings(
    embeddings: &Tensor,
    enroll: &EnrollmentSequence,
    p: &Parameters,
    threshold: Real,
) -> Result<(Tensor, Vec<u8>)> {
    let a = decode_attractors(enroll, embeddings, p)?;
    let post = posteriors(&a, embeddings)?;
    let binary = post.values.iter().map(|&v| (v >= threshold) as u8).collect();
    Ok((post, binary))
}
