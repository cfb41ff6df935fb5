//! Transformer building blocks: multi-head and multi-query attention, the
//! position-wise feed-forward network, pre-norm decoder blocks, causal
//! masking, and token/positional embedding.
//!
//! All ops work on a single unbatched sequence (`T x d_model`); callers loop
//! over sequences explicitly. Parameters live outside the tape as [`Param`]
//! values and are bound onto a fresh tape per forward pass, as trainable
//! variables or frozen constants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TidesError};
use crate::tensor::{Tape, Tensor, MASK_VALUE};

/// Epsilon used by every layer norm in the stack.
pub const LN_EPS: f64 = 1e-5;

/// Attention flavor: one K/V projection per head, or a single shared pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMode {
    Mha,
    Mqa,
}

/// Shape and wiring parameters for one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub mode: AttnMode,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize, mode: AttnMode, causal: bool) -> Result<Self> {
        if d_model == 0 || n_heads == 0 {
            return Err(TidesError::validation("attention: d_model and n_heads must be > 0"));
        }
        if !d_model.is_multiple_of(n_heads) {
            return Err(TidesError::validation(format!(
                "attention: d_model {d_model} not divisible by n_heads {n_heads}"
            )));
        }
        Ok(Self { d_model, n_heads, mode, causal })
    }

    /// Per-head key/query width.
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// A named, potentially frozen parameter tensor stored off-tape.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub frozen: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize], frozen: bool) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), data: vec![0.0; n], frozen }
    }

    pub fn ones(name: impl Into<String>, shape: &[usize], frozen: bool) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), data: vec![1.0; n], frozen }
    }

    /// Xavier-uniform init for a `rows x cols` matrix.
    pub fn xavier(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        frozen: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        Self { name: name.into(), shape: vec![rows, cols], data, frozen }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Register this parameter on a tape: a gradient-tracked variable when
    /// trainable, a constant when frozen.
    pub fn bind(&self, tape: &Tape) -> Tensor {
        if self.frozen {
            tape.constant(self.data.clone(), &self.shape)
        } else {
            tape.var(self.data.clone(), &self.shape)
        }
    }
}

/// Weights for one decoder block (attention + FFN + two layer norms).
#[derive(Debug, Clone)]
pub struct DecoderBlockParams {
    pub w_q: Vec<Param>,
    pub w_k: Vec<Param>,
    pub w_v: Vec<Param>,
    pub w_o: Param,
    pub w1: Param,
    pub w2: Param,
    pub ln1_gain: Param,
    pub ln1_bias: Param,
    pub ln2_gain: Param,
    pub ln2_bias: Param,
    pub frozen: bool,
}

impl DecoderBlockParams {
    /// Seeded Xavier-uniform init; layer norms start at identity.
    pub fn init(prefix: &str, cfg: &AttentionConfig, frozen: bool, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let d_k = cfg.d_k();
        let n_kv = match cfg.mode {
            AttnMode::Mha => cfg.n_heads,
            AttnMode::Mqa => 1,
        };
        let heads = |tag: &str, count: usize, rng: &mut ChaCha8Rng| -> Vec<Param> {
            (0..count)
                .map(|i| Param::xavier(format!("{prefix}.{tag}{i}"), d, d_k, frozen, rng))
                .collect()
        };
        Self {
            w_q: heads("wq", cfg.n_heads, rng),
            w_k: heads("wk", n_kv, rng),
            w_v: heads("wv", n_kv, rng),
            w_o: Param::xavier(format!("{prefix}.wo"), d, d, frozen, rng),
            w1: Param::xavier(format!("{prefix}.w1"), d, 4 * d, frozen, rng),
            w2: Param::xavier(format!("{prefix}.w2"), 4 * d, d, frozen, rng),
            ln1_gain: Param::ones(format!("{prefix}.ln1_gain"), &[d], frozen),
            ln1_bias: Param::zeros(format!("{prefix}.ln1_bias"), &[d], frozen),
            ln2_gain: Param::ones(format!("{prefix}.ln2_gain"), &[d], frozen),
            ln2_bias: Param::zeros(format!("{prefix}.ln2_bias"), &[d], frozen),
            frozen,
        }
    }

    /// All-zero weights with identity layer norms; handy in tests.
    pub fn zeros(prefix: &str, cfg: &AttentionConfig, frozen: bool) -> Self {
        let mut p = Self::init(prefix, cfg, frozen, &mut crate::seeded_rng(0));
        for param in p.params_mut() {
            if !param.name.contains("ln") {
                param.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        out.extend(self.w_q.iter());
        out.extend(self.w_k.iter());
        out.extend(self.w_v.iter());
        out.extend([
            &self.w_o,
            &self.w1,
            &self.w2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        out.extend(self.w_q.iter_mut());
        out.extend(self.w_k.iter_mut());
        out.extend(self.w_v.iter_mut());
        out.extend([
            &mut self.w_o,
            &mut self.w1,
            &mut self.w2,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]);
        out
    }

    /// Bind every parameter onto `tape`, in the same order as [`Self::params`].
    pub fn bind(&self, tape: &Tape) -> BoundBlock {
        BoundBlock {
            w_q: self.w_q.iter().map(|p| p.bind(tape)).collect(),
            w_k: self.w_k.iter().map(|p| p.bind(tape)).collect(),
            w_v: self.w_v.iter().map(|p| p.bind(tape)).collect(),
            w_o: self.w_o.bind(tape),
            w1: self.w1.bind(tape),
            w2: self.w2.bind(tape),
            ln1_gain: self.ln1_gain.bind(tape),
            ln1_bias: self.ln1_bias.bind(tape),
            ln2_gain: self.ln2_gain.bind(tape),
            ln2_bias: self.ln2_bias.bind(tape),
        }
    }
}

/// Tape-registered view of a [`DecoderBlockParams`] for one forward pass.
pub struct BoundBlock {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_o: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl BoundBlock {
    /// Bound tensors in the same order as [`DecoderBlockParams::params`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.extend(self.w_q.iter());
        out.extend(self.w_k.iter());
        out.extend(self.w_v.iter());
        out.extend([
            &self.w_o,
            &self.w1,
            &self.w2,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
        ]);
        out
    }
}

/// `T x T` additive mask with strictly-upper-triangular entries at the
/// blocking value.
pub fn causal_mask(tape: &Tape, t: usize) -> Tensor {
    let mut data = vec![0.0; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            data[i * t + j] = MASK_VALUE;
        }
    }
    tape.constant(data, &[t, t])
}

fn check_attn_inputs(
    x: &Tensor,
    cfg: &AttentionConfig,
    extra_mask: Option<&Tensor>,
) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[1] != cfg.d_model {
        return Err(TidesError::Shape {
            op: "attention",
            lhs: x.shape().to_vec(),
            rhs: vec![0, cfg.d_model],
        });
    }
    let t = x.shape()[0];
    if let Some(m) = extra_mask {
        if m.shape() != [t, t] {
            return Err(TidesError::Shape {
                op: "attention mask",
                lhs: m.shape().to_vec(),
                rhs: vec![t, t],
            });
        }
    }
    Ok(t)
}

fn attend(
    x: &Tensor,
    b: &BoundBlock,
    cfg: &AttentionConfig,
    extra_mask: Option<&Tensor>,
) -> Result<Tensor> {
    let t = check_attn_inputs(x, cfg, extra_mask)?;
    let tape = x.tape();
    let scale = 1.0 / (cfg.d_k() as f64).sqrt();
    let causal = cfg.causal.then(|| causal_mask(&tape, t));
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for i in 0..cfg.n_heads {
        let kv = match cfg.mode {
            AttnMode::Mha => i,
            AttnMode::Mqa => 0,
        };
        let q = x.matmul(&b.w_q[i])?;
        let k = x.matmul(&b.w_k[kv])?;
        let v = x.matmul(&b.w_v[kv])?;
        let mut scores = q.matmul(&k.transpose()?)?.scale(scale);
        if let Some(c) = &causal {
            scores = scores.add(c)?;
        }
        if let Some(m) = extra_mask {
            scores = scores.add(m)?;
        }
        heads.push(scores.softmax_rows()?.matmul(&v)?);
    }
    let refs: Vec<&Tensor> = heads.iter().collect();
    Tensor::concat(&refs, 1)?.matmul(&b.w_o)
}

/// Multi-head attention: per-head Q/K/V projections, outputs concatenated
/// and mixed by the output projection.
pub fn mha(
    x: &Tensor,
    b: &BoundBlock,
    cfg: &AttentionConfig,
    extra_mask: Option<&Tensor>,
) -> Result<Tensor> {
    if cfg.mode != AttnMode::Mha {
        return Err(TidesError::validation("mha called with a non-MHA config"));
    }
    if b.w_k.len() != cfg.n_heads || b.w_v.len() != cfg.n_heads {
        return Err(TidesError::validation("mha: expected one K/V projection per head"));
    }
    attend(x, b, cfg, extra_mask)
}

/// Multi-query attention: per-head queries against one shared K/V pair.
pub fn mqa(
    x: &Tensor,
    b: &BoundBlock,
    cfg: &AttentionConfig,
    extra_mask: Option<&Tensor>,
) -> Result<Tensor> {
    if cfg.mode != AttnMode::Mqa {
        return Err(TidesError::validation("mqa called with a non-MQA config"));
    }
    if b.w_k.len() != 1 || b.w_v.len() != 1 {
        return Err(TidesError::validation("mqa: expected exactly one shared K/V projection"));
    }
    attend(x, b, cfg, extra_mask)
}

/// Pre-norm decoder block:
/// `z = x + Attn(LN1(x))`, `out = z + GELU(LN2(z) W1) W2`.
pub fn decoder_block(x: &Tensor, b: &BoundBlock, cfg: &AttentionConfig) -> Result<Tensor> {
    let normed = x.layer_norm(&b.ln1_gain, &b.ln1_bias, LN_EPS)?;
    let attn = attend(&normed, b, cfg, None)?;
    let z = x.add(&attn)?;
    let ffn = z.layer_norm(&b.ln2_gain, &b.ln2_bias, LN_EPS)?.matmul(&b.w1)?.gelu().matmul(&b.w2)?;
    z.add(&ffn)
}

/// Token and positional embedding tables.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub e: Param,
    pub p: Param,
}

impl EmbeddingTable {
    pub fn init(
        prefix: &str,
        vocab: usize,
        max_len: usize,
        d_model: usize,
        frozen: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            e: Param::xavier(format!("{prefix}.e"), vocab, d_model, frozen, rng),
            p: Param::xavier(format!("{prefix}.p"), max_len, d_model, frozen, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.e.shape[0]
    }

    pub fn max_len(&self) -> usize {
        self.p.shape[0]
    }

    /// `H^(0)` = token-embedding rows plus positional rows.
    pub fn embed(&self, tape: &Tape, tokens: &[usize]) -> Result<Tensor> {
        if tokens.len() > self.max_len() {
            return Err(TidesError::validation(format!(
                "embed: sequence length {} exceeds max_len {}",
                tokens.len(),
                self.max_len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id >= self.vocab()) {
            return Err(TidesError::validation(format!(
                "embed: token id {bad} out of range for vocab {}",
                self.vocab()
            )));
        }
        let e = self.e.bind(tape);
        let p = self.p.bind(tape);
        e.gather_rows(tokens)?.add(&p.slice_rows(0, tokens.len())?)
    }
}

/// Tied output projection `Y = H E^T` over the (bound) embedding table.
pub fn tied_logits(h: &Tensor, e: &Tensor) -> Result<Tensor> {
    h.matmul(&e.transpose()?)
}
