//! The per-cluster forecasting model.
//!
//! Each normalized input window is patch-embedded, mixed across neighboring
//! regions by graph-masked spatial attention, aligned against a projected
//! token-embedding space by cross-attention, concatenated after the region's
//! prompt tokens, pushed through a small frozen causal decoder stack, and
//! read out by a linear head into `P` normalized predictions.
//!
//! Trainable: patch projector, spatial attention, the embedding projector,
//! alignment attention, and the output head. Frozen: the decoder backbone
//! and the embedding tables.

use crate::attention::{
    AttentionConfig, AttnMode, BoundBlock, DecoderBlockParams, EmbeddingTable, Param,
};
use crate::error::{Result, TidesError};
use crate::geo::SpatialGraph;
use crate::prompt::PromptDescriptor;
use crate::revin::{denormalize, RevinState};
use crate::tensor::{Tape, Tensor, MASK_VALUE};

/// Model shape hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TidesConfig {
    pub history: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub backbone_layers: usize,
    pub prompt_max_len: usize,
    pub e_low_dim: usize,
    pub mask_value: f64,
}

impl Default for TidesConfig {
    fn default() -> Self {
        Self {
            history: 96,
            horizon: 4,
            d_model: 16,
            n_heads: 8,
            patch_len: 16,
            stride: 8,
            backbone_layers: 4,
            prompt_max_len: 64,
            e_low_dim: 16,
            mask_value: MASK_VALUE,
        }
    }
}

impl TidesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history < self.patch_len {
            return Err(TidesError::validation(format!(
                "config: history {} shorter than patch_len {}",
                self.history, self.patch_len
            )));
        }
        if self.stride == 0 || self.patch_len == 0 || self.horizon == 0 {
            return Err(TidesError::validation("config: stride, patch_len, horizon must be > 0"));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(TidesError::validation(format!(
                "config: d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.backbone_layers == 0 || self.prompt_max_len == 0 {
            return Err(TidesError::validation("config: backbone_layers and prompt_max_len must be > 0"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.history - self.patch_len) / self.stride + 1
    }

    fn attn_cfg(&self, mode: AttnMode, causal: bool) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            mode,
            causal,
        }
    }

    fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// One cluster's worth of aligned inputs for a single timestamp.
#[derive(Debug, Clone)]
pub struct ClusterBatch {
    pub cluster_id: String,
    pub region_ids: Vec<String>,
    /// Normalized windows, one length-`history` row per region.
    pub windows: Vec<Vec<f64>>,
    pub revin_states: Vec<RevinState>,
    pub graph: SpatialGraph,
    pub prompts: Vec<PromptDescriptor>,
}

impl ClusterBatch {
    pub fn validate(&self, cfg: &TidesConfig) -> Result<()> {
        let n = self.region_ids.len();
        if n == 0 {
            return Err(TidesError::validation("batch: no regions"));
        }
        if self.windows.len() != n || self.revin_states.len() != n || self.prompts.len() != n {
            return Err(TidesError::validation("batch: per-region field lengths disagree"));
        }
        if self.graph.n != n || self.graph.region_ids != self.region_ids {
            return Err(TidesError::validation(
                "batch: graph node order must match region_ids",
            ));
        }
        if let Some(w) = self.windows.iter().find(|w| w.len() != cfg.history) {
            return Err(TidesError::validation(format!(
                "batch: window length {} != history {}",
                w.len(),
                cfg.history
            )));
        }
        Ok(())
    }
}

/// All model parameters, trainable and frozen.
#[derive(Debug, Clone)]
pub struct TidesParams {
    pub patch_proj: Param,
    pub sa_q: Vec<Param>,
    pub sa_k: Vec<Param>,
    pub sa_v: Vec<Param>,
    pub e_low_proj: Param,
    pub da_q: Vec<Param>,
    pub da_k: Vec<Param>,
    pub da_v: Vec<Param>,
    pub w_out: Param,
    pub backbone: Vec<DecoderBlockParams>,
    pub embedding: EmbeddingTable,
}

impl TidesParams {
    /// Seeded init. `vocab` is the prompt tokenizer's vocabulary size.
    pub fn init(cfg: &TidesConfig, vocab: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab == 0 {
            return Err(TidesError::validation("init: vocab must be > 0"));
        }
        let mut rng = crate::seeded_rng(seed);
        let d = cfg.d_model;
        let d_k = cfg.d_k();
        let heads = |tag: &str, rows: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Param> {
            (0..cfg.n_heads)
                .map(|i| Param::xavier(format!("{tag}{i}"), rows, d_k, false, rng))
                .collect()
        };
        let backbone_cfg = cfg.attn_cfg(AttnMode::Mqa, true);
        let backbone = (0..cfg.backbone_layers)
            .map(|l| DecoderBlockParams::init(&format!("backbone{l}"), &backbone_cfg, true, &mut rng))
            .collect();
        let max_len = cfg.prompt_max_len + cfg.num_patches();
        Ok(Self {
            patch_proj: Param::xavier("patch_proj", cfg.patch_len, d, false, &mut rng),
            sa_q: heads("sa.wq", d, &mut rng),
            sa_k: heads("sa.wk", d, &mut rng),
            sa_v: heads("sa.wv", d, &mut rng),
            e_low_proj: Param::xavier("e_low_proj", d, cfg.e_low_dim, false, &mut rng),
            da_q: heads("da.wq", d, &mut rng),
            da_k: (0..cfg.n_heads)
                .map(|i| Param::xavier(format!("da.wk{i}"), cfg.e_low_dim, d_k, false, &mut rng))
                .collect(),
            da_v: (0..cfg.n_heads)
                .map(|i| Param::xavier(format!("da.wv{i}"), cfg.e_low_dim, d_k, false, &mut rng))
                .collect(),
            w_out: Param::xavier("w_out", cfg.num_patches() * d, cfg.horizon, false, &mut rng),
            backbone,
            embedding: EmbeddingTable::init("emb", vocab, max_len, d, true, &mut rng),
        })
    }

    /// Every parameter in a fixed, checkpoint-stable order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = vec![&self.patch_proj];
        out.extend(self.sa_q.iter());
        out.extend(self.sa_k.iter());
        out.extend(self.sa_v.iter());
        out.push(&self.e_low_proj);
        out.extend(self.da_q.iter());
        out.extend(self.da_k.iter());
        out.extend(self.da_v.iter());
        out.push(&self.w_out);
        for b in &self.backbone {
            out.extend(b.params());
        }
        out.push(&self.embedding.e);
        out.push(&self.embedding.p);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = vec![&mut self.patch_proj];
        out.extend(self.sa_q.iter_mut());
        out.extend(self.sa_k.iter_mut());
        out.extend(self.sa_v.iter_mut());
        out.push(&mut self.e_low_proj);
        out.extend(self.da_q.iter_mut());
        out.extend(self.da_k.iter_mut());
        out.extend(self.da_v.iter_mut());
        out.push(&mut self.w_out);
        for b in &mut self.backbone {
            out.extend(b.params_mut());
        }
        out.push(&mut self.embedding.e);
        out.push(&mut self.embedding.p);
        out
    }

    /// Bind every parameter onto `tape`, in [`Self::params`] order.
    pub fn bind(&self, tape: &Tape) -> BoundTides {
        BoundTides {
            patch_proj: self.patch_proj.bind(tape),
            sa_q: self.sa_q.iter().map(|p| p.bind(tape)).collect(),
            sa_k: self.sa_k.iter().map(|p| p.bind(tape)).collect(),
            sa_v: self.sa_v.iter().map(|p| p.bind(tape)).collect(),
            e_low_proj: self.e_low_proj.bind(tape),
            da_q: self.da_q.iter().map(|p| p.bind(tape)).collect(),
            da_k: self.da_k.iter().map(|p| p.bind(tape)).collect(),
            da_v: self.da_v.iter().map(|p| p.bind(tape)).collect(),
            w_out: self.w_out.bind(tape),
            backbone: self.backbone.iter().map(|b| b.bind(tape)).collect(),
            emb_e: self.embedding.e.bind(tape),
            emb_p: self.embedding.p.bind(tape),
        }
    }

    /// Save to `dir/model_<cluster_id>.bin` plus manifest.
    pub fn save(&self, dir: &std::path::Path, cluster_id: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::checkpoint::save(
            &self.params(),
            &dir.join(format!("model_{cluster_id}.bin")),
            &dir.join(format!("model_{cluster_id}.json")),
        )
    }

    /// Restore in place from a checkpoint written by [`Self::save`].
    pub fn load(&mut self, dir: &std::path::Path, cluster_id: &str) -> Result<()> {
        let loaded = crate::checkpoint::load(
            &dir.join(format!("model_{cluster_id}.bin")),
            &dir.join(format!("model_{cluster_id}.json")),
        )?;
        crate::checkpoint::restore(self.params_mut(), &loaded)
    }
}

/// Tape-bound view of [`TidesParams`] for one forward pass.
pub struct BoundTides {
    pub patch_proj: Tensor,
    pub sa_q: Vec<Tensor>,
    pub sa_k: Vec<Tensor>,
    pub sa_v: Vec<Tensor>,
    pub e_low_proj: Tensor,
    pub da_q: Vec<Tensor>,
    pub da_k: Vec<Tensor>,
    pub da_v: Vec<Tensor>,
    pub w_out: Tensor,
    pub backbone: Vec<BoundBlock>,
    pub emb_e: Tensor,
    pub emb_p: Tensor,
}

impl BoundTides {
    /// Bound tensors in the same order as [`TidesParams::params`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = vec![&self.patch_proj];
        out.extend(self.sa_q.iter());
        out.extend(self.sa_k.iter());
        out.extend(self.sa_v.iter());
        out.push(&self.e_low_proj);
        out.extend(self.da_q.iter());
        out.extend(self.da_k.iter());
        out.extend(self.da_v.iter());
        out.push(&self.w_out);
        for b in &self.backbone {
            out.extend(b.tensors());
        }
        out.push(&self.emb_e);
        out.push(&self.emb_p);
        out
    }
}

/// Slice a window into overlapping patches and project each to `d_model`.
pub fn patch_embed(
    tape: &Tape,
    window: &[f64],
    patch_proj: &Tensor,
    cfg: &TidesConfig,
) -> Result<Tensor> {
    if window.len() < cfg.patch_len {
        return Err(TidesError::validation(format!(
            "patch_embed: window length {} shorter than patch_len {}",
            window.len(),
            cfg.patch_len
        )));
    }
    let np = (window.len() - cfg.patch_len) / cfg.stride + 1;
    let mut rows = Vec::with_capacity(np * cfg.patch_len);
    for p in 0..np {
        let start = p * cfg.stride;
        rows.extend_from_slice(&window[start..start + cfg.patch_len]);
    }
    tape.constant(rows, &[np, cfg.patch_len]).matmul(patch_proj)
}

/// Per patch index, multi-head attention across the region axis with the
/// graph's additive mask; heads concatenated, no output projection.
pub fn spatial_attention(
    region_tokens: &[Tensor],
    graph: &SpatialGraph,
    b: &BoundTides,
    cfg: &TidesConfig,
) -> Result<Vec<Tensor>> {
    let r = region_tokens.len();
    if graph.n != r {
        return Err(TidesError::validation(format!(
            "spatial_attention: graph has {} nodes but batch has {r} regions",
            graph.n
        )));
    }
    let np = cfg.num_patches();
    for t in region_tokens {
        if t.shape() != [np, cfg.d_model] {
            return Err(TidesError::Shape {
                op: "spatial_attention",
                lhs: t.shape().to_vec(),
                rhs: vec![np, cfg.d_model],
            });
        }
    }
    let tape = region_tokens[0].tape();
    let mask = tape.constant(graph.mask.clone(), &[r, r]);
    let scale = 1.0 / (cfg.d_k() as f64).sqrt();
    // One attention pass per patch index, then regroup rows by region.
    let mut per_patch = Vec::with_capacity(np);
    for p in 0..np {
        let rows: Vec<Tensor> = region_tokens
            .iter()
            .map(|t| t.slice_rows(p, 1))
            .collect::<Result<_>>()?;
        let row_refs: Vec<&Tensor> = rows.iter().collect();
        let x = Tensor::concat(&row_refs, 0)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let q = x.matmul(&b.sa_q[h])?;
            let k = x.matmul(&b.sa_k[h])?;
            let v = x.matmul(&b.sa_v[h])?;
            let scores = q.matmul(&k.transpose()?)?.scale(scale).add(&mask)?;
            heads.push(scores.softmax_rows()?.matmul(&v)?);
        }
        let head_refs: Vec<&Tensor> = heads.iter().collect();
        per_patch.push(Tensor::concat(&head_refs, 1)?);
    }
    (0..r)
        .map(|i| {
            let rows: Vec<Tensor> = per_patch
                .iter()
                .map(|t| t.slice_rows(i, 1))
                .collect::<Result<_>>()?;
            let refs: Vec<&Tensor> = rows.iter().collect();
            Tensor::concat(&refs, 0)
        })
        .collect()
}

/// Cross-attention from one region's spatial tokens into the projected
/// embedding space: queries from `h_sa`, keys/values from `e_low`.
pub fn domain_align(
    h_sa: &Tensor,
    e_low: &Tensor,
    b: &BoundTides,
    cfg: &TidesConfig,
) -> Result<Tensor> {
    let scale = 1.0 / (cfg.d_k() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = h_sa.matmul(&b.da_q[h])?;
        let k = e_low.matmul(&b.da_k[h])?;
        let v = e_low.matmul(&b.da_v[h])?;
        let scores = q.matmul(&k.transpose()?)?.scale(scale);
        heads.push(scores.softmax_rows()?.matmul(&v)?);
    }
    let refs: Vec<&Tensor> = heads.iter().collect();
    Tensor::concat(&refs, 1)
}

fn check_finite(t: &Tensor, stage: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TidesError::Numeric(format!("non-finite activation at {stage}")))
    }
}

/// Full forward pass: `R_c x horizon` normalized predictions.
pub fn forward(
    tape: &Tape,
    batch: &ClusterBatch,
    params: &TidesParams,
    cfg: &TidesConfig,
) -> Result<(Tensor, BoundTides)> {
    batch.validate(cfg)?;
    let b = params.bind(tape);
    let np = cfg.num_patches();

    let tokens: Vec<Tensor> = batch
        .windows
        .iter()
        .map(|w| patch_embed(tape, w, &b.patch_proj, cfg))
        .collect::<Result<_>>()?;
    let h_sa = spatial_attention(&tokens, &batch.graph, &b, cfg)?;
    for (i, t) in h_sa.iter().enumerate() {
        check_finite(t, &format!("spatial attention (region {})", batch.region_ids[i]))?;
    }
    let e_low = b.emb_e.matmul(&b.e_low_proj)?;
    let backbone_cfg = cfg.attn_cfg(AttnMode::Mqa, true);

    let mut preds = Vec::with_capacity(batch.region_ids.len());
    for (i, region) in batch.region_ids.iter().enumerate() {
        let h_da = domain_align(&h_sa[i], &e_low, &b, cfg)?;
        check_finite(&h_da, &format!("domain alignment (region {region})"))?;
        let mut ids = batch.prompts[i].token_ids.clone();
        ids.truncate(cfg.prompt_max_len);
        let vocab = params.embedding.vocab();
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(TidesError::validation(format!(
                "forward: prompt token id {bad} out of range for vocab {vocab}"
            )));
        }
        let prompt_tok = b.emb_e.gather_rows(&ids)?;
        // Prompt tokens first so causal attention lets traffic tokens read them.
        let seq_len = ids.len() + np;
        let mut h = Tensor::concat(&[&prompt_tok, &h_da], 0)?
            .add(&b.emb_p.slice_rows(0, seq_len)?)?;
        for (l, block) in b.backbone.iter().enumerate() {
            h = crate::attention::decoder_block(&h, block, &backbone_cfg)?;
            check_finite(&h, &format!("backbone layer {l} (region {region})"))?;
        }
        let readout = h.slice_rows(seq_len - np, np)?.reshape(&[1, np * cfg.d_model])?;
        preds.push(readout.matmul(&b.w_out)?);
    }
    let refs: Vec<&Tensor> = preds.iter().collect();
    let yhat = Tensor::concat(&refs, 0)?;
    check_finite(&yhat, "output head")?;
    Ok((yhat, b))
}

/// Map normalized predictions back to original traffic units per region.
pub fn denormalize_predictions(batch: &ClusterBatch, yhat: &Tensor) -> Result<Vec<Vec<f64>>> {
    let r = batch.region_ids.len();
    if yhat.shape().len() != 2 || yhat.shape()[0] != r {
        return Err(TidesError::Shape {
            op: "denormalize_predictions",
            lhs: yhat.shape().to_vec(),
            rhs: vec![r, 0],
        });
    }
    let p = yhat.shape()[1];
    Ok((0..r)
        .map(|i| denormalize(&yhat.data()[i * p..(i + 1) * p], &batch.revin_states[i]))
        .collect())
}
