//! Building blocks of the encoder, written against a [`Graph`].
//!
//! Sequences are stored as `[batch·T, d]` row blocks: sample `b` owns rows
//! `b·T .. (b+1)·T`.

use super::{AttentionKind, BoundParams, ModelConfig, ModelError};
use crate::tensor::{Graph, Rng64, Var};

/// Handles of one encoder layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub wu: Var,
    pub bu: Var,
    pub wg: Var,
    pub bg: Var,
    pub wdown: Var,
    pub bdown: Var,
}

impl LayerVars {
    pub fn bind(params: &BoundParams, layer: usize) -> Self {
        let v = |s: &str| params.var(&format!("layer{layer}.{s}"));
        Self {
            ln1_gamma: v("ln1.gamma"),
            ln1_beta: v("ln1.beta"),
            wq: v("attn.wq"),
            bq: v("attn.bq"),
            wk: v("attn.wk"),
            bk: v("attn.bk"),
            wv: v("attn.wv"),
            bv: v("attn.bv"),
            wo: v("attn.wo"),
            bo: v("attn.bo"),
            ln2_gamma: v("ln2.gamma"),
            ln2_beta: v("ln2.beta"),
            wu: v("ffn.wu"),
            bu: v("ffn.bu"),
            wg: v("ffn.wg"),
            bg: v("ffn.bg"),
            wdown: v("ffn.wdown"),
            bdown: v("ffn.bdown"),
        }
    }
}

/// `x·W + b`
pub fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let h = g.matmul(x, w)?;
    Ok(g.add_bias(h, b)?)
}

/// Unfolds each patch into `(P/p)²` sub-blocks and projects them with a
/// shared affine map, i.e. a 3-D convolution whose stride equals its kernel.
///
/// `patches` is `[batch, P, P, C]`; the result is `[batch·N, d_embed]`.
pub fn tokenize(g: &mut Graph, patches: Var, w_tok: Var, b_tok: Var, block: usize) -> Result<Var, ModelError> {
    let rows = g.unfold_patches_3d(patches, block)?;
    affine(g, rows, w_tok, b_tok)
}

/// Appends the class token as the last row of each sample.
pub fn append_class_token(g: &mut Graph, tokens: Var, cls: Var, batch: usize) -> Result<Var, ModelError> {
    Ok(g.append_token(tokens, cls, batch)?)
}

/// Intermediate handles of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTrace {
    /// `[batch·heads, T, T]`, `QKᵀ/√d_head`.
    pub scores: Var,
    /// Scores after differencing (equal to `scores` for plain attention).
    pub logits: Var,
    /// Row-stochastic attention weights before dropout.
    pub weights: Var,
    /// `[batch·T, d_embed]` after the output projection.
    pub output: Var,
}

/// Scaled dot-product attention over per-head `[G, T, d_head]` tensors.
///
/// Differential attention replaces each score row `s` with
/// `[s₀, s₁−s₀, …, s_{T−1}−s_{T−2}]` before the softmax.
pub fn attention_core(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    kind: AttentionKind,
    dropout: f64,
    rng: Option<&mut Rng64>,
) -> Result<(Var, Var, Var, Var), ModelError> {
    let shape = g.shape(q).to_vec();
    let (t, dh) = (shape[1], shape[2]);
    if t < 2 {
        return Err(ModelError::TooFewTokens(t));
    }
    let raw = g.batch_matmul(q, k, true)?;
    let scores = g.scale(raw, 1.0 / (dh as f64).sqrt())?;
    let logits = match kind {
        AttentionKind::Dmhsa => g.diff_cols(scores)?,
        AttentionKind::Mhsa => scores,
    };
    let weights = g.softmax_rows(logits)?;
    let dropped = g.dropout(weights, dropout, rng)?;
    let z = g.batch_matmul(dropped, v, false)?;
    Ok((scores, logits, weights, z))
}

/// Multi-head self-attention on `x[batch·T, d]`; heads are concatenated
/// and mixed by `W_O`.
pub fn self_attention(
    g: &mut Graph,
    x: Var,
    layer: &LayerVars,
    cfg: &ModelConfig,
    batch: usize,
    rng: Option<&mut Rng64>,
) -> Result<AttentionTrace, ModelError> {
    let rows = g.shape(x)[0];
    if batch == 0 || !rows.is_multiple_of(batch) {
        return Err(ModelError::Config(format!(
            "{rows} rows do not split into {batch} samples"
        )));
    }
    if rows / batch < 2 {
        return Err(ModelError::TooFewTokens(rows / batch));
    }
    let h = cfg.n_heads;
    let q = affine(g, x, layer.wq, layer.bq)?;
    let k = affine(g, x, layer.wk, layer.bk)?;
    let v = affine(g, x, layer.wv, layer.bv)?;
    let q = g.split_heads(q, batch, h)?;
    let k = g.split_heads(k, batch, h)?;
    let v = g.split_heads(v, batch, h)?;
    let (scores, logits, weights, z) = attention_core(g, q, k, v, cfg.attention, cfg.dropout_rate, rng)?;
    let merged = g.merge_heads(z, batch, h)?;
    let output = affine(g, merged, layer.wo, layer.bo)?;
    Ok(AttentionTrace {
        scores,
        logits,
        weights,
        output,
    })
}

/// `s = u ⊙ σ(g) + u` with `u = xW_u + b_u`, `g = xW_g + b_g`, then the
/// down projection.
pub fn swiglu_ffn(g: &mut Graph, x: Var, layer: &LayerVars) -> Result<Var, ModelError> {
    let (s, _) = swiglu_hidden(g, x, layer)?;
    affine(g, s, layer.wdown, layer.bdown)
}

/// The gated hidden activation `s` and the linear branch `u`.
pub fn swiglu_hidden(g: &mut Graph, x: Var, layer: &LayerVars) -> Result<(Var, Var), ModelError> {
    let u = affine(g, x, layer.wu, layer.bu)?;
    let gate = affine(g, x, layer.wg, layer.bg)?;
    let sig = g.sigmoid(gate)?;
    let gated = g.mul(u, sig)?;
    let s = g.add(gated, u)?;
    Ok((s, u))
}

/// Pre-norm block: `x₁ = x + Attn(LN₁ x)`, `x₂ = x₁ + FFN(LN₂ x₁)`, with
/// dropout on each sublayer output in training.
pub fn encoder_block(
    g: &mut Graph,
    x: Var,
    layer: &LayerVars,
    cfg: &ModelConfig,
    batch: usize,
    mut rng: Option<&mut Rng64>,
) -> Result<(Var, AttentionTrace), ModelError> {
    let n1 = g.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, cfg.ln_eps)?;
    let trace = self_attention(g, n1, layer, cfg, batch, rng.as_deref_mut())?;
    let a = g.dropout(trace.output, cfg.dropout_rate, rng.as_deref_mut())?;
    let x1 = g.add(x, a)?;
    let n2 = g.layer_norm(x1, layer.ln2_gamma, layer.ln2_beta, cfg.ln_eps)?;
    let f = swiglu_ffn(g, n2, layer)?;
    let f = g.dropout(f, cfg.dropout_rate, rng)?;
    let x2 = g.add(x1, f)?;
    Ok((x2, trace))
}
