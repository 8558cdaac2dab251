//! Multi-head scaled dot-product cross-attention.
//!
//! Queries come from one token stream, keys and values from another. Per
//! head: softmax(Q K^T / sqrt(head_dim)) V; heads are concatenated, output
//! projected, added residually to the query stream and layer-normalized.

use super::{layer_norm, layer_norm_shapes, Session, ShapeMap};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
}

impl AttentionConfig {
    /// Rejected unless `model_dim` is divisible by `heads`.
    pub fn new(model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || model_dim == 0 || model_dim % heads != 0 {
            return Err(Error::arg(
                "attention",
                format!("model_dim {model_dim} not divisible by heads {heads}"),
            ));
        }
        Ok(AttentionConfig { model_dim, heads })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// [B, T, d] -> [B*heads, T, head_dim]
fn split_heads<T: Element>(
    s: &mut Session<T>,
    x: Var,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let shape = s.tape.value(x).shape().to_vec();
    let (b, t) = (shape[0], shape[1]);
    let hd = cfg.head_dim();
    let split = s.tape.reshape(x, &[b, t, cfg.heads, hd])?;
    let perm = s.tape.permute(split, &[0, 2, 1, 3])?;
    s.tape.reshape(perm, &[b * cfg.heads, t, hd])
}

/// [B*heads, T, head_dim] -> [B, T, d]
fn merge_heads<T: Element>(
    s: &mut Session<T>,
    x: Var,
    batch: usize,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let t = s.tape.value(x).shape()[1];
    let hd = cfg.head_dim();
    let unsplit = s.tape.reshape(x, &[batch, cfg.heads, t, hd])?;
    let perm = s.tape.permute(unsplit, &[0, 2, 1, 3])?;
    s.tape.reshape(perm, &[batch, t, cfg.model_dim])
}

fn projected_heads<T: Element>(
    s: &mut Session<T>,
    tokens: Var,
    weight_path: &str,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let w = s.param(weight_path)?;
    let proj = s.tape.matmul(tokens, w)?;
    split_heads(s, proj, cfg)
}

/// Pre-softmax attention logits [B*heads, Tq, Tkv], scaled by
/// 1/sqrt(head_dim). Exposed for diagnostics and scaling-law tests.
pub fn cross_attention_logits<T: Element>(
    s: &mut Session<T>,
    q_tokens: Var,
    kv_tokens: Var,
    cfg: &AttentionConfig,
    path: &str,
) -> Result<Var> {
    let q = projected_heads(s, q_tokens, &format!("{path}.wq"), cfg)?;
    let k = projected_heads(s, kv_tokens, &format!("{path}.wk"), cfg)?;
    let kt = s.tape.permute(k, &[0, 2, 1])?;
    let raw = s.tape.matmul(q, kt)?;
    s.tape
        .mul_scalar(raw, T::from_f64(1.0 / (cfg.head_dim() as f64).sqrt()))
}

/// Full cross-attention block with residual add and layer norm.
pub fn cross_attention<T: Element>(
    s: &mut Session<T>,
    q_tokens: Var,
    kv_tokens: Var,
    cfg: &AttentionConfig,
    path: &str,
) -> Result<Var> {
    let q_shape = s.tape.value(q_tokens).shape().to_vec();
    let kv_shape = s.tape.value(kv_tokens).shape().to_vec();
    if q_shape.len() != 3 || kv_shape.len() != 3 || q_shape[2] != cfg.model_dim
        || kv_shape[2] != cfg.model_dim || q_shape[0] != kv_shape[0]
    {
        return Err(Error::ShapeMismatch { op: "cross_attention", lhs: q_shape, rhs: kv_shape });
    }
    let batch = q_shape[0];

    let logits = cross_attention_logits(s, q_tokens, kv_tokens, cfg, path)?;
    let weights = s.tape.softmax(logits, 2)?;
    let v = projected_heads(s, kv_tokens, &format!("{path}.wv"), cfg)?;
    let ctx = s.tape.matmul(weights, v)?;
    let merged = merge_heads(s, ctx, batch, cfg)?;
    let wo = s.param(&format!("{path}.wo"))?;
    let out = s.tape.matmul(merged, wo)?;
    let res = s.tape.add(q_tokens, out)?;
    layer_norm(s, res, &format!("{path}.ln"))
}

pub fn cross_attention_shapes(path: &str, cfg: &AttentionConfig, out: &mut ShapeMap) {
    let d = cfg.model_dim;
    out.insert(format!("{path}.wq"), vec![d, d]);
    out.insert(format!("{path}.wk"), vec![d, d]);
    out.insert(format!("{path}.wv"), vec![d, d]);
    out.insert(format!("{path}.wo"), vec![d, d]);
    layer_norm_shapes(&format!("{path}.ln"), d, out);
}

/// Attention output before the residual/norm epilogue; used by tests to
/// verify the single-key collapse against a direct computation.
pub fn attention_context<T: Element>(
    s: &mut Session<T>,
    q_tokens: Var,
    kv_tokens: Var,
    cfg: &AttentionConfig,
    path: &str,
) -> Result<Var> {
    let batch = s.tape.value(q_tokens).shape()[0];
    let logits = cross_attention_logits(s, q_tokens, kv_tokens, cfg, path)?;
    let weights = s.tape.softmax(logits, 2)?;
    let v = projected_heads(s, kv_tokens, &format!("{path}.wv"), cfg)?;
    let ctx = s.tape.matmul(weights, v)?;
    let merged = merge_heads(s, ctx, batch, cfg)?;
    let wo = s.param(&format!("{path}.wo"))?;
    s.tape.matmul(merged, wo)
}
