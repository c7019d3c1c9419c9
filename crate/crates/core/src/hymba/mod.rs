//! Hybrid-head encoder: windowed attention and a gated state-space branch run
//! in parallel on the same projected tokens, fused, then followed by a
//! feed-forward sublayer.
//!
//! Parameter names inside a block with prefix `P`:
//!
//! | name | shape |
//! |---|---|
//! | `P.norm_in`, `P.ffn_norm` | `[D]` |
//! | `P.w_in`, `P.b_in` | `[D, 3A + 2A]`, `[5A]` (hybrid) or `[D, 3A]`, `[3A]` (attention) |
//! | `P.attn_norm`, `P.ssm_norm` | `[A]` |
//! | `P.w_dt`, `P.b_dt`, `P.a_log` | `[A, H_s]`, `[H_s]`, `[H_s]` |
//! | `P.w_b`, `P.w_c`, `P.skip` | `[A, N]`, `[A, N]`, `[A]` |
//! | `P.w_out` | `[A, D]` |
//! | `P.w1`, `P.b1`, `P.w2`, `P.b2` | `[D, F]`, `[F]`, `[F, D]`, `[D]` |
//!
//! where `A = heads * head_dim` is the width of each branch.

mod attention;
mod ssm;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::params::{Bound, ParamStore};
use crate::patch::{rope_rows, PatchCoord};
use crate::tensor::Var;

pub use attention::{attention_weights, windowed_attention, AttentionSpec};
pub use ssm::{selective_scan, ssm_scan, SsmParams, MAX_DECAY};

/// Which block type a stack is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StackKind {
    /// Parallel attention + SSM heads.
    Hybrid,
    /// Plain pre-norm transformer with full attention in every layer.
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HymbaConfig {
    /// Encoder width `D`.
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Attention half-width `W` for windowed layers.
    pub window: usize,
    /// Encoder layers using full attention; `None` picks first, middle, last.
    pub full_attn_layers: Option<Vec<usize>>,
    pub ssm_state: usize,
    pub ssm_heads: usize,
    pub n_meta: usize,
    pub dec_depth: usize,
    pub dec_dim: usize,
    pub dec_full_attn_layers: Option<Vec<usize>>,
    pub decoder_kind: StackKind,
    pub causal: bool,
    /// Feed-forward expansion factor.
    pub ffn_mult: usize,
    /// Rotate queries and keys per head by their grid coordinates.
    pub qk_rope: bool,
    pub norm_eps: f64,
}

impl Default for HymbaConfig {
    fn default() -> Self {
        Self {
            dim: 48,
            depth: 4,
            heads: 4,
            head_dim: 12,
            window: 8,
            full_attn_layers: None,
            ssm_state: 16,
            ssm_heads: 4,
            n_meta: 4,
            dec_depth: 1,
            dec_dim: 48,
            dec_full_attn_layers: None,
            decoder_kind: StackKind::Hybrid,
            causal: false,
            ffn_mult: 4,
            qk_rope: true,
            norm_eps: 1e-6,
        }
    }
}

impl HymbaConfig {
    /// Two encoder layers, one decoder layer, `D = 24`, two meta tokens.
    pub fn toy() -> Self {
        Self {
            dim: 24,
            depth: 2,
            heads: 2,
            head_dim: 12,
            window: 4,
            full_attn_layers: Some(vec![0]),
            ssm_state: 8,
            ssm_heads: 2,
            n_meta: 2,
            dec_depth: 1,
            dec_dim: 24,
            dec_full_attn_layers: Some(vec![]),
            ffn_mult: 2,
            ..Self::default()
        }
    }

    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("dim", self.dim), ("dec_dim", self.dec_dim)] {
            if d == 0 || d % 6 != 0 {
                return Err(config_err(format!("{name} = {d} must be a positive multiple of 6")));
            }
        }
        if self.heads == 0 || self.head_dim == 0 {
            return Err(config_err("heads and head_dim must be positive"));
        }
        if self.qk_rope && !self.head_dim.is_multiple_of(6) {
            return Err(config_err(format!(
                "head_dim = {} must be a multiple of 6 when qk_rope is on",
                self.head_dim
            )));
        }
        if self.window == 0 {
            return Err(config_err("window must be at least 1"));
        }
        if self.ssm_state == 0 || self.ssm_heads == 0 || !self.attn_width().is_multiple_of(self.ssm_heads) {
            return Err(config_err(format!(
                "ssm_heads = {} must divide the branch width {}",
                self.ssm_heads,
                self.attn_width()
            )));
        }
        if self.ffn_mult == 0 {
            return Err(config_err("ffn_mult must be positive"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(config_err("norm_eps must be positive"));
        }
        for (name, layers, depth) in [
            ("full_attn_layers", &self.full_attn_layers, self.depth),
            ("dec_full_attn_layers", &self.dec_full_attn_layers, self.dec_depth),
        ] {
            if let Some(l) = layers {
                if let Some(bad) = l.iter().find(|&&i| i >= depth) {
                    return Err(config_err(format!("{name} entry {bad} outside [0, {depth})")));
                }
            }
        }
        Ok(())
    }

    /// Encoder stack description for the given block kind.
    pub fn encoder_stack(&self, kind: StackKind) -> StackSpec {
        StackSpec {
            kind,
            dim: self.dim,
            depth: self.depth,
            heads: match kind {
                StackKind::Hybrid => self.heads,
                StackKind::Attention => attention_heads(self.heads),
            },
            head_dim: self.head_dim,
            window: self.window,
            full_layers: full_layer_set(&self.full_attn_layers, self.depth),
            ssm_state: self.ssm_state,
            ssm_heads: self.ssm_heads,
            causal: self.causal,
            ffn_mult: self.ffn_mult,
            qk_rope: self.qk_rope,
            eps: self.norm_eps,
        }
    }

    pub fn decoder_stack(&self) -> StackSpec {
        let kind = self.decoder_kind;
        StackSpec {
            dim: self.dec_dim,
            depth: self.dec_depth,
            full_layers: full_layer_set(&self.dec_full_attn_layers, self.dec_depth),
            ..self.encoder_stack(kind)
        }
    }
}

/// Head count giving an attention-only block roughly the parameter count of
/// a hybrid block of the same width (`4 D A'` vs `6 D A`).
pub fn attention_heads(hybrid_heads: usize) -> usize {
    (hybrid_heads * 3).div_ceil(2)
}

fn full_layer_set(explicit: &Option<Vec<usize>>, depth: usize) -> BTreeSet<usize> {
    match explicit {
        Some(v) => v.iter().copied().collect(),
        None if depth == 0 => BTreeSet::new(),
        None => [0, depth / 2, depth - 1].into_iter().collect(),
    }
}

/// Everything needed to build and run one stack of blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct StackSpec {
    pub kind: StackKind,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
    pub full_layers: BTreeSet<usize>,
    pub ssm_state: usize,
    pub ssm_heads: usize,
    pub causal: bool,
    pub ffn_mult: usize,
    pub qk_rope: bool,
    pub eps: f64,
}

impl StackSpec {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn attention(&self, layer: usize, n_meta: usize) -> AttentionSpec {
        let full = self.kind == StackKind::Attention || self.full_layers.contains(&layer);
        AttentionSpec {
            heads: self.heads,
            head_dim: self.head_dim,
            n_meta,
            window: if full { None } else { Some(self.window) },
            causal: self.causal,
        }
    }

    /// Add freshly initialised parameters for layers `0..depth` under `prefix`.
    pub fn init(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        let (d, a, f) = (self.dim, self.width(), self.dim * self.ffn_mult);
        for l in 0..self.depth {
            let p = |s: &str| format!("{prefix}.L{l}.{s}");
            store.fill(p("norm_in"), &[d], 1.0)?;
            match self.kind {
                StackKind::Hybrid => {
                    store.linear(p("w_in"), d, 5 * a, rng)?;
                    store.fill(p("b_in"), &[5 * a], 0.0)?;
                    store.fill(p("attn_norm"), &[a], 1.0)?;
                    store.fill(p("ssm_norm"), &[a], 1.0)?;
                    let (h, n) = (self.ssm_heads, self.ssm_state);
                    store.linear(p("w_dt"), a, h, rng)?;
                    // Step sizes start log-uniform in [1e-3, 1e-1].
                    let b_dt: Vec<f64> = (0..h)
                        .map(|_| {
                            let dt = 10f64.powf(rng.random_range(-3.0..-1.0));
                            dt + (-(-dt).exp_m1()).ln()
                        })
                        .collect();
                    store.insert(p("b_dt"), crate::DenseTensor::new(vec![h], b_dt)?);
                    let a_log: Vec<f64> = (0..h).map(|_| rng.random_range(1.0f64..16.0).ln()).collect();
                    store.insert(p("a_log"), crate::DenseTensor::new(vec![h], a_log)?);
                    store.linear(p("w_b"), a, n, rng)?;
                    store.linear(p("w_c"), a, n, rng)?;
                    store.fill(p("skip"), &[a], 1.0)?;
                }
                StackKind::Attention => {
                    store.linear(p("w_in"), d, 3 * a, rng)?;
                    store.fill(p("b_in"), &[3 * a], 0.0)?;
                }
            }
            store.uniform(p("w_out"), &[a, d], 1.0 / ((a * self.depth.max(1)) as f64).sqrt(), rng)?;
            store.fill(p("ffn_norm"), &[d], 1.0)?;
            store.linear(p("w1"), d, f, rng)?;
            store.fill(p("b1"), &[f], 0.0)?;
            store.uniform(p("w2"), &[f, d], 1.0 / ((f * self.depth.max(1)) as f64).sqrt(), rng)?;
            store.fill(p("b2"), &[d], 0.0)?;
        }
        Ok(())
    }

    /// Apply the stack to `x: [n_meta + coords.len(), D]`.
    pub fn forward(
        &self,
        params: &Bound,
        prefix: &str,
        x: &Var,
        n_meta: usize,
        coords: &[PatchCoord],
    ) -> Result<Var> {
        let mut h = x.clone();
        for l in 0..self.depth {
            let p = format!("{prefix}.L{l}");
            let ctx = BlockCtx {
                attn: self.attention(l, n_meta),
                coords,
                qk_rope: self.qk_rope,
                eps: self.eps,
            };
            h = match self.kind {
                StackKind::Hybrid => hybrid_block(params, &p, &h, &ctx)?,
                StackKind::Attention => attention_block(params, &p, &h, &ctx)?,
            };
            h = feed_forward(params, &p, &h, self.eps)?;
        }
        Ok(h)
    }
}

/// Per-layer context shared by both block kinds.
#[derive(Clone, Debug)]
pub struct BlockCtx<'a> {
    pub attn: AttentionSpec,
    pub coords: &'a [PatchCoord],
    pub qk_rope: bool,
    pub eps: f64,
}

/// `[R; x_vis]` along the token axis; `None` stands for zero meta tokens.
pub fn prepend_meta(x_vis: &Var, meta: Option<&Var>) -> Result<Var> {
    let Some(meta) = meta else {
        return Ok(x_vis.clone());
    };
    let (xs, ms) = (x_vis.shape(), meta.shape());
    if xs.len() != 2 || ms.len() != 2 || xs[1] != ms[1] {
        return Err(Error::ShapeMismatch {
            op: "prepend_meta",
            lhs: ms.to_vec(),
            rhs: xs.to_vec(),
        });
    }
    Var::concat(&[meta, x_vis], 0)
}

/// Outputs of the fused input projection.
#[derive(Clone, Debug)]
pub struct Projection {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub x_ssm: Var,
    pub gate: Var,
}

/// One affine map `x w + b`, split along features into `q, k, v, x_ssm, gate`.
pub fn split_projection(x: &Var, w: &Var, b: &Var, attn_width: usize, ssm_width: usize) -> Result<Projection> {
    let want = 3 * attn_width + 2 * ssm_width;
    let ws = w.shape();
    if ws.len() != 2 || ws[1] != want || b.shape() != [want] {
        return Err(Error::ShapeMismatch {
            op: "split_projection",
            lhs: ws.to_vec(),
            rhs: vec![x.shape().last().copied().unwrap_or(0), want],
        });
    }
    let proj = x.matmul(w)?.add(b)?;
    let mut parts = proj
        .split(1, &[attn_width, attn_width, attn_width, ssm_width, ssm_width])?
        .into_iter();
    let mut next = || parts.next().expect("five parts");
    Ok(Projection {
        q: next(),
        k: next(),
        v: next(),
        x_ssm: next(),
        gate: next(),
    })
}

/// `x + (rms(y_attn) + rms(sigmoid(g) * y_ssm)) w_out`.
#[allow(clippy::too_many_arguments)]
pub fn gated_fuse(
    y_attn: &Var,
    y_ssm: &Var,
    gate: &Var,
    attn_norm: &Var,
    ssm_norm: &Var,
    w_out: &Var,
    residual: &Var,
    eps: f64,
) -> Result<Var> {
    if y_attn.shape() != y_ssm.shape() || gate.shape() != y_ssm.shape() {
        return Err(Error::ShapeMismatch {
            op: "gated_fuse",
            lhs: y_attn.shape().to_vec(),
            rhs: y_ssm.shape().to_vec(),
        });
    }
    let gated = gate.sigmoid().mul(y_ssm)?;
    let fused = y_attn.rms_norm(attn_norm, eps)?.add(&gated.rms_norm(ssm_norm, eps)?)?;
    residual.add(&fused.matmul(w_out)?)
}

fn rotate_qk(q: Var, k: Var, ctx: &BlockCtx) -> Result<(Var, Var)> {
    if !ctx.qk_rope {
        return Ok((q, k));
    }
    let (m, d) = (ctx.attn.n_meta, ctx.attn.head_dim);
    Ok((
        rope_rows(&q, ctx.coords, m, d)?,
        rope_rows(&k, ctx.coords, m, d)?,
    ))
}

/// Parallel attention + SSM block with residual.
pub fn hybrid_block(params: &Bound, p: &str, x: &Var, ctx: &BlockCtx) -> Result<Var> {
    let g = |s: &str| params.get(&format!("{p}.{s}"));
    let a = ctx.attn.width();
    let u = x.rms_norm(g("norm_in")?, ctx.eps)?;
    let proj = split_projection(&u, g("w_in")?, g("b_in")?, a, a)?;
    let (q, k) = rotate_qk(proj.q, proj.k, ctx)?;
    let y_attn = windowed_attention(&q, &k, &proj.v, ctx.attn)?;
    let ssm = SsmParams {
        w_dt: g("w_dt")?.clone(),
        b_dt: g("b_dt")?.clone(),
        a_log: g("a_log")?.clone(),
        w_b: g("w_b")?.clone(),
        w_c: g("w_c")?.clone(),
        skip: g("skip")?.clone(),
    };
    let y_ssm = ssm_scan(&proj.x_ssm.silu(), &ssm)?;
    gated_fuse(
        &y_attn,
        &y_ssm,
        &proj.gate,
        g("attn_norm")?,
        g("ssm_norm")?,
        g("w_out")?,
        x,
        ctx.eps,
    )
}

/// Pre-norm multi-head attention block with residual.
pub fn attention_block(params: &Bound, p: &str, x: &Var, ctx: &BlockCtx) -> Result<Var> {
    let g = |s: &str| params.get(&format!("{p}.{s}"));
    let a = ctx.attn.width();
    let u = x.rms_norm(g("norm_in")?, ctx.eps)?;
    let proj = u.matmul(g("w_in")?)?.add(g("b_in")?)?;
    let mut qkv = proj.split(1, &[a, a, a])?.into_iter();
    let (q, k, v) = (qkv.next().unwrap(), qkv.next().unwrap(), qkv.next().unwrap());
    let (q, k) = rotate_qk(q, k, ctx)?;
    let y = windowed_attention(&q, &k, &v, ctx.attn)?;
    x.add(&y.matmul(g("w_out")?)?)
}

/// `x + silu(rms(x) w1 + b1) w2 + b2`.
pub fn feed_forward(params: &Bound, p: &str, x: &Var, eps: f64) -> Result<Var> {
    let g = |s: &str| params.get(&format!("{p}.{s}"));
    let h = x
        .rms_norm(g("ffn_norm")?, eps)?
        .matmul(g("w1")?)?
        .add(g("b1")?)?
        .silu();
    x.add(&h.matmul(g("w2")?)?.add(g("b2")?)?)
}

#[cfg(test)]
mod tests;
