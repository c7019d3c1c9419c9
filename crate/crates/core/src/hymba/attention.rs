//! Multi-head attention over a meta-prefixed sequence with an optional band.
//!
//! Query `i` sees key `j` when any of the following holds: `i` is a meta
//! token, `j` is a meta token, or both are sequence tokens with
//! `|i - j| <= W` (and `j <= i` in causal mode). Only the visible keys are
//! ever touched, so a windowed pass costs `O(T * (n_meta + W))` per head.

use std::ops::Range;

use crate::error::{config_err, Error, Result};
use crate::tensor::{dot, grad_enabled, DenseTensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionSpec {
    pub heads: usize,
    pub head_dim: usize,
    pub n_meta: usize,
    /// `None` for full attention.
    pub window: Option<usize>,
    pub causal: bool,
}

impl AttentionSpec {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Key ranges visible to query `i` in a length-`t` sequence.
    pub fn key_ranges(&self, i: usize, t: usize) -> [Range<usize>; 2] {
        let m = self.n_meta.min(t);
        if i < m {
            return [0..t, 0..0];
        }
        let mut hi = match self.window {
            Some(w) => (i + w + 1).min(t),
            None => t,
        };
        if self.causal {
            hi = hi.min(i + 1);
        }
        let lo = match self.window {
            Some(w) => i.saturating_sub(w).max(m),
            None => m,
        };
        [0..m, lo..hi]
    }

    fn check(&self, q: &[usize], k: &[usize], v: &[usize]) -> Result<()> {
        if self.window == Some(0) {
            return Err(config_err("attention window must be at least 1"));
        }
        let w = self.width();
        for s in [k, v] {
            if s != q {
                return Err(Error::ShapeMismatch {
                    op: "attention",
                    lhs: q.to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        if q.len() != 2 || q[1] != w {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: q.to_vec(),
                rhs: vec![q.first().copied().unwrap_or(0), w],
            });
        }
        Ok(())
    }
}

fn keys(spec: &AttentionSpec, i: usize, t: usize) -> impl Iterator<Item = usize> {
    let [a, b] = spec.key_ranges(i, t);
    a.chain(b)
}

/// Scaled dot-product attention; `q`, `k`, `v` are `[T, heads * head_dim]`.
pub fn windowed_attention(q: &Var, k: &Var, v: &Var, spec: AttentionSpec) -> Result<Var> {
    spec.check(q.shape(), k.shape(), v.shape())?;
    let t = q.shape()[0];
    let (a, dk) = (spec.width(), spec.head_dim);
    let scale = 1.0 / (dk as f64).sqrt();
    let keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());

    let (qd, kd, vd) = (q.value().data(), k.value().data(), v.value().data());
    let mut out = vec![0.0; t * a];
    let mut probs: Vec<f64> = Vec::new();
    let mut scores = Vec::new();
    for h in 0..spec.heads {
        let col = h * dk;
        for i in 0..t {
            let qi = &qd[i * a + col..i * a + col + dk];
            scores.clear();
            scores.extend(keys(&spec, i, t).map(|j| dot(qi, &kd[j * a + col..j * a + col + dk]) * scale));
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::NonFinite { op: "attention" });
            }
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let oi = &mut out[i * a + col..i * a + col + dk];
            for (j, s) in keys(&spec, i, t).zip(scores.iter_mut()) {
                *s /= z;
                let vj = &vd[j * a + col..j * a + col + dk];
                for (o, x) in oi.iter_mut().zip(vj) {
                    *o += *s * x;
                }
            }
            if keep {
                probs.extend_from_slice(&scores);
            }
        }
    }

    let value = DenseTensor::new(vec![t, a], out)?;
    Ok(Var::from_op(
        value,
        &[q, k, v],
        Box::new(move |g, _, inputs| {
            let (qd, kd, vd) = (
                inputs[0].value().data(),
                inputs[1].value().data(),
                inputs[2].value().data(),
            );
            let gd = g.data();
            let mut gq = vec![0.0; t * a];
            let mut gk = vec![0.0; t * a];
            let mut gv = vec![0.0; t * a];
            let mut gs = Vec::new();
            let mut off = 0;
            for h in 0..spec.heads {
                let col = h * dk;
                for i in 0..t {
                    let n = keys(&spec, i, t).count();
                    let p = &probs[off..off + n];
                    off += n;
                    let gi = &gd[i * a + col..i * a + col + dk];
                    gs.clear();
                    let mut inner = 0.0;
                    for (j, &pj) in keys(&spec, i, t).zip(p) {
                        let gp = dot(gi, &vd[j * a + col..j * a + col + dk]);
                        inner += pj * gp;
                        gs.push(gp);
                        let gvj = &mut gv[j * a + col..j * a + col + dk];
                        for (x, y) in gvj.iter_mut().zip(gi) {
                            *x += pj * y;
                        }
                    }
                    let qi = &qd[i * a + col..i * a + col + dk];
                    for ((j, &pj), &gp) in keys(&spec, i, t).zip(p).zip(&gs) {
                        let ds = pj * (gp - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kd[j * a + col..j * a + col + dk];
                        for (x, y) in gq[i * a + col..i * a + col + dk].iter_mut().zip(kj) {
                            *x += ds * y;
                        }
                        for (x, y) in gk[j * a + col..j * a + col + dk].iter_mut().zip(qi) {
                            *x += ds * y;
                        }
                    }
                }
            }
            let mk = |d| Some(DenseTensor::from_parts_unchecked(vec![t, a], d));
            vec![mk(gq), mk(gk), mk(gv)]
        }),
    ))
}

/// Dense `[T, T]` attention matrix of each head; zero where a key is hidden.
pub fn attention_weights(q: &DenseTensor, k: &DenseTensor, spec: AttentionSpec) -> Result<Vec<DenseTensor>> {
    spec.check(q.shape(), k.shape(), k.shape())?;
    let t = q.shape()[0];
    let (a, dk) = (spec.width(), spec.head_dim);
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd) = (q.data(), k.data());
    let mut out = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let col = h * dk;
        let mut w = vec![0.0; t * t];
        for i in 0..t {
            let qi = &qd[i * a + col..i * a + col + dk];
            let idx: Vec<usize> = keys(&spec, i, t).collect();
            let s: Vec<f64> = idx
                .iter()
                .map(|&j| dot(qi, &kd[j * a + col..j * a + col + dk]) * scale)
                .collect();
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for (&j, ej) in idx.iter().zip(e) {
                w[i * t + j] = ej / z;
            }
        }
        out.push(DenseTensor::new(vec![t, t], w)?);
    }
    Ok(out)
}
