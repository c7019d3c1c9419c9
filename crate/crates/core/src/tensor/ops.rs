//! Differentiable operations on [`Var`].
//!
//! Elementwise binary ops follow numpy broadcasting. Axis-wise ops view the
//! operand as `(outer, axis, inner)` in row-major order.

use super::dense::{strides_of, validate_shape};
use super::scan::associative_scan;
use super::{DenseTensor, Var};
use crate::error::{Error, Result};

fn dense(shape: Vec<usize>, data: Vec<f64>) -> DenseTensor {
    DenseTensor::from_parts_unchecked(shape, data)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How an operand of shape `input` maps onto a broadcast `output` shape.
enum Bcast {
    Same,
    /// `input` equals the trailing axes of `output`.
    Suffix(usize),
    General(Vec<usize>),
}

impl Bcast {
    fn new(output: &[usize], input: &[usize]) -> Self {
        if output == input {
            return Bcast::Same;
        }
        let numel_in: usize = input.iter().product();
        if input.len() <= output.len() && output[output.len() - input.len()..] == *input {
            return Bcast::Suffix(numel_in);
        }
        let rank = output.len();
        let in_strides = strides_of(input);
        let mut eff = vec![0usize; rank];
        for (k, &d) in input.iter().enumerate() {
            let axis = rank - input.len() + k;
            eff[axis] = if d == 1 { 0 } else { in_strides[k] };
        }
        let numel_out: usize = output.iter().product();
        let mut map = Vec::with_capacity(numel_out);
        let mut counter = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..numel_out {
            map.push(offset);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                offset += eff[axis];
                if counter[axis] < output[axis] {
                    break;
                }
                offset -= eff[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
        Bcast::General(map)
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(n) => i % n,
            Bcast::General(map) => map[i],
        }
    }
}

/// Sum a broadcast gradient back down to `shape`.
fn reduce_to(grad: &DenseTensor, shape: &[usize]) -> DenseTensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let map = Bcast::new(grad.shape(), shape);
    let mut out = vec![0.0; shape.iter().product()];
    for (i, g) in grad.data().iter().enumerate() {
        out[map.index(i)] += g;
    }
    dense(shape.to_vec(), out)
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Var {
    fn binary(&self, other: &Var, op: BinOp, name: &'static str) -> Result<Var> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let ma = Bcast::new(&shape, a.shape());
        let mb = Bcast::new(&shape, b.shape());
        let n: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (ad[ma.index(i)], bd[mb.index(i)]);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                }
            })
            .collect();
        Ok(Var::from_op(
            dense(shape, data),
            &[self, other],
            Box::new(move |g, _out, inputs| {
                let (a, b) = (inputs[0].value(), inputs[1].value());
                let gshape = g.shape();
                let ma = Bcast::new(gshape, a.shape());
                let mb = Bcast::new(gshape, b.shape());
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    BinOp::Add => (g.data().to_vec(), g.data().to_vec()),
                    BinOp::Sub => (g.data().to_vec(), g.data().iter().map(|x| -x).collect()),
                    BinOp::Mul => g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| {
                            (gi * b.data()[mb.index(i)], gi * a.data()[ma.index(i)])
                        })
                        .unzip(),
                    BinOp::Div => g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| {
                            let x = a.data()[ma.index(i)];
                            let y = b.data()[mb.index(i)];
                            (gi / y, -gi * x / (y * y))
                        })
                        .unzip(),
                };
                let ga = dense(gshape.to_vec(), ga);
                let gb = dense(gshape.to_vec(), gb);
                vec![
                    Some(reduce_to(&ga, a.shape())),
                    Some(reduce_to(&gb, b.shape())),
                ]
            }),
        ))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Add, "add")
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Sub, "sub")
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Mul, "mul")
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Div, "div")
    }

    /// Elementwise map with derivative `df(x, f(x))`.
    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value().map(f);
        Var::from_op(
            out,
            &[self],
            Box::new(move |g, out, inputs| {
                let x = inputs[0].value();
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(out.data())
                    .map(|((&gi, &xi), &yi)| gi * df(xi, yi))
                    .collect();
                vec![Some(dense(x.shape().to_vec(), data))]
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Var {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn sqrt(&self) -> Var {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x * sigmoid(x)`
    pub fn silu(&self) -> Var {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Var {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Var {
        let out = DenseTensor::scalar(self.value().sum());
        Var::from_op(
            out,
            &[self],
            Box::new(|g, _, inputs| {
                let x = inputs[0].value();
                vec![Some(dense(x.shape().to_vec(), vec![g.data()[0]; x.len()]))]
            }),
        )
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        let x = self.value().data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x[base + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(Var::from_op(
            dense(out_shape, out),
            &[self],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        gx[base..base + inner]
                            .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(dense(shape.clone(), gx))]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var> {
        let n = *self.shape().get(axis).ok_or(Error::AxisOutOfRange {
            axis,
            rank: self.shape().len(),
        })? as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let out = self.value().reshape(shape)?;
        let original = self.shape().to_vec();
        Ok(Var::from_op(
            out,
            &[self],
            Box::new(move |g, _, _| vec![Some(dense(original.clone(), g.data().to_vec()))]),
        ))
    }

    /// Swap two axes.
    pub fn transpose(&self, a1: usize, a2: usize) -> Result<Var> {
        let rank = self.shape().len();
        for a in [a1, a2] {
            if a >= rank {
                return Err(Error::AxisOutOfRange { axis: a, rank });
            }
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a1, a2);
        let out = permute_dense(self.value(), &perm);
        Ok(Var::from_op(
            out,
            &[self],
            Box::new(move |g, _, _| vec![Some(permute_dense(g, &perm))]),
        ))
    }

    /// Swap the last two axes.
    pub fn t(&self) -> Result<Var> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(Error::AxisOutOfRange { axis: 1, rank });
        }
        self.transpose(rank - 2, rank - 1)
    }

    /// Contiguous range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        if start >= end || end > n {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("slice {start}..{end} on axis {axis}"),
            });
        }
        let m = end - start;
        let x = self.value().data();
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = m;
        Ok(Var::from_op(
            dense(out_shape, out),
            &[self],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    gx[(o * n + start) * inner..(o * n + end) * inner]
                        .copy_from_slice(&g.data()[o * m * inner..(o + 1) * m * inner]);
                }
                vec![Some(dense(shape.clone(), gx))]
            }),
        ))
    }

    /// Split along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let n = *self.shape().get(axis).ok_or(Error::AxisOutOfRange {
            axis,
            rank: self.shape().len(),
        })?;
        if total != n {
            return Err(Error::ShapeMismatch {
                op: "split",
                lhs: self.shape().to_vec(),
                rhs: sizes.to_vec(),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let piece = self.slice(axis, start, start + s);
                start += s;
                piece
            })
            .collect()
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?;
        let base = first.shape().to_vec();
        split_axis(&base, axis)?;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.value().data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        Ok(Var::from_op(
            dense(out_shape, out),
            parts,
            Box::new(move |g, _, inputs| {
                let mut grads: Vec<Vec<f64>> = lens
                    .iter()
                    .map(|&len| Vec::with_capacity(outer * len * inner))
                    .collect();
                let gd = g.data();
                let mut pos = 0;
                for _ in 0..outer {
                    for (buf, &len) in grads.iter_mut().zip(&lens) {
                        buf.extend_from_slice(&gd[pos..pos + len * inner]);
                        pos += len * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(inputs)
                    .map(|(buf, v)| Some(dense(v.shape().to_vec(), buf)))
                    .collect()
            }),
        ))
    }

    /// Gather sub-tensors along axis 0 (indices may repeat).
    pub fn index_select(&self, indices: &[usize]) -> Result<Var> {
        let shape = self.shape().to_vec();
        let (_, n, row) = split_axis(&shape, 0)?;
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("index_select with indices {indices:?}"),
            });
        }
        let x = self.value().data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&x[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = indices.len();
        let indices = indices.to_vec();
        Ok(Var::from_op(
            dense(out_shape, out),
            &[self],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; n * row];
                for (k, &i) in indices.iter().enumerate() {
                    for (a, b) in gx[i * row..(i + 1) * row]
                        .iter_mut()
                        .zip(&g.data()[k * row..(k + 1) * row])
                    {
                        *a += b;
                    }
                }
                vec![Some(dense(shape.clone(), gx))]
            }),
        ))
    }

    /// Max-stabilised softmax along `axis`. Entries equal to `-inf` get zero
    /// weight; NaN, `+inf`, or a slice that is entirely `-inf` is an error.
    pub fn softmax(&self, axis: usize) -> Result<Var> {
        if self.value().data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        let x = self.value().data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return Err(Error::NonFinite { op: "softmax" });
                }
                let mut z = 0.0;
                for k in 0..n {
                    let e = (x[at(k)] - m).exp();
                    y[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    y[at(k)] /= z;
                }
            }
        }
        Ok(Var::from_op(
            dense(shape.clone(), y),
            &[self],
            Box::new(move |g, out, _| {
                let (gd, yd) = (g.data(), out.data());
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| gd[at(k)] * yd[at(k)]).sum();
                        for k in 0..n {
                            gx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                vec![Some(dense(shape.clone(), gx))]
            }),
        ))
    }

    /// RMS normalisation over the last axis with a per-feature `scale`.
    pub fn rms_norm(&self, scale: &Var, eps: f64) -> Result<Var> {
        let shape = self.shape().to_vec();
        let d = *shape.last().ok_or(Error::AxisOutOfRange { axis: 0, rank: 0 })?;
        if scale.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "rms_norm",
                lhs: shape,
                rhs: scale.shape().to_vec(),
            });
        }
        let rows = self.value().len() / d;
        let x = self.value().data();
        let s = scale.value().data();
        let mut inv = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let iv = 1.0 / (ms + eps).sqrt();
            inv[r] = iv;
            for j in 0..d {
                out[r * d + j] = xr[j] * iv * s[j];
            }
        }
        Ok(Var::from_op(
            dense(shape.clone(), out),
            &[self, scale],
            Box::new(move |g, _, inputs| {
                let x = inputs[0].value().data();
                let s = inputs[1].value().data();
                let gd = g.data();
                let mut gx = vec![0.0; x.len()];
                let mut gs = vec![0.0; d];
                for r in 0..rows {
                    let iv = inv[r];
                    let xr = &x[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let mut dot = 0.0;
                    for j in 0..d {
                        gs[j] += gr[j] * xr[j] * iv;
                        dot += gr[j] * s[j] * xr[j];
                    }
                    let c = iv * iv * iv * dot / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = gr[j] * s[j] * iv - xr[j] * c;
                    }
                }
                vec![
                    Some(dense(shape.clone(), gx)),
                    Some(dense(vec![d], gs)),
                ]
            }),
        ))
    }

    /// Batched matrix product `[..., m, k] x [..., k, n]` with broadcast batch axes.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let plan = MatmulPlan::new(self.shape(), other.shape())?;
        let out = plan.forward(self.value().data(), other.value().data());
        Ok(Var::from_op(
            dense(plan.out_shape.clone(), out),
            &[self, other],
            Box::new(move |g, _, inputs| {
                let (ga, gb) = plan.backward(
                    g.data(),
                    inputs[0].value().data(),
                    inputs[1].value().data(),
                    inputs[0].requires_grad(),
                    inputs[1].requires_grad(),
                );
                vec![
                    ga.map(|d| dense(inputs[0].shape().to_vec(), d)),
                    gb.map(|d| dense(inputs[1].shape().to_vec(), d)),
                ]
            }),
        ))
    }

    /// Inclusive prefix sum along `axis`, evaluated as an associative scan.
    pub fn cumsum(&self, axis: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        let (outer, n, inner) = split_axis(&shape, axis)?;
        let x = self.value().data();
        let scan_lines = move |src: &[f64], reverse: bool| {
            let mut out = vec![0.0; src.len()];
            let mut line = Vec::with_capacity(n);
            for o in 0..outer {
                for i in 0..inner {
                    line.clear();
                    line.extend((0..n).map(|k| {
                        let k = if reverse { n - 1 - k } else { k };
                        src[(o * n + k) * inner + i]
                    }));
                    associative_scan(&mut line, |a, b| a + b);
                    for (k, v) in line.iter().enumerate() {
                        let k = if reverse { n - 1 - k } else { k };
                        out[(o * n + k) * inner + i] = *v;
                    }
                }
            }
            out
        };
        let out = scan_lines(x, false);
        Ok(Var::from_op(
            dense(shape.clone(), out),
            &[self],
            Box::new(move |g, _, _| vec![Some(dense(shape.clone(), scan_lines(g.data(), true)))]),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn permute_dense(t: &DenseTensor, perm: &[usize]) -> DenseTensor {
    let shape = t.shape();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(t.len());
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    let src = t.data();
    for _ in 0..t.len() {
        out.push(src[offset]);
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            offset += eff[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            offset -= eff[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    dense(out_shape, out)
}

/// Precomputed batch-offset bookkeeping for a broadcasting matmul.
struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    b_len: usize,
    /// (a batch index, b batch index) for every output batch.
    batches: Vec<(usize, usize)>,
    out_shape: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let batch = broadcast_shape(ab, bb).ok_or_else(mismatch)?;
        let nb: usize = batch.iter().product();
        let ma = Bcast::new(&batch, ab);
        let mb = Bcast::new(&batch, bb);
        let batches = if batch.is_empty() {
            vec![(0, 0)]
        } else {
            (0..nb).map(|i| (ma.index(i), mb.index(i))).collect()
        };
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        validate_shape(&out_shape)?;
        Ok(Self {
            m,
            k,
            n,
            a_len: a.iter().product(),
            b_len: b.iter().product(),
            batches,
            out_shape,
        })
    }

    fn forward(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut out = vec![0.0; self.batches.len() * m * n];
        for (bi, &(ia, ib)) in self.batches.iter().enumerate() {
            let a = &a[ia * m * k..(ia + 1) * m * k];
            let b = &b[ib * k * n..(ib + 1) * k * n];
            let c = &mut out[bi * m * n..(bi + 1) * m * n];
            gemm_acc(a, b, c, m, k, n);
        }
        out
    }

    fn backward(
        &self,
        g: &[f64],
        a: &[f64],
        b: &[f64],
        want_a: bool,
        want_b: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut ga = want_a.then(|| vec![0.0; self.a_len]);
        let mut gb = want_b.then(|| vec![0.0; self.b_len]);
        for (bi, &(ia, ib)) in self.batches.iter().enumerate() {
            let gc = &g[bi * m * n..(bi + 1) * m * n];
            let av = &a[ia * m * k..(ia + 1) * m * k];
            let bv = &b[ib * k * n..(ib + 1) * k * n];
            if let Some(ga) = ga.as_mut() {
                // gA[i, p] += sum_j gC[i, j] * B[p, j]
                let ga = &mut ga[ia * m * k..(ia + 1) * m * k];
                for i in 0..m {
                    let grow = &gc[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] += dot(grow, brow);
                    }
                }
            }
            if let Some(gb) = gb.as_mut() {
                // gB[p, j] += sum_i A[i, p] * gC[i, j]
                let gb = &mut gb[ib * k * n..(ib + 1) * k * n];
                for i in 0..m {
                    let grow = &gc[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip != 0.0 {
                            axpy(aip, grow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
        }
        (ga, gb)
    }
}

/// `c += a * b` for row-major `a: m x k`, `b: k x n`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
