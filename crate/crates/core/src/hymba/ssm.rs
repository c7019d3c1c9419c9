//! Selective state-space branch with a scalar decay per head.
//!
//! For channel `p` in head `h` and state index `n`:
//!
//! ```text
//! S_t[p, n] = a_t[h] * S_{t-1}[p, n] + dt_t[h] * x_t[p] * b_t[n]
//! y_t[p]    = sum_n c_t[n] * S_t[p, n] + skip[p] * x_t[p]
//! ```
//!
//! with `S_{-1} = 0`. The forward pass evaluates each `(p, n)` recurrence with
//! an associative scan; the backward pass runs the adjoint recurrence in
//! reverse time.

use log::warn;

use crate::error::{config_err, Error, Result};
use crate::tensor::{associative_scan, grad_enabled, linear_recurrence_combine, DenseTensor, Var};

/// Largest decay magnitude admitted into the scan.
pub const MAX_DECAY: f64 = 1.0 - 1e-12;

/// Learnable maps producing the input-dependent step size, decay, `B` and `C`.
#[derive(Clone, Debug)]
pub struct SsmParams {
    /// `[S, H]`
    pub w_dt: Var,
    /// `[H]`
    pub b_dt: Var,
    /// `[H]`; the continuous-time decay rate is `exp(a_log)`.
    pub a_log: Var,
    /// `[S, N]`
    pub w_b: Var,
    /// `[S, N]`
    pub w_c: Var,
    /// `[S]`
    pub skip: Var,
}

impl SsmParams {
    pub fn heads(&self) -> usize {
        self.a_log.shape()[0]
    }
}

/// Run the branch on an already activated input `x: [T, S]`.
pub fn ssm_scan(x: &Var, p: &SsmParams) -> Result<Var> {
    let dt = x.matmul(&p.w_dt)?.add(&p.b_dt)?.softplus();
    let decay = dt.mul(&p.a_log.exp())?.neg().exp();
    let b = x.matmul(&p.w_b)?;
    let c = x.matmul(&p.w_c)?;
    selective_scan(x, &dt, &decay, &b, &c, &p.skip)
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: Vec<usize>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs,
    }
}

/// Fused recurrence. Shapes: `x [T, S]`, `dt` and `decay [T, H]`,
/// `b` and `c [T, N]`, `skip [S]`; `H` must divide `S`.
pub fn selective_scan(x: &Var, dt: &Var, decay: &Var, b: &Var, c: &Var, skip: &Var) -> Result<Var> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(shape_err("ssm_scan", xs, vec![0, 0]));
    }
    let (t, s) = (xs[0], xs[1]);
    let hs = dt.shape();
    if hs.len() != 2 || hs[0] != t || decay.shape() != hs {
        return Err(shape_err("ssm_scan", hs, vec![t, 0]));
    }
    let heads = hs[1];
    if heads == 0 || s % heads != 0 {
        return Err(config_err(format!("{heads} ssm heads do not divide width {s}")));
    }
    let bs = b.shape();
    if bs.len() != 2 || bs[0] != t || c.shape() != bs {
        return Err(shape_err("ssm_scan", bs, vec![t, 0]));
    }
    if skip.shape() != [s] {
        return Err(shape_err("ssm_scan", skip.shape(), vec![s]));
    }
    let n = bs[1];
    let per_head = s / heads;

    let mut clamped = 0usize;
    let a: Vec<f64> = decay
        .value()
        .data()
        .iter()
        .map(|&v| {
            if v.abs() > MAX_DECAY || !v.is_finite() {
                clamped += 1;
                v.clamp(-MAX_DECAY, MAX_DECAY)
            } else {
                v
            }
        })
        .collect();
    if clamped > 0 {
        warn!("ssm_scan: clamped {clamped} unstable decay value(s) to magnitude {MAX_DECAY}");
    }

    let (xd, dtd, bd, cd, kd) = (
        x.value().data(),
        dt.value().data(),
        b.value().data(),
        c.value().data(),
        skip.value().data(),
    );
    let keep = grad_enabled()
        && [x, dt, decay, b, c, skip].iter().any(|v| v.requires_grad());
    let mut states = if keep { vec![0.0; t * s * n] } else { Vec::new() };
    let mut y: Vec<f64> = (0..t * s).map(|i| kd[i % s] * xd[i]).collect();
    let mut buf = vec![(0.0, 0.0); t];
    for p in 0..s {
        let h = p / per_head;
        for m in 0..n {
            for (ti, e) in buf.iter_mut().enumerate() {
                *e = (a[ti * heads + h], dtd[ti * heads + h] * xd[ti * s + p] * bd[ti * n + m]);
            }
            associative_scan(&mut buf, linear_recurrence_combine);
            for (ti, &(_, st)) in buf.iter().enumerate() {
                y[ti * s + p] += cd[ti * n + m] * st;
                if keep {
                    states[(ti * s + p) * n + m] = st;
                }
            }
        }
    }

    let value = DenseTensor::new(vec![t, s], y)?;
    Ok(Var::from_op(
        value,
        &[x, dt, decay, b, c, skip],
        Box::new(move |g, _, inputs| {
            let (xd, dtd, bd, cd, kd) = (
                inputs[0].value().data(),
                inputs[1].value().data(),
                inputs[3].value().data(),
                inputs[4].value().data(),
                inputs[5].value().data(),
            );
            let gy = g.data();
            let mut gx = vec![0.0; t * s];
            let mut gskip = vec![0.0; s];
            let mut gdt = vec![0.0; t * heads];
            let mut ga = vec![0.0; t * heads];
            let mut gb = vec![0.0; t * n];
            let mut gc = vec![0.0; t * n];
            let mut adj = vec![0.0; n];
            for p in 0..s {
                let h = p / per_head;
                adj.iter_mut().for_each(|v| *v = 0.0);
                for ti in (0..t).rev() {
                    let gyt = gy[ti * s + p];
                    let xt = xd[ti * s + p];
                    let dtt = dtd[ti * heads + h];
                    gx[ti * s + p] += kd[p] * gyt;
                    gskip[p] += gyt * xt;
                    let st = &states[(ti * s + p) * n..(ti * s + p + 1) * n];
                    let prev = if ti > 0 {
                        &states[((ti - 1) * s + p) * n..((ti - 1) * s + p + 1) * n]
                    } else {
                        &[][..]
                    };
                    let (bt, ct) = (&bd[ti * n..(ti + 1) * n], &cd[ti * n..(ti + 1) * n]);
                    let (mut sa, mut su_b) = (0.0, 0.0);
                    for m in 0..n {
                        let gst = adj[m] + gyt * ct[m];
                        gc[ti * n + m] += gyt * st[m];
                        if ti > 0 {
                            sa += gst * prev[m];
                        }
                        su_b += gst * bt[m];
                        gb[ti * n + m] += gst * dtt * xt;
                        adj[m] = gst;
                    }
                    ga[ti * heads + h] += sa;
                    gdt[ti * heads + h] += su_b * xt;
                    gx[ti * s + p] += su_b * dtt;
                    let at = a[ti * heads + h];
                    adj.iter_mut().for_each(|v| *v *= at);
                }
            }
            let decay_v = inputs[2].value().data();
            for (gi, &v) in ga.iter_mut().zip(decay_v) {
                if v.abs() > MAX_DECAY || !v.is_finite() {
                    *gi = 0.0;
                }
            }
            let mk = |shape: Vec<usize>, d| Some(DenseTensor::from_parts_unchecked(shape, d));
            vec![
                mk(vec![t, s], gx),
                mk(vec![t, heads], gdt),
                mk(vec![t, heads], ga),
                mk(vec![t, n], gb),
                mk(vec![t, n], gc),
                mk(vec![s], gskip),
            ]
        }),
    ))
}
