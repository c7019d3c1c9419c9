//! Reconstruction losses on masked patch payloads.
//!
//! Payload rows hold interleaved `(re, im)` pairs, so complex element `e` of
//! a patch is `(row[2e], row[2e + 1])`. Every term is averaged over the
//! masked patches; the statistical term is a mean over real scalars and the
//! two complex terms are means over complex elements.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::masking::MaskPlan;
use crate::tensor::{DenseTensor, Var};

/// Magnitude below which a complex value has no defined phase.
pub const PHASE_FLOOR: f64 = 1e-12;
/// Stabiliser in `z / (|z| + eps)`.
pub const PHASE_EPS: f64 = 1e-12;

fn masked_rows(target: &DenseTensor, recon: &Var, plan: &MaskPlan) -> Result<(DenseTensor, Var)> {
    if target.shape() != recon.shape() || target.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: target.shape().to_vec(),
            rhs: recon.shape().to_vec(),
        });
    }
    if plan.num_patches() != target.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: target.shape().to_vec(),
            rhs: vec![plan.num_patches()],
        });
    }
    let idx = plan.masked();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok((target.select_rows(&idx)?, recon.index_select(&idx)?))
}

fn complex_view(rows: usize, e: usize) -> Result<[usize; 3]> {
    if !e.is_multiple_of(2) {
        return Err(config_err(format!("payload width {e} cannot be paired into complex values")));
    }
    Ok([rows, e / 2, 2])
}

/// Mean squared error over masked patches.
pub fn loss_stat(target: &DenseTensor, recon: &Var, plan: &MaskPlan) -> Result<Var> {
    let (h, h_hat) = masked_rows(target, recon, plan)?;
    Ok(h_hat.sub(&Var::constant(h))?.square().mean())
}

/// Mean squared difference of per-element energies `|z|^2`.
pub fn loss_energy(target: &DenseTensor, recon: &Var, plan: &MaskPlan) -> Result<Var> {
    let (h, h_hat) = masked_rows(target, recon, plan)?;
    let view = complex_view(h.shape()[0], h.shape()[1])?;
    let energy = |v: &Var| -> Result<Var> { v.reshape(&view)?.square().sum_axis(2) };
    let e_true = energy(&Var::constant(h))?;
    Ok(energy(&h_hat)?.sub(&e_true)?.square().mean())
}

/// Mean `|u(H) - u(Ĥ)|^2` with `u(z) = z / (|z| + eps)`; elements where
/// either side is below [`PHASE_FLOOR`] in magnitude contribute zero.
pub fn loss_phase(target: &DenseTensor, recon: &Var, plan: &MaskPlan) -> Result<Var> {
    let (h, h_hat) = masked_rows(target, recon, plan)?;
    let view = complex_view(h.shape()[0], h.shape()[1])?;
    let h = h.reshape(&view)?;
    let h_hat = h_hat.reshape(&view)?;
    let valid = DenseTensor::from_fn(&view[..2], |i| {
        let mag = |d: &[f64]| d[2 * i].hypot(d[2 * i + 1]);
        let ok = mag(h.data()) >= PHASE_FLOOR && mag(h_hat.value().data()) >= PHASE_FLOOR;
        ok as u8 as f64
    })?;
    let u_true = unit_phasor(&Var::constant(h))?;
    let u_hat = unit_phasor(&h_hat)?;
    let per_elem = u_hat.sub(&u_true)?.square().sum_axis(2)?;
    Ok(per_elem.mul(&Var::constant(valid))?.mean())
}

/// Map `[.., 2]` complex pairs to `z / (|z| + eps)`, zero below the floor.
pub fn unit_phasor(z: &Var) -> Result<Var> {
    let s = z.shape();
    if s.last() != Some(&2) {
        return Err(config_err(format!("expected trailing complex axis of 2, got {s:?}")));
    }
    let src = z.value().data();
    let mut out = vec![0.0; src.len()];
    for (o, p) in out.chunks_mut(2).zip(src.chunks(2)) {
        let r = p[0].hypot(p[1]);
        if r >= PHASE_FLOOR {
            let d = r + PHASE_EPS;
            o[0] = p[0] / d;
            o[1] = p[1] / d;
        }
    }
    let value = DenseTensor::new(s.to_vec(), out)?;
    let shape = s.to_vec();
    Ok(Var::from_op(
        value,
        &[z],
        Box::new(move |g, _, inputs| {
            let src = inputs[0].value().data();
            let mut gz = vec![0.0; src.len()];
            for ((gzp, p), gp) in gz.chunks_mut(2).zip(src.chunks(2)).zip(g.data().chunks(2)) {
                let r = p[0].hypot(p[1]);
                if r < PHASE_FLOOR {
                    continue;
                }
                // d(z / (r + eps)) = dz / (r + eps) - z (z . dz) / (r (r + eps)^2)
                let d = r + PHASE_EPS;
                let proj = (p[0] * gp[0] + p[1] * gp[1]) / (r * d * d);
                gzp[0] = gp[0] / d - p[0] * proj;
                gzp[1] = gp[1] / d - p[1] * proj;
            }
            vec![Some(DenseTensor::from_parts_unchecked(shape.clone(), gz))]
        }),
    ))
}

/// Weights of the joint objective and the schedule of the physics factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_stat: f64,
    pub lambda_eng: f64,
    pub lambda_phase: f64,
    /// Fraction of total steps before the physics terms switch on.
    pub gamma_start: f64,
    /// Fraction of total steps over which the physics factor ramps to 1.
    pub gamma_ramp: f64,
    /// When set, the ramp starts once `L_stat` has not improved for this many
    /// steps instead of at `gamma_start`.
    pub plateau_patience: Option<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_stat: 1.0,
            lambda_eng: 0.1,
            lambda_phase: 0.1,
            gamma_start: 0.4,
            gamma_ramp: 0.2,
            plateau_patience: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_stat > 0.0) || !(self.lambda_eng >= 0.0) || !(self.lambda_phase >= 0.0) {
            return Err(config_err("loss weights need lambda_stat > 0 and lambda_eng, lambda_phase >= 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma_start) || !(self.gamma_ramp >= 0.0) {
            return Err(config_err("gamma_start must lie in [0, 1] and gamma_ramp must be >= 0"));
        }
        if self.plateau_patience == Some(0) {
            return Err(config_err("plateau_patience must be positive"));
        }
        Ok(())
    }

    /// Physics factor at `step` for a ramp that begins at `activation`.
    pub fn gamma_from(&self, step: usize, activation: usize, total_steps: usize) -> f64 {
        if step < activation {
            return 0.0;
        }
        let ramp = self.gamma_ramp * total_steps as f64;
        if ramp <= 0.0 {
            return 1.0;
        }
        ((step - activation) as f64 / ramp).min(1.0)
    }

    /// Scheduled activation step.
    pub fn activation_step(&self, total_steps: usize) -> usize {
        (self.gamma_start * total_steps as f64).round() as usize
    }

    pub fn gamma(&self, step: usize, total_steps: usize) -> f64 {
        self.gamma_from(step, self.activation_step(total_steps), total_steps)
    }
}

/// The three loss terms of one reconstruction.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub stat: Var,
    pub eng: Var,
    pub phase: Var,
}

impl LossTerms {
    pub fn compute(target: &DenseTensor, recon: &Var, plan: &MaskPlan) -> Result<Self> {
        Ok(Self {
            stat: loss_stat(target, recon, plan)?,
            eng: loss_energy(target, recon, plan)?,
            phase: loss_phase(target, recon, plan)?,
        })
    }

    /// `λ1 L_stat + γ (λ2 L_eng + λ3 L_phase)`.
    pub fn total(&self, w: &LossWeights, gamma: f64) -> Result<Var> {
        loss_total(&self.stat, &self.eng, &self.phase, w, gamma)
    }
}

pub fn loss_total(stat: &Var, eng: &Var, phase: &Var, w: &LossWeights, gamma: f64) -> Result<Var> {
    let base = stat.scale(w.lambda_stat);
    if gamma == 0.0 {
        return Ok(base);
    }
    let physics = eng.scale(w.lambda_eng).add(&phase.scale(w.lambda_phase))?;
    base.add(&physics.scale(gamma))
}
