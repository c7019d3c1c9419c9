//! Error metrics, the interpolation baseline and pilot-pattern evaluation.

use std::io::Write;
use std::path::Path;

use crate::error::{config_err, Error, Result};
use crate::masking::{mask_pilot, MaskPlan};
use crate::patch::{slice_patches, PatchGrid};
use crate::tensor::DenseTensor;

use super::model::MaeModel;

/// `||gt - re||_F^2 / ||gt||_F^2`.
pub fn nmse(gt: &DenseTensor, re: &DenseTensor) -> Result<f64> {
    gt.expect_same_shape(re, "nmse")?;
    let den = gt.sum_squares();
    if den == 0.0 {
        return Err(config_err("nmse undefined for an all-zero ground truth"));
    }
    let num: f64 = gt.data().iter().zip(re.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / den)
}

/// Mean absolute error over paired values.
pub fn mae_metric(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "mae",
            lhs: vec![y.len()],
            rhs: vec![y_hat.len()],
        });
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Fraction of rows whose label is among the `k` highest scores.
/// Ties are broken towards the lower class index.
pub fn topk_accuracy(scores: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() || k == 0 {
        return Err(config_err("top-k accuracy needs matching non-empty inputs and k >= 1"));
    }
    let mut hits = 0;
    for (row, &label) in scores.iter().zip(labels) {
        if label >= row.len() {
            return Err(config_err(format!("label {label} outside {} classes", row.len())));
        }
        let target = row[label];
        let better = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < label))
            .count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Neighbour weights along one axis of a period-2 lattice: even positions
/// are observed; odd ones average their two neighbours, or copy the lower
/// one at the upper edge.
fn lattice_weights(c: usize, extent: usize) -> Vec<(usize, f64)> {
    if c.is_multiple_of(2) {
        vec![(c, 1.0)]
    } else if c + 1 < extent {
        vec![(c - 1, 0.5), (c + 1, 0.5)]
    } else {
        vec![(c - 1, 1.0)]
    }
}

/// Trilinear interpolation of pilot-pattern payloads over the patch grid.
/// Observed patches are copied; every other patch is the tensor-product
/// interpolation of the surrounding lattice points.
pub fn trilinear_pilot_baseline(payloads: &DenseTensor, grid: &PatchGrid) -> Result<DenseTensor> {
    let plan = mask_pilot(grid)?;
    let e = grid.payload_dim();
    if payloads.shape() != [grid.num_patches(), e] {
        return Err(Error::ShapeMismatch {
            op: "trilinear",
            lhs: payloads.shape().to_vec(),
            rhs: vec![grid.num_patches(), e],
        });
    }
    let counts = grid.counts();
    let src = payloads.data();
    let mut out = vec![0.0; src.len()];
    for (i, c) in grid.coords().into_iter().enumerate() {
        let row = &mut out[i * e..(i + 1) * e];
        if !plan.is_masked(i) {
            row.copy_from_slice(&src[i * e..(i + 1) * e]);
            continue;
        }
        for &(t, wt) in &lattice_weights(c.t, counts[0]) {
            for &(f, wf) in &lattice_weights(c.f, counts[1]) {
                for &(s, ws) in &lattice_weights(c.s, counts[2]) {
                    let j = grid.index(crate::patch::PatchCoord::new(t, f, s));
                    let w = wt * wf * ws;
                    for (o, x) in row.iter_mut().zip(&src[j * e..(j + 1) * e]) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    DenseTensor::new(payloads.shape().to_vec(), out)
}

/// NMSE restricted to the masked rows of `plan`.
pub fn masked_nmse(gt: &DenseTensor, re: &DenseTensor, plan: &MaskPlan) -> Result<f64> {
    let idx = plan.masked();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    nmse(&gt.select_rows(&idx)?, &re.select_rows(&idx)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub sample: usize,
    pub model_nmse: f64,
    pub interp_nmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean_model_nmse(&self) -> f64 {
        self.rows.iter().map(|r| r.model_nmse).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_interp_nmse(&self) -> f64 {
        self.rows.iter().map(|r| r.interp_nmse).sum::<f64>() / self.rows.len() as f64
    }

    /// `sample,model_nmse,interp_nmse` with a final `mean` row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "sample,model_nmse,interp_nmse")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.sample, r.model_nmse, r.interp_nmse)?;
        }
        writeln!(w, "mean,{},{}", self.mean_model_nmse(), self.mean_interp_nmse())?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// Reconstruct each sample from its pilot-pattern patches and compare the
/// model against trilinear interpolation on the masked region.
pub fn eval_pilot_estimation(model: &MaeModel, samples: &[DenseTensor]) -> Result<EvalReport> {
    eval_with(samples, &model.config, |payloads, grid, plan| model.reconstruct(payloads, grid, plan))
}

/// Pilot evaluation with an arbitrary reconstruction function.
pub fn eval_with(
    samples: &[DenseTensor],
    cfg: &super::MaeConfig,
    mut reconstruct: impl FnMut(&DenseTensor, &PatchGrid, &MaskPlan) -> Result<DenseTensor>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(config_err("evaluation needs at least one sample"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (i, x) in samples.iter().enumerate() {
        let s = x.shape();
        if s.len() != 4 {
            return Err(config_err(format!("sample {i} has shape {s:?}, expected [L, K, Ns, 2]")));
        }
        let grid = cfg.grid([s[0], s[1], s[2]])?;
        let plan = mask_pilot(&grid)?;
        let (payloads, _) = slice_patches(x, &grid)?;
        let recon = reconstruct(&payloads, &grid, &plan)?;
        let interp = trilinear_pilot_baseline(&payloads, &grid)?;
        rows.push(EvalRow {
            sample: i,
            model_nmse: masked_nmse(&payloads, &recon, &plan)?,
            interp_nmse: masked_nmse(&payloads, &interp, &plan)?,
        });
    }
    Ok(EvalReport { rows })
}
