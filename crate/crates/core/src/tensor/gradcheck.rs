//! Central finite-difference checks for reverse-mode gradients.

use super::{DenseTensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients for one input.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest `|analytic - numeric|` over checked entries.
    pub max_abs_err: f64,
    /// `max_abs_err` divided by the largest gradient magnitude among the checked entries.
    pub rel_err: f64,
}

/// Compare the gradient of the scalar `f(inputs)` against central
/// differences with step `h`, for the entries listed in `entries[k]` of
/// input `k` (all entries when `None`).
pub fn check_gradients(
    inputs: &[DenseTensor],
    entries: Option<&[Vec<usize>]>,
    h: f64,
    f: impl Fn(&[Var]) -> Result<Var>,
) -> Result<Vec<GradCheck>> {
    let leaves: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    f(&leaves)?.backward()?;
    let analytic: Vec<DenseTensor> = leaves
        .iter()
        .zip(inputs)
        .map(|(v, x)| v.grad().unwrap_or_else(|| DenseTensor::zeros(x.shape()).expect("shape")))
        .collect();

    let eval = |k: usize, idx: usize, delta: f64| -> Result<f64> {
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let mut x = x.clone();
                if j == k {
                    x.data_mut()[idx] += delta;
                }
                Var::constant(x)
            })
            .collect();
        f(&vars)?.value().item()
    };

    let mut out = Vec::with_capacity(inputs.len());
    for (k, x) in inputs.iter().enumerate() {
        let all: Vec<usize>;
        let idxs: &[usize] = match entries {
            Some(e) => &e[k],
            None => {
                all = (0..x.len()).collect();
                &all
            }
        };
        let mut max_abs_err = 0.0f64;
        let mut scale = 0.0f64;
        for &i in idxs {
            let numeric = (eval(k, i, h)? - eval(k, i, -h)?) / (2.0 * h);
            let a = analytic[k].data()[i];
            max_abs_err = max_abs_err.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel_err = if scale > 0.0 { max_abs_err / scale } else { max_abs_err };
        out.push(GradCheck {
            max_abs_err,
            rel_err,
        });
    }
    Ok(out)
}
