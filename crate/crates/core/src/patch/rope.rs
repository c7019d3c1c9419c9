//! Rotary position encoding over three decoupled axis subspaces.
//!
//! A width-`d` vector (with `d % 6 == 0`) is split into contiguous thirds for
//! time, frequency and space. Within each third, scalar pairs `(2k, 2k+1)`
//! are rotated by `pos * ω_k` where `pos` is the coordinate on that axis and
//! `ω_k = 10000^(-2k / (d/6))`.

use super::{PatchCoord, PatchSequence};
use crate::error::{config_err, Error, Result};
use crate::tensor::{DenseTensor, Var};

pub fn rope_frequencies(d: usize) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(6) {
        return Err(config_err(format!("rotary width {d} must be a positive multiple of 6")));
    }
    let pairs = d / 6;
    Ok((0..pairs)
        .map(|k| 10000f64.powf(-2.0 * k as f64 / pairs as f64))
        .collect())
}

/// Rotate one width-`6 * freqs.len()` vector in place; `sign = -1` inverts.
pub fn rotate_row(row: &mut [f64], coord: PatchCoord, freqs: &[f64], sign: f64) {
    let third = freqs.len() * 2;
    debug_assert_eq!(row.len(), third * 3);
    for (block, pos) in coord.as_array().into_iter().enumerate() {
        if pos == 0 {
            continue;
        }
        let sub = &mut row[block * third..(block + 1) * third];
        for (k, &w) in freqs.iter().enumerate() {
            let (sin, cos) = (sign * pos as f64 * w).sin_cos();
            let (x1, x2) = (sub[2 * k], sub[2 * k + 1]);
            sub[2 * k] = cos * x1 - sin * x2;
            sub[2 * k + 1] = sin * x1 + cos * x2;
        }
    }
}

fn rotate_all(
    src: &DenseTensor,
    coords: &[PatchCoord],
    skip_rows: usize,
    head_dim: usize,
    freqs: &[f64],
    sign: f64,
) -> DenseTensor {
    let mut out = src.clone();
    let width = src.shape()[1];
    for (r, row) in out.data_mut().chunks_mut(width).enumerate().skip(skip_rows) {
        let c = coords[r - skip_rows];
        for head in row.chunks_mut(head_dim) {
            rotate_row(head, c, freqs, sign);
        }
    }
    out
}

/// Apply the rotation to rows `skip_rows..` of a `[rows, width]` tensor,
/// independently per `head_dim`-wide chunk. Rows before `skip_rows` (meta
/// tokens) pass through unchanged.
pub fn rope_rows(x: &Var, coords: &[PatchCoord], skip_rows: usize, head_dim: usize) -> Result<Var> {
    let s = x.shape();
    if s.len() != 2 || s[0] != skip_rows + coords.len() {
        return Err(Error::ShapeMismatch {
            op: "rope",
            lhs: s.to_vec(),
            rhs: vec![skip_rows + coords.len()],
        });
    }
    if head_dim == 0 || !s[1].is_multiple_of(head_dim) {
        return Err(config_err(format!("width {} not divisible into heads of {head_dim}", s[1])));
    }
    let freqs = rope_frequencies(head_dim)?;
    let out = rotate_all(x.value(), coords, skip_rows, head_dim, &freqs, 1.0);
    let coords = coords.to_vec();
    Ok(Var::from_op(
        out,
        &[x],
        Box::new(move |g, _, _| {
            vec![Some(rotate_all(g, &coords, skip_rows, head_dim, &freqs, -1.0))]
        }),
    ))
}

/// Inject every token's grid coordinate into its embedding.
pub fn apply_3d_rope(seq: &PatchSequence) -> Result<PatchSequence> {
    let d = seq.dim();
    let embeddings = rope_rows(&seq.embeddings, &seq.coords, 0, d)?;
    PatchSequence::new(embeddings, seq.coords.clone(), seq.payload_dim)
}
