//! 3D patchification, patch embedding and rotary position encoding.

mod rope;

use serde::{Deserialize, Serialize};

use crate::channel::CsiTensor;
use crate::error::{config_err, Error, Result};
use crate::tensor::{DenseTensor, Var};

pub use rope::{apply_3d_rope, rope_frequencies, rope_rows, rotate_row};

/// Axis of the patch grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Time,
    Frequency,
    Space,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Time, Axis::Frequency, Axis::Space];

    pub fn index(self) -> usize {
        match self {
            Axis::Time => 0,
            Axis::Frequency => 1,
            Axis::Space => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Time => "time",
            Axis::Frequency => "frequency",
            Axis::Space => "space",
        }
    }
}

/// Patch-grid coordinate `(t, f, s)`, zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchCoord {
    pub t: usize,
    pub f: usize,
    pub s: usize,
}

impl PatchCoord {
    pub fn new(t: usize, f: usize, s: usize) -> Self {
        Self { t, f, s }
    }

    pub fn get(&self, axis: Axis) -> usize {
        match axis {
            Axis::Time => self.t,
            Axis::Frequency => self.f,
            Axis::Space => self.s,
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.t, self.f, self.s]
    }
}

/// Non-overlapping tiling of an `L x K x N_s` tensor by `P_L x P_K x P_s` patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    /// Patch sizes along (time, frequency, space).
    pub patch: [usize; 3],
    /// Tensor extents along (time, frequency, space).
    pub extent: [usize; 3],
}

impl PatchGrid {
    pub fn new(extent: [usize; 3], patch: [usize; 3]) -> Result<Self> {
        for axis in Axis::ALL {
            let (n, p) = (extent[axis.index()], patch[axis.index()]);
            if n == 0 || p == 0 || n % p != 0 {
                return Err(config_err(format!(
                    "{} axis: patch size {p} does not divide extent {n}",
                    axis.name()
                )));
            }
        }
        Ok(Self { patch, extent })
    }

    /// Patch grid with the given per-axis patch counts and unit patches.
    pub fn from_counts(counts: [usize; 3]) -> Result<Self> {
        Self::new(counts, [1, 1, 1])
    }

    pub fn counts(&self) -> [usize; 3] {
        [
            self.extent[0] / self.patch[0],
            self.extent[1] / self.patch[1],
            self.extent[2] / self.patch[2],
        ]
    }

    pub fn count(&self, axis: Axis) -> usize {
        self.counts()[axis.index()]
    }

    pub fn num_patches(&self) -> usize {
        self.counts().iter().product()
    }

    /// Scalars per flattened patch, `P_L * P_K * P_s * 2`.
    pub fn payload_dim(&self) -> usize {
        self.patch.iter().product::<usize>() * 2
    }

    pub fn coord(&self, index: usize) -> PatchCoord {
        let [_, gk, gs] = self.counts();
        PatchCoord::new(index / (gk * gs), (index / gs) % gk, index % gs)
    }

    pub fn index(&self, c: PatchCoord) -> usize {
        let [_, gk, gs] = self.counts();
        (c.t * gk + c.f) * gs + c.s
    }

    /// All coordinates in lexicographic `(t, f, s)` order.
    pub fn coords(&self) -> Vec<PatchCoord> {
        (0..self.num_patches()).map(|i| self.coord(i)).collect()
    }

    fn check_tensor(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[3] != 2 || shape[..3] != self.extent {
            return Err(Error::ShapeMismatch {
                op: "slice_patches",
                lhs: shape.to_vec(),
                rhs: self.extent.to_vec(),
            });
        }
        Ok(())
    }

    /// Visit `(patch index, offset within payload, flat tensor index)` for
    /// every scalar. Within-patch order is `(t, f, s, re/im)`.
    fn for_each_scalar(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [pl, pk, ps] = self.patch;
        let [_, k, ns] = self.extent;
        let e = self.payload_dim();
        for (pi, c) in self.coords().into_iter().enumerate() {
            let mut off = 0;
            for dt in 0..pl {
                for df in 0..pk {
                    for ds in 0..ps {
                        let (t, fr, s) = (c.t * pl + dt, c.f * pk + df, c.s * ps + ds);
                        let base = ((t * k + fr) * ns + s) * 2;
                        f(pi, off, base);
                        f(pi, off + 1, base + 1);
                        off += 2;
                    }
                }
            }
            debug_assert_eq!(off, e);
        }
    }
}

/// Split a `[L, K, N_s, 2]` tensor into `[N_p, E]` patch payloads.
pub fn slice_patches(x: &DenseTensor, grid: &PatchGrid) -> Result<(DenseTensor, Vec<PatchCoord>)> {
    grid.check_tensor(x.shape())?;
    let e = grid.payload_dim();
    let mut out = vec![0.0; grid.num_patches() * e];
    let src = x.data();
    grid.for_each_scalar(|p, off, idx| out[p * e + off] = src[idx]);
    Ok((
        DenseTensor::new(vec![grid.num_patches(), e], out)?,
        grid.coords(),
    ))
}

pub fn slice_csi(x: &CsiTensor, grid: &PatchGrid) -> Result<(DenseTensor, Vec<PatchCoord>)> {
    slice_patches(x.tensor(), grid)
}

/// Inverse of [`slice_patches`].
pub fn unslice_patches(payloads: &DenseTensor, grid: &PatchGrid) -> Result<DenseTensor> {
    let e = grid.payload_dim();
    if payloads.shape() != [grid.num_patches(), e] {
        return Err(Error::ShapeMismatch {
            op: "unslice_patches",
            lhs: payloads.shape().to_vec(),
            rhs: vec![grid.num_patches(), e],
        });
    }
    let [l, k, ns] = grid.extent;
    let mut out = vec![0.0; l * k * ns * 2];
    let src = payloads.data();
    grid.for_each_scalar(|p, off, idx| out[idx] = src[p * e + off]);
    DenseTensor::new(vec![l, k, ns, 2], out)
}

/// Patch tokens with their grid coordinates.
#[derive(Clone, Debug)]
pub struct PatchSequence {
    /// `[N, D]`
    pub embeddings: Var,
    pub coords: Vec<PatchCoord>,
    pub payload_dim: usize,
}

impl PatchSequence {
    pub fn new(embeddings: Var, coords: Vec<PatchCoord>, payload_dim: usize) -> Result<Self> {
        let s = embeddings.shape();
        if s.len() != 2 || s[0] != coords.len() {
            return Err(Error::ShapeMismatch {
                op: "PatchSequence",
                lhs: s.to_vec(),
                rhs: vec![coords.len()],
            });
        }
        if !s[1].is_multiple_of(6) {
            return Err(config_err(format!("embedding dim {} not divisible by 6", s[1])));
        }
        Ok(Self {
            embeddings,
            coords,
            payload_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }
}

/// Affine patch embedding `payloads @ w + b`.
pub fn embed(payloads: &Var, w: &Var, b: &Var) -> Result<Var> {
    let (ps, ws) = (payloads.shape(), w.shape());
    if ps.len() != 2 || ws.len() != 2 || ps[1] != ws[0] || b.shape() != [ws[1]] {
        return Err(Error::ShapeMismatch {
            op: "embed",
            lhs: ps.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    payloads.matmul(w)?.add(b)
}
