//! Synthetic CSI from a geometry-based stochastic multipath model.
//!
//! A channel sample is the complex MIMO response `H(t, f)` on an OFDM
//! time/frequency grid, stored as a real tensor `[L, K, N_s, 2]` with the
//! real part at index 0 and the imaginary part at index 1 of the last axis.
//! Antenna pairs are flattened receive-major: `s = rx * N_tx + tx`.

mod dataset;
mod gbsm;
mod scene;
mod steering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::DenseTensor;

pub use dataset::{load_dataset, write_dataset, Dataset, DatasetManifest, DatasetSpec, SampleEntry};
pub use gbsm::{generate_channel, normalize_power};
pub use scene::{random_scene, MobilityClass, SceneConfig};
pub use steering::steering_vector;

/// Parameters of one propagation path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: Complex64,
    /// Departure azimuth, radians in `[-pi, pi]`.
    pub az_tx: f64,
    /// Departure elevation, radians in `[-pi/2, pi/2]`.
    pub el_tx: f64,
    pub az_rx: f64,
    pub el_rx: f64,
    /// Seconds, non-negative.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
}

impl PathParams {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::{FRAC_PI_2, PI};
        if !(self.delay >= 0.0) {
            return Err(config_err(format!("path delay {} must be >= 0", self.delay)));
        }
        for (name, az) in [("az_tx", self.az_tx), ("az_rx", self.az_rx)] {
            if !(-PI..=PI).contains(&az) {
                return Err(config_err(format!("{name} = {az} outside [-pi, pi]")));
            }
        }
        for (name, el) in [("el_tx", self.el_tx), ("el_rx", self.el_rx)] {
            if !(-FRAC_PI_2..=FRAC_PI_2).contains(&el) {
                return Err(config_err(format!("{name} = {el} outside [-pi/2, pi/2]")));
            }
        }
        if !self.doppler.is_finite() || !self.gain.re.is_finite() || !self.gain.im.is_finite() {
            return Err(config_err("non-finite path parameter"));
        }
        Ok(())
    }
}

/// Uniform planar array: `horizontal x vertical` elements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub horizontal: usize,
    pub vertical: usize,
    /// Element spacing in wavelengths, horizontal axis.
    pub spacing_h: f64,
    /// Element spacing in wavelengths, vertical axis.
    pub spacing_v: f64,
}

impl ArrayGeometry {
    pub fn upa(horizontal: usize, vertical: usize) -> Self {
        Self {
            horizontal,
            vertical,
            spacing_h: 0.5,
            spacing_v: 0.5,
        }
    }

    /// Horizontal uniform linear array.
    pub fn ula(n: usize) -> Self {
        Self::upa(n, 1)
    }

    pub fn elements(&self) -> usize {
        self.horizontal * self.vertical
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements() == 0 {
            return Err(config_err("array must have at least one element"));
        }
        if !(self.spacing_h > 0.0 && self.spacing_v > 0.0) {
            return Err(config_err("array spacing must be positive"));
        }
        Ok(())
    }
}

/// Sampling grid: time `t0 + l * dt`, frequency `f0 + k * df`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFreqGrid {
    pub symbols: usize,
    pub subcarriers: usize,
    /// Seconds between snapshots.
    pub dt: f64,
    /// Hz between subcarriers.
    pub df: f64,
    pub t0: f64,
    pub f0: f64,
}

impl TimeFreqGrid {
    pub fn new(symbols: usize, subcarriers: usize, dt: f64, df: f64) -> Self {
        Self {
            symbols,
            subcarriers,
            dt,
            df,
            t0: 0.0,
            f0: 0.0,
        }
    }

    pub fn time(&self, l: usize) -> f64 {
        self.t0 + l as f64 * self.dt
    }

    pub fn freq(&self, k: usize) -> f64 {
        self.f0 + k as f64 * self.df
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbols == 0 || self.subcarriers == 0 {
            return Err(config_err("grid needs L >= 1 and K >= 1"));
        }
        Ok(())
    }
}

impl Default for TimeFreqGrid {
    fn default() -> Self {
        // 30 kHz numerology: 1/14 ms symbols.
        Self::new(16, 32, 1.0e-3 / 14.0, 30.0e3)
    }
}

/// Real-valued CSI tensor `[L, K, N_s, 2]` plus its acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTensor {
    data: DenseTensor,
    pub grid: TimeFreqGrid,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl CsiTensor {
    pub fn new(data: DenseTensor, grid: TimeFreqGrid, n_tx: usize, n_rx: usize) -> Result<Self> {
        let s = data.shape();
        if s.len() != 4 || s[3] != 2 {
            return Err(config_err(format!("CSI tensor must be [L, K, Ns, 2], got {s:?}")));
        }
        if s[2] != n_tx * n_rx {
            return Err(config_err(format!(
                "spatial axis {} != n_tx * n_rx = {}",
                s[2],
                n_tx * n_rx
            )));
        }
        if s[0] != grid.symbols || s[1] != grid.subcarriers {
            return Err(config_err(format!(
                "tensor {s:?} disagrees with grid {}x{}",
                grid.symbols, grid.subcarriers
            )));
        }
        Ok(Self {
            data,
            grid,
            n_tx,
            n_rx,
        })
    }

    /// Wrap a raw tensor with a unit grid and an `N_s x 1` antenna layout.
    pub fn from_tensor(data: DenseTensor) -> Result<Self> {
        let s = data.shape().to_vec();
        if s.len() != 4 {
            return Err(config_err(format!("CSI tensor must be rank 4, got {s:?}")));
        }
        Self::new(data, TimeFreqGrid::new(s[0], s[1], 1.0, 1.0), s[2], 1)
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.data
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.data
    }

    /// `(L, K, N_s)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    pub fn at(&self, l: usize, k: usize, s: usize) -> Complex64 {
        let (_, kk, ns) = self.dims();
        let i = ((l * kk + k) * ns + s) * 2;
        let d = self.data.data();
        Complex64::new(d[i], d[i + 1])
    }

    /// Squared Frobenius norm of the complex channel.
    pub fn energy(&self) -> f64 {
        self.data.sum_squares()
    }
}
