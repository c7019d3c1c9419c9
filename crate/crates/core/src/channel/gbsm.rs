use std::f64::consts::PI;

use num_complex::Complex64;

use super::{steering_vector, ArrayGeometry, CsiTensor, PathParams, TimeFreqGrid};
use crate::error::{config_err, Result};
use crate::tensor::DenseTensor;

/// Evaluate the multipath sum
/// `H(t, f) = Σ_p g_p a_rx a_txᴴ e^{-j2πfτ_p} e^{j2πν_p t}` on `grid`.
pub fn generate_channel(
    paths: &[PathParams],
    grid: &TimeFreqGrid,
    geom_tx: &ArrayGeometry,
    geom_rx: &ArrayGeometry,
) -> Result<CsiTensor> {
    if paths.is_empty() {
        return Err(config_err("channel needs at least one path"));
    }
    grid.validate()?;
    let (n_tx, n_rx) = (geom_tx.elements(), geom_rx.elements());
    let (l_len, k_len) = (grid.symbols, grid.subcarriers);
    let ns = n_tx * n_rx;

    let mut h = vec![Complex64::new(0.0, 0.0); l_len * k_len * ns];
    for p in paths {
        p.validate()?;
        let a_tx = steering_vector(geom_tx, p.az_tx, p.el_tx)?;
        let a_rx = steering_vector(geom_rx, p.az_rx, p.el_rx)?;
        let spatial: Vec<Complex64> = a_rx
            .iter()
            .flat_map(|r| a_tx.iter().map(move |t| p.gain * r * t.conj()))
            .collect();
        let freq: Vec<Complex64> = (0..k_len)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * grid.freq(k) * p.delay))
            .collect();
        for l in 0..l_len {
            let time = Complex64::from_polar(1.0, 2.0 * PI * p.doppler * grid.time(l));
            for (k, fk) in freq.iter().enumerate() {
                let tf = time * fk;
                let row = &mut h[(l * k_len + k) * ns..(l * k_len + k + 1) * ns];
                for (acc, s) in row.iter_mut().zip(&spatial) {
                    *acc += s * tf;
                }
            }
        }
    }

    let data = h.iter().flat_map(|z| [z.re, z.im]).collect();
    let tensor = DenseTensor::new(vec![l_len, k_len, ns, 2], data)?;
    CsiTensor::new(tensor, *grid, n_tx, n_rx)
}

/// Scale so the mean of `|H|²` over all complex entries is 1.
pub fn normalize_power(csi: &CsiTensor) -> Result<CsiTensor> {
    let entries = (csi.tensor().len() / 2) as f64;
    let mean = csi.energy() / entries;
    if mean <= 0.0 {
        return Err(config_err("cannot normalise an all-zero channel"));
    }
    let mut data = csi.tensor().clone();
    data.scale_in_place(1.0 / mean.sqrt());
    CsiTensor::new(data, csi.grid, csi.n_tx, csi.n_rx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{random_scene, MobilityClass, SceneConfig};

    fn path(gain: f64, delay: f64, doppler: f64) -> PathParams {
        PathParams {
            gain: Complex64::new(gain, 0.0),
            az_tx: 0.0,
            el_tx: 0.0,
            az_rx: 0.0,
            el_rx: 0.0,
            delay,
            doppler,
        }
    }

    #[test]
    fn single_static_path_is_constant() {
        let grid = TimeFreqGrid::new(3, 4, 1e-3, 15e3);
        let g = ArrayGeometry::upa(1, 1);
        let csi = generate_channel(&[path(1.0, 0.0, 0.0)], &grid, &g, &g).unwrap();
        for pair in csi.tensor().data().chunks(2) {
            assert_eq!(pair, &[1.0, 0.0]);
        }
    }

    #[test]
    fn delay_gives_linear_phase_slope() {
        let k = 8;
        let grid = TimeFreqGrid::new(1, k, 1e-3, 30e3);
        let g = ArrayGeometry::upa(1, 1);
        let tau = 1.0 / (k as f64 * grid.df);
        let csi = generate_channel(&[path(1.0, tau, 0.0)], &grid, &g, &g).unwrap();
        for kk in 0..k - 1 {
            let ratio = csi.at(0, kk + 1, 0) / csi.at(0, kk, 0);
            let expect = Complex64::from_polar(1.0, -2.0 * PI / k as f64);
            assert!((ratio - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_paths_rejected() {
        let g = ArrayGeometry::upa(1, 1);
        assert!(generate_channel(&[], &TimeFreqGrid::default(), &g, &g).is_err());
    }

    #[test]
    fn static_paths_are_constant_in_time_and_zero_delay_flat_in_frequency() {
        let cfg = SceneConfig::default();
        let mut paths = random_scene(3, 6, MobilityClass::Static, &cfg).unwrap();
        let grid = TimeFreqGrid::new(4, 6, 1e-3, 30e3);
        let (gt, gr) = (ArrayGeometry::ula(2), ArrayGeometry::ula(2));
        let csi = generate_channel(&paths, &grid, &gt, &gr).unwrap();
        for l in 1..4 {
            for k in 0..6 {
                for s in 0..4 {
                    assert!((csi.at(l, k, s) - csi.at(0, k, s)).norm() < 1e-12);
                }
            }
        }
        for p in &mut paths {
            p.delay = 0.0;
            p.doppler = 55.0;
        }
        let csi = generate_channel(&paths, &grid, &gt, &gr).unwrap();
        for l in 0..4 {
            for k in 1..6 {
                for s in 0..4 {
                    assert!((csi.at(l, k, s) - csi.at(l, 0, s)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn doubling_gains_quadruples_energy() {
        let cfg = SceneConfig::default();
        let paths = random_scene(9, 5, MobilityClass::Vehicular, &cfg).unwrap();
        let doubled: Vec<PathParams> = paths
            .iter()
            .map(|p| PathParams {
                gain: p.gain * 2.0,
                ..p.clone()
            })
            .collect();
        let grid = TimeFreqGrid::new(4, 8, 1e-4, 30e3);
        let g = ArrayGeometry::upa(2, 1);
        let e1 = generate_channel(&paths, &grid, &g, &g).unwrap().energy();
        let e2 = generate_channel(&doubled, &grid, &g, &g).unwrap().energy();
        assert!((e2 / e1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn normalised_power_is_unit() {
        let cfg = SceneConfig::default();
        let paths = random_scene(1, 4, MobilityClass::Pedestrian, &cfg).unwrap();
        let g = ArrayGeometry::ula(2);
        let csi = generate_channel(&paths, &TimeFreqGrid::new(4, 8, 1e-4, 30e3), &g, &g).unwrap();
        let n = normalize_power(&csi).unwrap();
        assert!((n.energy() / (n.tensor().len() / 2) as f64 - 1.0).abs() < 1e-12);
    }
}
