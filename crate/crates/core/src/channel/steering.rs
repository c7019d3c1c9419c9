use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::ArrayGeometry;
use crate::error::{config_err, Result};

/// Planar-array response `a_h(az, el) ⊗ a_v(el)` for a plane wave.
///
/// Element `(m, n)` (horizontal `m`, vertical `n`) sits at index
/// `m * vertical + n` and carries phase
/// `2π (d_h m sin(az) cos(el) + d_v n sin(el))`.
pub fn steering_vector(geom: &ArrayGeometry, az: f64, el: f64) -> Result<Vec<Complex64>> {
    geom.validate()?;
    if !(-PI..=PI).contains(&az) || !(-FRAC_PI_2..=FRAC_PI_2).contains(&el) {
        return Err(config_err(format!("angles ({az}, {el}) outside their domain")));
    }
    let kh = 2.0 * PI * geom.spacing_h * az.sin() * el.cos();
    let kv = 2.0 * PI * geom.spacing_v * el.sin();
    let a_h: Vec<Complex64> = (0..geom.horizontal)
        .map(|m| Complex64::from_polar(1.0, kh * m as f64))
        .collect();
    let a_v: Vec<Complex64> = (0..geom.vertical)
        .map(|n| Complex64::from_polar(1.0, kv * n as f64))
        .collect();
    Ok(kron(&a_h, &a_v))
}

fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}
