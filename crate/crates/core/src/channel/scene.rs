use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PathParams;
use crate::error::{config_err, Error, Result};
use crate::rng::rng_for;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// User mobility, bounding the Doppler spread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityClass {
    Static,
    Pedestrian,
    Vehicular,
    HighSpeed,
}

impl MobilityClass {
    pub const ALL: [MobilityClass; 4] = [
        MobilityClass::Static,
        MobilityClass::Pedestrian,
        MobilityClass::Vehicular,
        MobilityClass::HighSpeed,
    ];

    /// Maximum user speed in m/s.
    pub fn max_speed(self) -> f64 {
        let kmh = match self {
            MobilityClass::Static => 0.0,
            MobilityClass::Pedestrian => 3.0,
            MobilityClass::Vehicular => 60.0,
            MobilityClass::HighSpeed => 300.0,
        };
        kmh / 3.6
    }

    pub fn max_doppler(self, carrier_hz: f64) -> f64 {
        self.max_speed() * carrier_hz / SPEED_OF_LIGHT
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MobilityClass::Static => "static",
            MobilityClass::Pedestrian => "pedestrian",
            MobilityClass::Vehicular => "vehicular",
            MobilityClass::HighSpeed => "high-speed",
        }
    }
}

impl fmt::Display for MobilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MobilityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown mobility class `{s}`")))
    }
}

/// Distributional knobs for [`random_scene`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Delays are uniform in `[0, delay_spread]` seconds.
    pub delay_spread: f64,
    pub carrier_hz: f64,
    /// Per-path angular offset around the cluster mean, radians.
    pub angular_spread: f64,
    /// Cluster mean azimuths are uniform in `[-sector, sector]`.
    pub sector: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            delay_spread: 300e-9,
            carrier_hz: 3.5e9,
            angular_spread: 10f64.to_radians(),
            sector: 60f64.to_radians(),
        }
    }
}

/// Draw `n_paths` propagation paths, deterministically in `seed`.
///
/// Path powers decay exponentially with delay and sum to one; phases are
/// uniform; Doppler is `ν_max cos(ψ)` with a uniform arrival direction `ψ`.
pub fn random_scene(
    seed: u64,
    n_paths: usize,
    mobility: MobilityClass,
    cfg: &SceneConfig,
) -> Result<Vec<PathParams>> {
    if n_paths == 0 {
        return Err(config_err("scene needs at least one path"));
    }
    if !(cfg.delay_spread >= 0.0) || !(cfg.angular_spread >= 0.0) || !(cfg.sector >= 0.0) {
        return Err(config_err("scene spreads must be non-negative"));
    }
    let mut rng = rng_for(seed, &[0x5CE4E]);
    let nu_max = mobility.max_doppler(cfg.carrier_hz);

    let mean_az_tx = rng.random_range(-1.0..=1.0) * cfg.sector;
    let mean_az_rx = rng.random_range(-1.0..=1.0) * cfg.sector;
    let mean_el_tx = rng.random_range(-1.0..=1.0) * PI / 12.0;
    let mean_el_rx = rng.random_range(-1.0..=1.0) * PI / 12.0;

    let mut paths: Vec<PathParams> = (0..n_paths)
        .map(|_| {
            let mut jitter = || rng.random_range(-1.0..=1.0) * cfg.angular_spread;
            let az_tx = (mean_az_tx + jitter()).clamp(-PI, PI);
            let az_rx = (mean_az_rx + jitter()).clamp(-PI, PI);
            let el_tx = (mean_el_tx + jitter() * 0.5).clamp(-FRAC_PI_2, FRAC_PI_2);
            let el_rx = (mean_el_rx + jitter() * 0.5).clamp(-FRAC_PI_2, FRAC_PI_2);
            let delay = rng.random_range(0.0..=1.0) * cfg.delay_spread;
            let doppler = nu_max * rng.random_range(0.0..2.0 * PI).cos();
            let phase = rng.random_range(0.0..2.0 * PI);
            PathParams {
                gain: Complex64::from_polar(1.0, phase),
                az_tx,
                el_tx,
                az_rx,
                el_rx,
                delay,
                doppler,
            }
        })
        .collect();

    let decay = if cfg.delay_spread > 0.0 {
        3.0 / cfg.delay_spread
    } else {
        0.0
    };
    let powers: Vec<f64> = paths.iter().map(|p| (-decay * p.delay).exp()).collect();
    let total: f64 = powers.iter().sum();
    for (p, pw) in paths.iter_mut().zip(powers) {
        p.gain *= (pw / total).sqrt();
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ArrayGeometry, TimeFreqGrid};

    #[test]
    fn deterministic_under_seed() {
        let cfg = SceneConfig::default();
        let a = random_scene(42, 8, MobilityClass::Vehicular, &cfg).unwrap();
        let b = random_scene(42, 8, MobilityClass::Vehicular, &cfg).unwrap();
        assert_eq!(a, b);
        let c = random_scene(43, 8, MobilityClass::Vehicular, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn static_has_no_doppler_and_bounds_hold() {
        let cfg = SceneConfig::default();
        for seed in 0..20 {
            let paths = random_scene(seed, 6, MobilityClass::Static, &cfg).unwrap();
            assert!(paths.iter().all(|p| p.doppler == 0.0));
            let paths = random_scene(seed, 6, MobilityClass::HighSpeed, &cfg).unwrap();
            let nu_max = MobilityClass::HighSpeed.max_doppler(cfg.carrier_hz);
            for p in &paths {
                assert!(p.doppler.abs() <= nu_max);
                assert!(p.delay >= 0.0 && p.delay <= cfg.delay_spread);
                p.validate().unwrap();
            }
            let power: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
            assert!((power - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn powers_decay_with_delay() {
        let cfg = SceneConfig::default();
        let mut paths = random_scene(5, 12, MobilityClass::Static, &cfg).unwrap();
        paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        for w in paths.windows(2) {
            assert!(w[0].gain.norm() >= w[1].gain.norm());
        }
    }

    #[test]
    fn zero_paths_rejected() {
        assert!(random_scene(1, 0, MobilityClass::Static, &SceneConfig::default()).is_err());
    }

    /// First subcarrier lag at which the mean |frequency autocorrelation|
    /// falls below one half, estimated over many scenes.
    fn correlation_half_width(delay_spread: f64) -> usize {
        let cfg = SceneConfig {
            delay_spread,
            ..SceneConfig::default()
        };
        let k = 64;
        let grid = TimeFreqGrid::new(1, k, 1e-3, 120e3);
        let g = ArrayGeometry::ula(1);
        let mut corr = vec![Complex64::new(0.0, 0.0); k];
        let mut power = 0.0;
        for seed in 0..200 {
            let paths = random_scene(seed, 16, MobilityClass::Static, &cfg).unwrap();
            let csi = generate_channel(&paths, &grid, &g, &g).unwrap();
            for lag in 0..k {
                for f in 0..k - lag {
                    corr[lag] += csi.at(0, f, 0) * csi.at(0, f + lag, 0).conj() / (k - lag) as f64;
                }
            }
            power += (0..k).map(|f| csi.at(0, f, 0).norm_sqr()).sum::<f64>() / k as f64;
        }
        (0..k).find(|&lag| corr[lag].norm() / power < 0.5).unwrap_or(k)
    }

    #[test]
    fn larger_delay_spread_shrinks_coherence_bandwidth() {
        let wide = correlation_half_width(0.1e-6);
        let narrow = correlation_half_width(1e-6);
        assert!(narrow < wide, "1us: {narrow}, 0.1us: {wide}");
    }

    #[test]
    fn mobility_parses() {
        assert_eq!("high-speed".parse::<MobilityClass>().unwrap(), MobilityClass::HighSpeed);
        assert!("flying".parse::<MobilityClass>().is_err());
    }
}
