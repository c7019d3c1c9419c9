//! Partitioning the patch grid into observed and masked tokens.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::patch::{Axis, PatchCoord, PatchGrid};
use crate::rng::rng_for;

const BLOCK_STREAM: u64 = 0xB10C;
const RANDOM_STREAM: u64 = 0x5A3D;
const DIM_STREAM: u64 = 0xD13E;
const STRATEGY_STREAM: u64 = 0x57A7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Random,
    Dimension,
    Pilot,
    Block,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] = [
        MaskStrategy::Random,
        MaskStrategy::Dimension,
        MaskStrategy::Pilot,
        MaskStrategy::Block,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskStrategy::Random => "random",
            MaskStrategy::Dimension => "dimension",
            MaskStrategy::Pilot => "pilot",
            MaskStrategy::Block => "block",
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err(format!("unknown mask strategy `{s}`")))
    }
}

/// Axis-aligned box of patches, `origin + [0, size)` along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cuboid {
    pub origin: [usize; 3],
    pub size: [usize; 3],
}

impl Cuboid {
    pub fn contains(&self, c: PatchCoord) -> bool {
        let c = c.as_array();
        (0..3).all(|a| c[a] >= self.origin[a] && c[a] < self.origin[a] + self.size[a])
    }
}

/// Observed/masked partition of a patch grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub seed: u64,
    /// One entry per patch, 1 = masked.
    pub bitmap: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cuboids: Vec<Cuboid>,
}

impl MaskPlan {
    /// Build a plan from a boolean mask, enforcing at least one visible token.
    pub fn from_mask(strategy: MaskStrategy, ratio: f64, seed: u64, mask: &[bool]) -> Result<Self> {
        if mask.iter().all(|&m| m) {
            return Err(Error::NoVisibleToken);
        }
        Ok(Self {
            strategy,
            ratio,
            seed,
            bitmap: mask.iter().map(|&m| m as u8).collect(),
            axis: None,
            cuboids: Vec::new(),
        })
    }

    pub fn num_patches(&self) -> usize {
        self.bitmap.len()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.bitmap[i] != 0
    }

    /// Masked indices, ascending.
    pub fn masked(&self) -> Vec<usize> {
        (0..self.bitmap.len()).filter(|&i| self.is_masked(i)).collect()
    }

    /// Observed indices, ascending.
    pub fn observed(&self) -> Vec<usize> {
        (0..self.bitmap.len()).filter(|&i| !self.is_masked(i)).collect()
    }

    pub fn num_masked(&self) -> usize {
        self.bitmap.iter().filter(|&&b| b != 0).count()
    }

    /// Fraction of patches masked.
    pub fn coverage(&self) -> f64 {
        self.num_masked() as f64 / self.bitmap.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s)?;
        if plan.bitmap.iter().any(|&b| b > 1) {
            return Err(config_err("mask bitmap entries must be 0 or 1"));
        }
        if plan.bitmap.iter().all(|&b| b == 1) {
            return Err(Error::NoVisibleToken);
        }
        Ok(plan)
    }
}

fn check_ratio(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(config_err(format!("mask ratio {rho} outside [0, 1)")));
    }
    Ok(())
}

/// Uniformly mask `round(rho * N_p)` patches without replacement.
pub fn mask_random(grid: &PatchGrid, rho: f64, seed: u64) -> Result<MaskPlan> {
    check_ratio(rho)?;
    let n = grid.num_patches();
    let k = (rho * n as f64).round() as usize;
    if k >= n {
        return Err(Error::NoVisibleToken);
    }
    let mut rng = rng_for(seed, &[RANDOM_STREAM]);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        mask[i] = true;
    }
    MaskPlan::from_mask(MaskStrategy::Random, rho, seed, &mask)
}

/// Mask a contiguous run of `round(rho * G)` whole slabs along `axis`.
pub fn mask_dimension(grid: &PatchGrid, axis: Axis, rho: f64, seed: u64) -> Result<MaskPlan> {
    check_ratio(rho)?;
    let g = grid.count(axis);
    if g < 2 {
        return Err(config_err(format!(
            "{} axis has {g} patch(es); slab masking needs at least 2",
            axis.name()
        )));
    }
    let run = (rho * g as f64).round() as usize;
    if run >= g {
        return Err(config_err(format!(
            "slab run of {run} does not fit the {} axis of {g} patches",
            axis.name()
        )));
    }
    let start = rng_for(seed, &[DIM_STREAM]).random_range(0..=g - run);
    let mask: Vec<bool> = grid
        .coords()
        .into_iter()
        .map(|c| (start..start + run).contains(&c.get(axis)))
        .collect();
    let mut plan = MaskPlan::from_mask(MaskStrategy::Dimension, rho, seed, &mask)?;
    plan.axis = Some(axis);
    Ok(plan)
}

/// Keep the `(0,0,0)` corner of every 2x2x2 cube of patches visible.
pub fn mask_pilot(grid: &PatchGrid) -> Result<MaskPlan> {
    for axis in Axis::ALL {
        let g = grid.count(axis);
        if !g.is_multiple_of(2) {
            return Err(config_err(format!(
                "pilot masking needs an even patch count on the {} axis, got {g}",
                axis.name()
            )));
        }
    }
    let mask: Vec<bool> = grid
        .coords()
        .into_iter()
        .map(|c| c.as_array().iter().any(|v| v % 2 != 0))
        .collect();
    MaskPlan::from_mask(MaskStrategy::Pilot, 0.875, 0, &mask)
}

/// Mask an explicit set of cuboids (clipped to the grid).
pub fn mask_cuboids(grid: &PatchGrid, cuboids: &[Cuboid]) -> Result<MaskPlan> {
    let coords = grid.coords();
    let mask: Vec<bool> = coords
        .iter()
        .map(|&c| cuboids.iter().any(|b| b.contains(c)))
        .collect();
    let cov = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
    let mut plan = MaskPlan::from_mask(MaskStrategy::Block, cov, 0, &mask)?;
    plan.cuboids = cuboids.to_vec();
    Ok(plan)
}

/// Add random cuboids until at least `rho` of the grid is masked.
///
/// Edge lengths are uniform in `[1, max(1, G/2)]` per axis. If the cuboids
/// happen to swallow the whole grid, one random patch is released again.
pub fn mask_block(grid: &PatchGrid, rho: f64, seed: u64) -> Result<MaskPlan> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(config_err(format!("block mask ratio {rho} outside (0, 1)")));
    }
    let counts = grid.counts();
    let coords = grid.coords();
    let n = coords.len();
    let target = (rho * n as f64).ceil() as usize;
    let mut rng = rng_for(seed, &[BLOCK_STREAM]);
    let mut mask = vec![false; n];
    let mut covered = 0;
    let mut cuboids = Vec::new();
    while covered < target {
        let mut b = Cuboid {
            origin: [0; 3],
            size: [0; 3],
        };
        for a in 0..3 {
            let edge = rng.random_range(1..=(counts[a] / 2).max(1));
            b.size[a] = edge;
            b.origin[a] = rng.random_range(0..=counts[a] - edge);
        }
        for (i, &c) in coords.iter().enumerate() {
            if !mask[i] && b.contains(c) {
                mask[i] = true;
                covered += 1;
            }
        }
        cuboids.push(b);
    }
    if covered == n {
        mask[rng.random_range(0..n)] = false;
    }
    let mut plan = MaskPlan::from_mask(MaskStrategy::Block, rho, seed, &mask)?;
    plan.cuboids = cuboids;
    Ok(plan)
}

/// Linear masking-ratio ramp, clamped at both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
}

impl CurriculumSchedule {
    pub fn new(start: f64, end: f64, total_steps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || end < start {
            return Err(config_err(format!(
                "curriculum ratios must satisfy 0 <= start <= end <= 1, got {start} -> {end}"
            )));
        }
        Ok(Self {
            start,
            end,
            total_steps,
        })
    }

    pub fn ratio(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.total_steps as f64).clamp(0.0, 1.0);
        self.start + (self.end - self.start) * frac
    }
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            start: 0.5,
            end: 0.75,
            total_steps: 1,
        }
    }
}

pub fn curriculum_ratio(schedule: &CurriculumSchedule, step: usize) -> f64 {
    schedule.ratio(step)
}

/// Relative sampling weights over `[random, dimension, pilot, block]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeights(pub [f64; 4]);

impl Default for StrategyWeights {
    fn default() -> Self {
        Self([1.0; 4])
    }
}

/// Draw a masking strategy for `step`, reproducibly from `seed`.
pub fn sample_strategy(step: u64, seed: u64, weights: &StrategyWeights) -> Result<MaskStrategy> {
    let dist = WeightedIndex::new(weights.0)
        .map_err(|e| config_err(format!("strategy weights {:?}: {e}", weights.0)))?;
    let mut rng = rng_for(seed, &[STRATEGY_STREAM, step]);
    Ok(MaskStrategy::ALL[dist.sample(&mut rng)])
}

/// Build a plan for `strategy` at ratio `rho`.
///
/// Dimension masking picks a random axis with at least two slabs and caps
/// the run so that one slab stays visible; pilot ignores `rho`.
pub fn plan_for(strategy: MaskStrategy, grid: &PatchGrid, rho: f64, seed: u64) -> Result<MaskPlan> {
    match strategy {
        MaskStrategy::Random => mask_random(grid, rho, seed),
        MaskStrategy::Pilot => mask_pilot(grid),
        MaskStrategy::Block => mask_block(grid, rho, seed),
        MaskStrategy::Dimension => {
            let axes: Vec<Axis> = Axis::ALL
                .into_iter()
                .filter(|&a| grid.count(a) >= 2)
                .collect();
            if axes.is_empty() {
                return Err(config_err("no patch axis has two or more slabs"));
            }
            let axis = axes[rng_for(seed, &[DIM_STREAM, 1]).random_range(0..axes.len())];
            let g = grid.count(axis) as f64;
            let capped = rho.min((g - 1.5) / g).max(0.0);
            let mut plan = mask_dimension(grid, axis, capped, seed)?;
            plan.ratio = rho;
            Ok(plan)
        }
    }
}
