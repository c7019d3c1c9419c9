//! Learning-rate schedule and the decoupled-weight-decay Adam optimizer.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::params::ParamStore;
use crate::tensor::DenseTensor;

/// Linear warmup from `base` to `max`, then cosine annealing to `min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub max: f64,
    pub min: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.min >= 0.0 && self.min <= self.base && self.base <= self.max) {
            return Err(config_err(format!(
                "learning rates must satisfy 0 <= min <= base <= max, got {} / {} / {}",
                self.min, self.base, self.max
            )));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return Err(config_err(format!("warmup ratio {} outside (0, 1)", self.warmup_ratio)));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).round() as usize
    }

    pub fn at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        let last = self.total_steps.saturating_sub(1);
        if step < w {
            return self.base + (self.max - self.base) * step as f64 / w as f64;
        }
        if last <= w {
            return if step >= last && last > 0 { self.min } else { self.max };
        }
        let frac = ((step - w) as f64 / (last - w) as f64).min(1.0);
        self.min + 0.5 * (self.max - self.min) * (1.0 + (PI * frac).cos())
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> f64 {
    schedule.at(step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Whether a parameter receives weight decay: matrices only, excluding the
/// learnable token tables.
pub fn decays(name: &str, value: &DenseTensor) -> bool {
    value.rank() == 2 && !name.ends_with(".meta") && !name.ends_with("mask_token")
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, DenseTensor>,
    v: BTreeMap<String, DenseTensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update with learning rate `lr`.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, DenseTensor>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingParam(name.to_string()))?;
            p.expect_same_shape(g, "adamw")?;
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| DenseTensor::zeros(p.shape()).expect("shape"));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| DenseTensor::zeros(p.shape()).expect("shape"));
            let wd = if decays(name, p) { c.weight_decay } else { 0.0 };
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps) + wd * *pi;
                *pi -= lr * update;
            }
        }
        Ok(())
    }
}
