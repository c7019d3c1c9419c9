//! Pretraining loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::masking::{plan_for, sample_strategy, CurriculumSchedule, MaskPlan, MaskStrategy, StrategyWeights};
use crate::patch::{slice_patches, Axis, PatchGrid};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::DenseTensor;

use super::loss::{LossTerms, LossWeights};
use super::model::{MaeConfig, MaeModel};
use super::optim::{AdamW, AdamWConfig, LrSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs * ceil(samples / batch_size)` when set.
    pub steps: Option<usize>,
    pub lr_base: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub curriculum_start: f64,
    pub curriculum_end: f64,
    pub mask_weight_random: f64,
    pub mask_weight_dimension: f64,
    pub mask_weight_pilot: f64,
    pub mask_weight_block: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            batch_size: 128,
            epochs: 250,
            steps: None,
            lr_base: 1e-5,
            lr_max: 1e-4,
            lr_min: 1e-6,
            warmup_ratio: 0.05,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            curriculum_start: 0.5,
            curriculum_end: 0.75,
            mask_weight_random: 1.0,
            mask_weight_dimension: 1.0,
            mask_weight_pilot: 1.0,
            mask_weight_block: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, samples: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * samples.div_ceil(self.batch_size.max(1)))
    }

    pub fn schedule(&self, total_steps: usize) -> LrSchedule {
        LrSchedule {
            base: self.lr_base,
            max: self.lr_max,
            min: self.lr_min,
            warmup_ratio: self.warmup_ratio,
            total_steps,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn strategy_weights(&self) -> StrategyWeights {
        StrategyWeights([
            self.mask_weight_random,
            self.mask_weight_dimension,
            self.mask_weight_pilot,
            self.mask_weight_block,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be positive"));
        }
        self.schedule(1).validate()?;
        CurriculumSchedule::new(self.curriculum_start, self.curriculum_end, 1)?;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(config_err("AdamW needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay must be >= 0"));
        }
        let w = self.strategy_weights().0;
        if w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(config_err("mask strategy weights must be >= 0 and not all zero"));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub rho: f64,
    pub stat: f64,
    pub eng: f64,
    pub phase: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,lr,rho,L_stat,L_eng,L_phase,L_total";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lr, self.rho, self.stat, self.eng, self.phase, self.total
        )
    }
}

pub fn write_loss_csv(records: &[LossRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{LOSS_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn save_loss_csv(records: &[LossRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_loss_csv(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// A sample cut into patch payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchedSample {
    pub payloads: DenseTensor,
    pub grid: PatchGrid,
}

impl PatchedSample {
    pub fn new(cfg: &MaeConfig, x: &DenseTensor) -> Result<Self> {
        let s = x.shape();
        if s.len() != 4 || s[3] != 2 {
            return Err(config_err(format!("sample shape {s:?} is not [L, K, Ns, 2]")));
        }
        let grid = cfg.grid([s[0], s[1], s[2]])?;
        let (payloads, _) = slice_patches(x, &grid)?;
        Ok(Self { payloads, grid })
    }
}

/// Optimizer state, schedules and the model being trained.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MaeModel,
    pub config: TrainConfig,
    pub loss: LossWeights,
    optimizer: AdamW,
    schedule: LrSchedule,
    curriculum: CurriculumSchedule,
    total_steps: usize,
    step: usize,
    activation: Option<usize>,
    best_stat: f64,
    since_best: usize,
}

impl Trainer {
    pub fn new(model: MaeModel, config: TrainConfig, loss: LossWeights, total_steps: usize) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        if total_steps == 0 {
            return Err(config_err("training needs at least one step"));
        }
        let schedule = config.schedule(total_steps);
        let curriculum = CurriculumSchedule::new(
            config.curriculum_start,
            config.curriculum_end,
            total_steps.saturating_sub(1),
        )?;
        let activation = match loss.plateau_patience {
            Some(_) => None,
            None => Some(loss.activation_step(total_steps)),
        };
        Ok(Self {
            optimizer: AdamW::new(config.adamw()),
            model,
            config,
            loss,
            schedule,
            curriculum,
            total_steps,
            step: 0,
            activation,
            best_stat: f64::INFINITY,
            since_best: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    pub fn rho(&self) -> f64 {
        self.curriculum.ratio(self.step)
    }

    pub fn gamma(&self) -> f64 {
        match self.activation {
            Some(a) => self.loss.gamma_from(self.step, a, self.total_steps),
            None => 0.0,
        }
    }

    /// Masking plan for batch slot `slot` at the current step.
    pub fn plan_for(&self, grid: &PatchGrid, slot: usize) -> Result<MaskPlan> {
        let seed = self.config.seed;
        let strategy = sample_strategy(
            self.step as u64,
            derive_seed(seed, &[0x5EED, slot as u64]),
            &self.config.strategy_weights(),
        )?;
        plan_for(strategy, grid, self.rho(), derive_seed(seed, &[self.step as u64, slot as u64]))
    }

    /// Forward, backward and one optimizer update on `batch` with the given
    /// masking plans (one per sample).
    pub fn train_step(&mut self, batch: &[&PatchedSample], plans: &[MaskPlan]) -> Result<LossRecord> {
        if batch.is_empty() || batch.len() != plans.len() {
            return Err(config_err(format!(
                "batch of {} samples needs as many plans, got {}",
                batch.len(),
                plans.len()
            )));
        }
        let (lr, rho, gamma) = (self.lr(), self.rho(), self.gamma());
        let inv = 1.0 / batch.len() as f64;
        let mut grads: Option<BTreeMap<String, DenseTensor>> = None;
        let (mut stat, mut eng, mut phase, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (sample, plan) in batch.iter().zip(plans) {
            let bound = self.model.params.bind();
            let recon = self.model.forward(&bound, &sample.payloads, &sample.grid, plan)?;
            let terms = LossTerms::compute(&sample.payloads, &recon, plan)?;
            let t = terms.total(&self.loss, gamma)?;
            stat += terms.stat.value().item()? * inv;
            eng += terms.eng.value().item()? * inv;
            phase += terms.phase.value().item()? * inv;
            total += t.value().item()? * inv;
            t.scale(inv).backward()?;
            let g = bound.grads()?;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (name, gi) in g {
                        acc.get_mut(&name).expect("same parameter set").add_assign(&gi)?;
                    }
                }
            }
        }
        if ![stat, eng, phase, total].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                stat,
                eng,
                phase,
                total,
            });
        }
        let grads = grads.expect("non-empty batch");
        self.optimizer.update(&mut self.model.params, &grads, lr)?;

        if self.activation.is_none() {
            if let Some(patience) = self.loss.plateau_patience {
                if stat < self.best_stat * (1.0 - 1e-3) {
                    self.best_stat = stat;
                    self.since_best = 0;
                } else {
                    self.since_best += 1;
                    if self.since_best >= patience {
                        self.activation = Some(self.step + 1);
                    }
                }
            }
        }
        let record = LossRecord {
            step: self.step,
            lr,
            rho,
            stat,
            eng,
            phase,
            total,
        };
        self.step += 1;
        Ok(record)
    }
}

/// Check up front that every strategy with positive weight can mask `grid`.
fn check_strategies(cfg: &TrainConfig, grid: &PatchGrid) -> Result<()> {
    let w = cfg.strategy_weights().0;
    for (strategy, weight) in MaskStrategy::ALL.into_iter().zip(w) {
        if weight <= 0.0 {
            continue;
        }
        let ok = match strategy {
            MaskStrategy::Pilot => Axis::ALL.iter().all(|&a| grid.count(a).is_multiple_of(2)),
            MaskStrategy::Dimension => Axis::ALL.iter().any(|&a| grid.count(a) >= 2),
            _ => grid.num_patches() >= 2,
        };
        if !ok {
            return Err(config_err(format!(
                "mask strategy `{strategy}` cannot be applied to a patch grid of {:?}",
                grid.counts()
            )));
        }
    }
    Ok(())
}

/// Result of a pretraining run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MaeModel,
    pub records: Vec<LossRecord>,
}

/// Train `model` on `samples` (`[L, K, Ns, 2]` tensors), calling `on_step`
/// after every update.
pub fn pretrain(
    model: MaeModel,
    samples: &[DenseTensor],
    config: &TrainConfig,
    loss: &LossWeights,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(config_err("pretraining needs at least one sample"));
    }
    let patched: Vec<PatchedSample> = samples
        .iter()
        .map(|x| PatchedSample::new(&model.config, x))
        .collect::<Result<_>>()?;
    for p in &patched {
        check_strategies(config, &p.grid)?;
    }
    let total = config.total_steps(samples.len());
    let mut trainer = Trainer::new(model, config.clone(), loss.clone(), total)?;
    let per_epoch = samples.len().div_ceil(config.batch_size);
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(total);
    for step in 0..total {
        let (epoch, slot) = (step / per_epoch, step % per_epoch);
        if slot == 0 {
            order = (0..samples.len()).collect();
            order.shuffle(&mut rng_for(config.seed, &[0xE9, epoch as u64]));
        }
        let idx = &order[slot * config.batch_size..((slot + 1) * config.batch_size).min(samples.len())];
        let batch: Vec<&PatchedSample> = idx.iter().map(|&i| &patched[i]).collect();
        let plans = batch
            .iter()
            .enumerate()
            .map(|(j, s)| trainer.plan_for(&s.grid, j))
            .collect::<Result<Vec<_>>>()?;
        let rec = trainer.train_step(&batch, &plans)?;
        on_step(&rec);
        records.push(rec);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        records,
    })
}
