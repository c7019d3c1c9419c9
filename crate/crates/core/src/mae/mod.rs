//! Masked autoencoder around the hybrid encoder: model, losses, optimisation,
//! evaluation and persistence.

mod checkpoint;
mod config;
mod loss;
mod metrics;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, MANIFEST};
pub use config::RunConfig;
pub use loss::{
    loss_energy, loss_phase, loss_stat, loss_total, unit_phasor, LossTerms, LossWeights, PHASE_EPS, PHASE_FLOOR,
};
pub use metrics::{
    eval_pilot_estimation, eval_with, mae_metric, masked_nmse, nmse, topk_accuracy, trilinear_pilot_baseline,
    EvalReport, EvalRow,
};
pub use model::{decode, encode, forward, realign, MaeConfig, MaeModel};
pub use optim::{decays, lr_at, AdamW, AdamWConfig, LrSchedule};
pub use train::{
    pretrain, save_loss_csv, write_loss_csv, LossRecord, PatchedSample, TrainConfig, TrainOutcome, Trainer,
    LOSS_CSV_HEADER,
};
