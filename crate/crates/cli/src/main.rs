use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hymba_core::bench::{
    bench_forward, parse_dims, save_speedup_csv, save_timing_csv, speedup_table, BenchCase, Variant,
};
use hymba_core::channel::{load_dataset, write_dataset, ArrayGeometry, DatasetSpec, MobilityClass, SceneConfig, TimeFreqGrid};
use hymba_core::mae::{eval_pilot_estimation, load_checkpoint, pretrain, save_checkpoint, save_loss_csv, MaeModel, RunConfig};
use hymba_core::{Error, Result};

/// Masked-autoencoder pretraining of a hybrid attention/SSM encoder on
/// synthetic MIMO-OFDM channels.
#[derive(Parser)]
#[command(name = "hymba", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CSI dataset directory.
    Generate(GenerateArgs),
    /// Pretrain a model on a dataset and write a checkpoint.
    Pretrain(PretrainArgs),
    /// Pilot-pattern channel estimation: model vs trilinear interpolation.
    Eval(EvalArgs),
    /// Inference latency of the hybrid encoder vs a full-attention baseline.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time snapshots L.
    #[arg(long, default_value_t = 16)]
    symbols: usize,
    /// Subcarriers K.
    #[arg(long, default_value_t = 32)]
    subcarriers: usize,
    /// Seconds between snapshots.
    #[arg(long, default_value_t = 1.0e-3 / 14.0)]
    dt: f64,
    /// Subcarrier spacing in Hz.
    #[arg(long, default_value_t = 30.0e3)]
    df: f64,
    /// Transmit array as HxV elements.
    #[arg(long, default_value = "4x1")]
    tx: String,
    /// Receive array as HxV elements.
    #[arg(long, default_value = "1x1")]
    rx: String,
    /// Multipath components per sample.
    #[arg(long, default_value_t = 8)]
    paths: usize,
    /// static, pedestrian, vehicular or high-speed.
    #[arg(long, default_value = "pedestrian")]
    mobility: String,
    /// Maximum path delay in nanoseconds.
    #[arg(long, default_value_t = 300.0)]
    delay_spread_ns: f64,
    /// Half-width of the cluster azimuth sector in degrees.
    #[arg(long, default_value_t = 60.0)]
    sector_deg: f64,
    /// Keep raw path gains instead of scaling each sample to unit power.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct PretrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: PathBuf,
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Loss log path [default: <out>/loss.csv].
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Per-sample report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Comhymba,
    Transformer,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    /// Input dims LxKxNs; repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<String>,
    #[arg(long, value_enum, default_value = "both")]
    variant: VariantArg,
    /// tiny, small, base or large.
    #[arg(long, default_value = "tiny")]
    scale: String,
    /// Patch size along (L, K, Ns).
    #[arg(long, default_value = "2x2x2")]
    patch: String,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Timing CSV.
    #[arg(long)]
    out: PathBuf,
    /// Speedup CSV; needs `--variant both`.
    #[arg(long)]
    speedup: Option<PathBuf>,
}

fn parse_array(s: &str) -> Result<ArrayGeometry> {
    let bad = || Error::Config(format!("array `{s}` must look like 4x2"));
    let (h, v) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h = h.trim().parse().map_err(|_| bad())?;
    let v = v.trim().parse().map_err(|_| bad())?;
    let geom = ArrayGeometry::upa(h, v);
    geom.validate()?;
    Ok(geom)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = DatasetSpec {
        seed: a.seed,
        samples: a.samples,
        grid: TimeFreqGrid::new(a.symbols, a.subcarriers, a.dt, a.df),
        tx: parse_array(&a.tx)?,
        rx: parse_array(&a.rx)?,
        paths: a.paths,
        mobility: a.mobility.parse::<MobilityClass>()?,
        scene: SceneConfig {
            delay_spread: a.delay_spread_ns * 1e-9,
            sector: a.sector_deg.to_radians(),
            ..SceneConfig::default()
        },
        normalize: !a.no_normalize,
    };
    let manifest = write_dataset(&a.out, &spec)?;
    println!("wrote {} samples to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn run_pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(steps) = a.steps {
        cfg.train.steps = Some(steps);
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let data = load_dataset(&a.data)?;
    let samples: Vec<_> = data.samples.into_iter().map(|c| c.into_tensor()).collect();
    let model = MaeModel::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!("{} parameters", model.num_parameters());
    let out = pretrain(model, &samples, &cfg.train, &cfg.loss, |r| {
        if r.step % 50 == 0 {
            log::info!("step {} lr {:.3e} rho {:.3} loss {:.5}", r.step, r.lr, r.rho, r.total);
        }
    })?;
    save_checkpoint(&a.out, &out.model)?;
    let loss_path = a.loss_csv.unwrap_or_else(|| a.out.join("loss.csv"));
    save_loss_csv(&out.records, &loss_path)?;
    let last = out.records.last().map_or(f64::NAN, |r| r.total);
    println!(
        "trained {} steps, final loss {last:.6}; checkpoint in {}",
        out.records.len(),
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let samples: Vec<_> = data.samples.into_iter().map(|c| c.into_tensor()).collect();
    let report = eval_pilot_estimation(&model, &samples)?;
    report.save_csv(&a.out)?;
    println!(
        "pilot NMSE: model {:.6}, trilinear {:.6} over {} samples",
        report.mean_model_nmse(),
        report.mean_interp_nmse(),
        report.rows.len()
    );
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let patch = parse_dims(&a.patch)?;
    let variants: &[Variant] = match a.variant {
        VariantArg::Comhymba => &[Variant::ComHymba],
        VariantArg::Transformer => &[Variant::Transformer],
        VariantArg::Both => &Variant::ALL,
    };
    if a.speedup.is_some() && variants.len() != 2 {
        return Err(Error::Config("--speedup needs --variant both".into()));
    }
    let mut cases = Vec::with_capacity(a.dims.len());
    for d in &a.dims {
        cases.push(BenchCase::new(&a.scale, parse_dims(d)?, patch, a.repetitions, a.warmup)?);
    }
    let mut records = Vec::new();
    for case in &cases {
        for &v in variants {
            let r = bench_forward(v, case)?;
            match r.median_ms() {
                Some(ms) => log::info!("{v} {:?}: {ms:.3} ms", case.dims),
                None => log::warn!("{v} {:?} failed", case.dims),
            }
            records.push(r);
        }
    }
    save_timing_csv(&records, &a.out)?;
    if let Some(path) = &a.speedup {
        save_speedup_csv(&speedup_table(&records), path)?;
    }
    println!("wrote {} timing rows to {}", records.len(), a.out.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(std::fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Pretrain(a) => run_pretrain(a),
        Command::Eval(a) => ensure_parent(&a.out).and_then(|_| run_eval(a)),
        Command::Bench(a) => ensure_parent(&a.out).and_then(|_| run_bench(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
