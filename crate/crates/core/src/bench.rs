//! Inference latency harness comparing the hybrid encoder with a
//! parameter-matched full-attention baseline.

use std::fmt;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::CsiTensor;
use crate::error::{config_err, Result};
use crate::hymba::{HymbaConfig, StackKind};
use crate::mae::{encode, MaeConfig, MaeModel};
use crate::masking::{MaskPlan, MaskStrategy};
use crate::patch::slice_patches;
use crate::rng::rng_for;
use crate::tensor::{no_grad, DenseTensor};

pub const MIN_REPETITIONS: usize = 5;
pub const MIN_WARMUP: usize = 2;
pub const TIMING_CSV_HEADER: &str = "variant,scale,L,K,Ns,tokens,median_ms,p10_ms,p90_ms";
pub const SPEEDUP_CSV_HEADER: &str = "scale,L,K,Ns,comhymba_ms,transformer_ms,speedup";

/// Default cap on the estimated working set of one forward pass.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    ComHymba,
    Transformer,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::ComHymba, Variant::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ComHymba => "comhymba",
            Variant::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comhymba" | "hybrid" => Ok(Variant::ComHymba),
            "transformer" | "full-transformer" | "attention" => Ok(Variant::Transformer),
            _ => Err(config_err(format!("unknown variant `{s}` (expected comhymba or transformer)"))),
        }
    }
}

/// Named model sizes for benchmarking.
pub fn scale_config(scale: &str) -> Result<HymbaConfig> {
    let base = HymbaConfig::default();
    let cfg = match scale {
        "tiny" => HymbaConfig {
            dim: 24,
            depth: 2,
            heads: 2,
            head_dim: 12,
            ssm_state: 8,
            ssm_heads: 2,
            n_meta: 2,
            ffn_mult: 2,
            ..base
        },
        "small" => base,
        "base" => HymbaConfig {
            dim: 96,
            depth: 6,
            heads: 8,
            head_dim: 12,
            ssm_state: 16,
            ssm_heads: 8,
            ..base
        },
        "large" => HymbaConfig {
            dim: 192,
            depth: 8,
            heads: 8,
            head_dim: 24,
            ssm_state: 16,
            ssm_heads: 8,
            ..base
        },
        _ => return Err(config_err(format!("unknown scale `{scale}` (tiny, small, base, large)"))),
    };
    Ok(cfg)
}

/// Model configuration of one variant at one scale. The hybrid variant uses
/// windowed attention in every layer so its cost stays linear in length.
pub fn variant_config(variant: Variant, scale: &str, patch: [usize; 3]) -> Result<MaeConfig> {
    let mut hymba = scale_config(scale)?;
    hymba.full_attn_layers = Some(Vec::new());
    hymba.dec_full_attn_layers = Some(Vec::new());
    hymba.decoder_kind = match variant {
        Variant::ComHymba => StackKind::Hybrid,
        Variant::Transformer => StackKind::Attention,
    };
    let cfg = MaeConfig {
        patch_l: patch[0],
        patch_k: patch[1],
        patch_s: patch[2],
        encoder_kind: hymba.decoder_kind,
        hymba,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One benchmark configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub scale: String,
    /// `(L, K, N_s)` of the input CSI tensor.
    pub dims: [usize; 3],
    pub patch: [usize; 3],
    pub repetitions: usize,
    pub warmup: usize,
}

impl BenchCase {
    pub fn new(scale: &str, dims: [usize; 3], patch: [usize; 3], repetitions: usize, warmup: usize) -> Result<Self> {
        let case = Self {
            scale: scale.to_string(),
            dims,
            patch,
            repetitions,
            warmup,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < MIN_REPETITIONS {
            return Err(config_err(format!(
                "repetitions must be at least {MIN_REPETITIONS}, got {}",
                self.repetitions
            )));
        }
        if self.warmup < MIN_WARMUP {
            return Err(config_err(format!("warmup must be at least {MIN_WARMUP}, got {}", self.warmup)));
        }
        if self.dims.contains(&0) || self.patch.contains(&0) {
            return Err(config_err("dims and patch sizes must be positive"));
        }
        for ((d, p), axis) in self.dims.iter().zip(&self.patch).zip(["L", "K", "Ns"]) {
            if d % p != 0 {
                return Err(config_err(format!("{axis} = {d} is not divisible by patch size {p}")));
            }
        }
        scale_config(&self.scale).map(|_| ())
    }

    pub fn tokens(&self) -> usize {
        self.dims.iter().zip(&self.patch).map(|(d, p)| d / p).product()
    }
}

/// Parse `LxKxNs`.
pub fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(config_err(format!("dims `{s}` must look like 16x32x32")));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| config_err(format!("dims `{s}` must look like 16x32x32")))?;
    }
    Ok(out)
}

/// Timing statistics for one `(variant, case)`; `None` marks a failed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub variant: Variant,
    pub scale: String,
    pub dims: [usize; 3],
    pub tokens: usize,
    pub stats: Option<TimingStats>,
    pub failure: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

impl TimingStats {
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(config_err("no timing samples"));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            median_ms: quantile(&s, 0.5),
            p10_ms: quantile(&s, 0.1),
            p90_ms: quantile(&s, 0.9),
        })
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TimingRecord {
    pub fn median_ms(&self) -> Option<f64> {
        self.stats.map(|s| s.median_ms)
    }

    pub fn csv_row(&self) -> String {
        let [l, k, s] = self.dims;
        let (m, p10, p90) = match self.stats {
            Some(t) => (t.median_ms, t.p10_ms, t.p90_ms),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        format!("{},{},{l},{k},{s},{},{m},{p10},{p90}", self.variant, self.scale, self.tokens)
    }
}

/// Rough upper bound on the bytes held live by one inference pass.
fn estimated_bytes(cfg: &MaeConfig, tokens: usize) -> usize {
    let h = &cfg.hymba;
    let widest = (h.dim * h.ffn_mult).max(3 * h.attn_width() + 2 * h.dim).max(h.dim * h.ssm_state);
    8 * (tokens + h.n_meta) * widest * 8
}

/// Deterministic synthetic input of the case's dims.
fn bench_input(case: &BenchCase) -> Result<CsiTensor> {
    let [l, k, s] = case.dims;
    let mut rng = rng_for(0xBE7C, &[l as u64, k as u64, s as u64]);
    CsiTensor::from_tensor(DenseTensor::uniform(&[l, k, s, 2], -1.0, 1.0, &mut rng)?)
}

/// Time patchification plus the encoder over all tokens in inference mode.
pub fn bench_forward(variant: Variant, case: &BenchCase) -> Result<TimingRecord> {
    bench_forward_with_budget(variant, case, DEFAULT_MEMORY_BUDGET)
}

pub fn bench_forward_with_budget(variant: Variant, case: &BenchCase, budget: usize) -> Result<TimingRecord> {
    case.validate()?;
    let cfg = variant_config(variant, &case.scale, case.patch)?;
    let mut record = TimingRecord {
        variant,
        scale: case.scale.clone(),
        dims: case.dims,
        tokens: case.tokens(),
        stats: None,
        failure: None,
    };
    let need = estimated_bytes(&cfg, record.tokens);
    if need > budget {
        let reason = format!("estimated {need} bytes exceeds memory budget of {budget}");
        log::warn!("{variant} {:?}: {reason}", case.dims);
        record.failure = Some(reason);
        return Ok(record);
    }

    let model = MaeModel::new(cfg.clone(), 0)?;
    let params = model.params.bind_const();
    let x = bench_input(case)?;
    let grid = cfg.grid(case.dims)?;
    let plan = MaskPlan::from_mask(MaskStrategy::Random, 0.0, 0, &vec![false; grid.num_patches()])?;
    let run = || -> Result<()> {
        no_grad(|| {
            let (payloads, _) = slice_patches(x.tensor(), &grid)?;
            let out = encode(&cfg, &params, &payloads, &grid, &plan)?;
            std::hint::black_box(out.value().data()[0]);
            Ok(())
        })
    };

    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<Vec<f64>> {
        for _ in 0..case.warmup {
            run()?;
        }
        let mut samples = Vec::with_capacity(case.repetitions);
        for _ in 0..case.repetitions {
            let t0 = Instant::now();
            run()?;
            samples.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        Ok(samples)
    }));
    match outcome {
        Ok(Ok(samples)) => record.stats = Some(TimingStats::from_samples(&samples)?),
        Ok(Err(e)) => record.failure = Some(e.to_string()),
        Err(_) => record.failure = Some("forward pass panicked".to_string()),
    }
    if let Some(reason) = &record.failure {
        log::warn!("{variant} {:?} failed: {reason}", case.dims);
    }
    Ok(record)
}

pub fn write_timing_csv(records: &[TimingRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{TIMING_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn save_timing_csv(records: &[TimingRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_timing_csv(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// One row of the speedup table; `speedup = transformer / comhymba`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub scale: String,
    pub dims: [usize; 3],
    pub tokens: usize,
    pub comhymba_ms: f64,
    pub transformer_ms: f64,
    pub speedup: f64,
}

impl SpeedupRow {
    pub fn csv_row(&self) -> String {
        let [l, k, s] = self.dims;
        format!(
            "{},{l},{k},{s},{},{},{}",
            self.scale, self.comhymba_ms, self.transformer_ms, self.speedup
        )
    }
}

/// Pair up successful measurements by `(scale, dims)`, in first-seen order.
pub fn speedup_table(records: &[TimingRecord]) -> Vec<SpeedupRow> {
    let mut keys: Vec<(&str, [usize; 3], usize)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(s, d, _)| *s == r.scale && *d == r.dims) {
            keys.push((&r.scale, r.dims, r.tokens));
        }
    }
    let find = |v: Variant, scale: &str, dims: [usize; 3]| {
        records
            .iter()
            .find(|r| r.variant == v && r.scale == scale && r.dims == dims)
            .and_then(TimingRecord::median_ms)
    };
    let mut rows = Vec::new();
    for (scale, dims, tokens) in keys {
        match (find(Variant::ComHymba, scale, dims), find(Variant::Transformer, scale, dims)) {
            (Some(c), Some(t)) => rows.push(SpeedupRow {
                scale: scale.to_string(),
                dims,
                tokens,
                comhymba_ms: c,
                transformer_ms: t,
                speedup: t / c,
            }),
            _ => log::warn!("no complete comhymba/transformer pair for {scale} {dims:?}; row omitted"),
        }
    }
    rows
}

pub fn write_speedup_csv(rows: &[SpeedupRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{SPEEDUP_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn save_speedup_csv(rows: &[SpeedupRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_speedup_csv(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Least-squares slope of `y` against `x`.
fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Exponent `α` of `t ∝ L^α`, fitted on a log-log scale.
pub fn scaling_fit(lengths: &[usize], times_ms: &[f64]) -> Result<f64> {
    if lengths.len() != times_ms.len() {
        return Err(config_err("lengths and timings differ in count"));
    }
    if lengths.len() < 4 {
        return Err(config_err(format!("scaling fit needs at least 4 lengths, got {}", lengths.len())));
    }
    if lengths.contains(&0) {
        return Err(config_err("lengths must be positive"));
    }
    if let Some(t) = times_ms.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(config_err(format!("timings must be positive and finite, got {t}")));
    }
    let (lo, hi) = (lengths.iter().min().unwrap(), lengths.iter().max().unwrap());
    if *hi < 8 * lo {
        return Err(config_err(format!("lengths must span at least 8x, got {lo}..{hi}")));
    }
    let x: Vec<f64> = lengths.iter().map(|&l| (l as f64).ln()).collect();
    let y: Vec<f64> = times_ms.iter().map(|t| t.ln()).collect();
    Ok(ls_slope(&x, &y))
}

/// Growth of the speedup ratio per e-fold of token count.
pub fn speedup_trend(rows: &[SpeedupRow]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(config_err("speedup trend needs at least two rows"));
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.tokens as f64).ln()).collect();
    if x.iter().all(|v| *v == x[0]) {
        return Err(config_err("speedup trend needs distinct token counts"));
    }
    let y: Vec<f64> = rows.iter().map(|r| r.speedup).collect();
    Ok(ls_slope(&x, &y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(dims: [usize; 3], reps: usize, warm: usize) -> Result<BenchCase> {
        BenchCase::new("tiny", dims, [2, 2, 2], reps, warm)
    }

    #[test]
    fn case_validation() {
        assert!(case([4, 4, 4], 1, 2).is_err());
        assert!(case([4, 4, 4], 5, 1).is_err());
        assert!(case([0, 4, 4], 5, 2).is_err());
        let err = case([4, 5, 4], 5, 2).unwrap_err();
        assert!(err.to_string().contains("K = 5"));
        assert!(BenchCase::new("huge", [4, 4, 4], [2, 2, 2], 5, 2).is_err());
        assert_eq!(case([4, 8, 4], 5, 2).unwrap().tokens(), 16);
    }

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("16x32x64").unwrap(), [16, 32, 64]);
        assert!(parse_dims("16x32").is_err());
        assert!(parse_dims("ax2x2").is_err());
    }

    #[test]
    fn quantiles_of_known_samples() {
        let s = TimingStats::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.median_ms, s.p10_ms, s.p90_ms), (3.0, 1.4, 4.6));
    }

    #[test]
    fn variants_are_parameter_matched() {
        for scale in ["tiny", "small", "base", "large"] {
            let a = MaeModel::new(variant_config(Variant::ComHymba, scale, [2, 2, 2]).unwrap(), 0).unwrap();
            let b = MaeModel::new(variant_config(Variant::Transformer, scale, [2, 2, 2]).unwrap(), 0).unwrap();
            let r = b.num_parameters() as f64 / a.num_parameters() as f64;
            assert!((0.85..=1.15).contains(&r), "{scale}: {r}");
        }
    }

    #[test]
    fn memory_guard_records_failure() {
        let c = case([4, 4, 4], 5, 2).unwrap();
        let r = bench_forward_with_budget(Variant::Transformer, &c, 16).unwrap();
        assert!(r.stats.is_none());
        assert!(r.failure.as_deref().unwrap().contains("budget"));
        let mut csv = Vec::new();
        write_timing_csv(&[r], &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().ends_with("transformer,tiny,4,4,4,8,NaN,NaN,NaN\n"));
    }

    #[test]
    fn speedup_of_equal_timings_is_one() {
        let stats = TimingStats {
            median_ms: 2.0,
            p10_ms: 1.0,
            p90_ms: 3.0,
        };
        let rec = |v, dims: [usize; 3]| TimingRecord {
            variant: v,
            scale: "tiny".into(),
            dims,
            tokens: dims.iter().product::<usize>() / 8,
            stats: Some(stats),
            failure: None,
        };
        let records = vec![
            rec(Variant::ComHymba, [4, 4, 4]),
            rec(Variant::Transformer, [4, 4, 4]),
            rec(Variant::ComHymba, [8, 8, 8]),
        ];
        let rows = speedup_table(&records);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].speedup, 1.0);
        let mut csv = Vec::new();
        write_speedup_csv(&rows, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), format!("{SPEEDUP_CSV_HEADER}\ntiny,4,4,4,2,2,1\n"));
    }

    #[test]
    fn scaling_fit_recovers_constructed_exponents() {
        let ls = [256, 512, 1024, 2048, 4096];
        for alpha in [1.0, 2.0, 1.37] {
            let t: Vec<f64> = ls.iter().map(|&l| 0.003 * (l as f64).powf(alpha)).collect();
            assert!((scaling_fit(&ls, &t).unwrap() - alpha).abs() < 1e-10);
        }
        assert!(scaling_fit(&ls[..3], &[1.0; 3]).is_err());
        assert!(scaling_fit(&[256, 512, 1024, 1500], &[1.0; 4]).is_err());
        assert!(scaling_fit(&ls, &[1.0, 2.0, 0.0, 4.0, 5.0]).is_err());
    }

    #[test]
    fn speedup_trend_sign() {
        let row = |tokens: usize, speedup: f64| SpeedupRow {
            scale: "tiny".into(),
            dims: [tokens, 1, 1],
            tokens,
            comhymba_ms: 1.0,
            transformer_ms: speedup,
            speedup,
        };
        let rows = [row(256, 1.3), row(1024, 2.0), row(4096, 3.3)];
        let slope = speedup_trend(&rows).unwrap();
        // Oracle: slope of the two-point chord through the ends bounds this fit.
        assert!(slope > 0.0);
        assert!((slope - (3.3 - 1.3) / (4096f64 / 256.0).ln()).abs() < 0.1);
        assert!(speedup_trend(&rows[..1]).is_err());
    }
}
