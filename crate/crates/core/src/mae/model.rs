use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::hymba::{prepend_meta, HymbaConfig, StackKind};
use crate::masking::MaskPlan;
use crate::params::{Bound, ParamStore};
use crate::patch::{embed, rope_rows, PatchCoord, PatchGrid};
use crate::rng::rng_for;
use crate::tensor::{no_grad, DenseTensor, Var};

/// Architecture of the masked autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaeConfig {
    pub patch_l: usize,
    pub patch_k: usize,
    pub patch_s: usize,
    /// Block type of the encoder; the attention variant is the baseline.
    pub encoder_kind: StackKind,
    #[serde(flatten)]
    pub hymba: HymbaConfig,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            patch_l: 2,
            patch_k: 2,
            patch_s: 2,
            encoder_kind: StackKind::Hybrid,
            hymba: HymbaConfig::default(),
        }
    }
}

impl MaeConfig {
    pub fn toy() -> Self {
        Self {
            patch_l: 1,
            patch_k: 1,
            patch_s: 1,
            encoder_kind: StackKind::Hybrid,
            hymba: HymbaConfig::toy(),
        }
    }

    pub fn patch(&self) -> [usize; 3] {
        [self.patch_l, self.patch_k, self.patch_s]
    }

    pub fn payload_dim(&self) -> usize {
        self.patch().iter().product::<usize>() * 2
    }

    pub fn grid(&self, extent: [usize; 3]) -> Result<PatchGrid> {
        PatchGrid::new(extent, self.patch())
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch().contains(&0) {
            return Err(config_err("patch sizes must be positive"));
        }
        self.hymba.validate()
    }
}

/// Parameters plus architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct MaeModel {
    pub config: MaeConfig,
    pub params: ParamStore,
}

impl MaeModel {
    /// Freshly initialised model; identical for identical `(config, seed)`.
    pub fn new(config: MaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0x1417]);
        let h = &config.hymba;
        let (e, d, dd) = (config.payload_dim(), h.dim, h.dec_dim);
        let mut p = ParamStore::new();
        p.linear("embed.w".into(), e, d, &mut rng)?;
        p.fill("embed.b".into(), &[d], 0.0)?;
        if h.n_meta > 0 {
            p.uniform("enc.meta".into(), &[h.n_meta, d], 0.1, &mut rng)?;
        }
        h.encoder_stack(config.encoder_kind).init(&mut p, "enc", &mut rng)?;
        if h.depth > 0 {
            p.fill("enc.norm_out".into(), &[d], 1.0)?;
        }
        p.linear("dec.adapter.w".into(), d, dd, &mut rng)?;
        p.fill("dec.adapter.b".into(), &[dd], 0.0)?;
        p.uniform("dec.mask_token".into(), &[1, dd], 0.1, &mut rng)?;
        h.decoder_stack().init(&mut p, "dec", &mut rng)?;
        if h.dec_depth > 0 {
            p.fill("dec.norm_out".into(), &[dd], 1.0)?;
        }
        p.linear("dec.head.w".into(), dd, e, &mut rng)?;
        p.fill("dec.head.b".into(), &[e], 0.0)?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: MaeConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    lhs: got.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = params.names().find(|n| !reference.params.contains(n)) {
            return Err(config_err(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Reconstruct all `N_p` patch payloads from the observed ones.
    pub fn forward(&self, p: &Bound, payloads: &DenseTensor, grid: &PatchGrid, plan: &MaskPlan) -> Result<Var> {
        forward(&self.config, p, payloads, grid, plan)
    }

    /// Inference-mode reconstruction.
    pub fn reconstruct(&self, payloads: &DenseTensor, grid: &PatchGrid, plan: &MaskPlan) -> Result<DenseTensor> {
        let p = self.params.bind_const();
        no_grad(|| Ok(self.forward(&p, payloads, grid, plan)?.value().clone()))
    }
}

/// Encoder outputs for the observed tokens, meta prefix stripped: `[|Ω_obs|, D]`.
pub fn encode(cfg: &MaeConfig, p: &Bound, payloads: &DenseTensor, grid: &PatchGrid, plan: &MaskPlan) -> Result<Var> {
    let h = &cfg.hymba;
    if payloads.shape() != [grid.num_patches(), grid.payload_dim()] || plan.num_patches() != grid.num_patches() {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: payloads.shape().to_vec(),
            rhs: vec![grid.num_patches(), grid.payload_dim()],
        });
    }
    let obs = plan.observed();
    let coords: Vec<PatchCoord> = obs.iter().map(|&i| grid.coord(i)).collect();
    let x = Var::constant(payloads.select_rows(&obs)?);
    let tokens = embed(&x, p.get("embed.w")?, p.get("embed.b")?)?;
    let tokens = rope_rows(&tokens, &coords, 0, h.dim)?;
    let meta = if h.n_meta > 0 { Some(p.get("enc.meta")?) } else { None };
    let seq = prepend_meta(&tokens, meta)?;
    let mut out = h
        .encoder_stack(cfg.encoder_kind)
        .forward(p, "enc", &seq, h.n_meta, &coords)?;
    if h.depth > 0 {
        out = out.rms_norm(p.get("enc.norm_out")?, h.norm_eps)?;
    }
    if h.n_meta > 0 {
        out = out.slice(0, h.n_meta, h.n_meta + obs.len())?;
    }
    Ok(out)
}

/// Scatter encoded rows back to their grid positions and fill the masked
/// slots with the shared mask token.
pub fn realign(encoded: &Var, mask_token: &Var, plan: &MaskPlan) -> Result<Var> {
    let obs = plan.observed();
    let es = encoded.shape();
    if es.len() != 2 || es[0] != obs.len() {
        return Err(Error::ShapeMismatch {
            op: "realign",
            lhs: es.to_vec(),
            rhs: vec![obs.len()],
        });
    }
    if mask_token.shape() != [1, es[1]] {
        return Err(Error::ShapeMismatch {
            op: "realign",
            lhs: mask_token.shape().to_vec(),
            rhs: vec![1, es[1]],
        });
    }
    if plan.num_masked() == 0 {
        return Ok(encoded.clone());
    }
    // Rows 0..|obs| hold the encoded tokens in ascending index order and the
    // final row holds the mask token.
    let stacked = Var::concat(&[encoded, mask_token], 0)?;
    let mut next_obs = 0;
    let order: Vec<usize> = (0..plan.num_patches())
        .map(|i| {
            if plan.is_masked(i) {
                obs.len()
            } else {
                next_obs += 1;
                next_obs - 1
            }
        })
        .collect();
    stacked.index_select(&order)
}

/// Decoder stack and linear head on a realigned `[N_p, D_dec]` sequence.
pub fn decode(cfg: &MaeConfig, p: &Bound, full: &Var, grid: &PatchGrid) -> Result<Var> {
    let h = &cfg.hymba;
    let coords = grid.coords();
    let x = rope_rows(full, &coords, 0, h.dec_dim)?;
    let mut y = h.decoder_stack().forward(p, "dec", &x, 0, &coords)?;
    if h.dec_depth > 0 {
        y = y.rms_norm(p.get("dec.norm_out")?, h.norm_eps)?;
    }
    y.matmul(p.get("dec.head.w")?)?.add(p.get("dec.head.b")?)
}

pub fn forward(cfg: &MaeConfig, p: &Bound, payloads: &DenseTensor, grid: &PatchGrid, plan: &MaskPlan) -> Result<Var> {
    let enc = encode(cfg, p, payloads, grid, plan)?;
    let adapted = enc.matmul(p.get("dec.adapter.w")?)?.add(p.get("dec.adapter.b")?)?;
    let full = realign(&adapted, p.get("dec.mask_token")?, plan)?;
    decode(cfg, p, &full, grid)
}
