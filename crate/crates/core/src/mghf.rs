//! Top-level objectives.
//!
//! `mghf_n` is plain MSE between the detail maps of the two images.
//! `mghf_c` adds content-style consistency on the pruned, reweighted maps
//! and local information preservation on the full stacks:
//!
//! ```text
//! mghf_c = gamma1 * mghf_n + gamma2 * csc + gamma3 * lip
//! ```
//!
//! Only the SR side is differentiated. The importance profile and the
//! transport plans are treated as constants; [`Frozen`] captures them so the
//! exact differentiated objective can be re-evaluated.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::csc::{csc_total, CscTerms, CscWeights};
use crate::dfe::{dfe_extract, DfeModel, FeatureStack};
use crate::error::{shape_err, Result};
use crate::lip::{lip_loss, lip_loss_with_plans, EmbeddingHead, LipConfig, LipOutput, TransportPlan};
use crate::numerics::Tensor;
use crate::pruning::{ImportanceProfile, PruningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MghfConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub csc: CscWeights,
    pub lip: LipConfig,
    pub pruning: PruningConfig,
    pub lip_enabled: bool,
    /// Run LIP on the weighted pruned maps instead of the full stacks.
    pub lip_on_pruned: bool,
}

impl Default for MghfConfig {
    fn default() -> Self {
        Self {
            gamma1: 2.0,
            gamma2: 1.5,
            gamma3: 1e-3,
            csc: CscWeights::default(),
            lip: LipConfig::default(),
            pruning: PruningConfig::default(),
            lip_enabled: true,
            lip_on_pruned: false,
        }
    }
}

/// Mean squared error over all maps and pixels; gradient `2 (s - g) / count`.
pub fn mghf_n(g: &FeatureStack, s: &FeatureStack) -> Result<(f64, FeatureStack)> {
    crate::csc::mse_content(g, s)
}

/// `gamma1 * n + gamma2 * csc + gamma3 * lip`.
pub fn total_with_lambdas(mghf_n: f64, csc: f64, lip: f64, cfg: &MghfConfig) -> f64 {
    cfg.gamma1 * mghf_n + cfg.gamma2 * csc + cfg.gamma3 * lip
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornSummary {
    pub all_converged: bool,
    pub max_residual: f64,
    pub max_iterations: usize,
}

impl SinkhornSummary {
    fn of(plans: &[TransportPlan]) -> Self {
        Self {
            all_converged: plans.iter().all(|p| p.converged),
            max_residual: plans.iter().fold(0.0, |m, p| m.max(p.marginal_residual)),
            max_iterations: plans.iter().map(|p| p.iterations_used).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Durations {
    pub extract_ms: f64,
    pub pruning_ms: f64,
    pub csc_ms: f64,
    pub lip_ms: f64,
    pub backward_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub mghf_n: f64,
    pub csc: CscTerms,
    /// `None` when LIP is disabled.
    pub lip: Option<f64>,
    pub mghf_c: f64,
    pub profile: ImportanceProfile,
    pub sinkhorn: Option<SinkhornSummary>,
    pub config: MghfConfig,
    pub durations: Durations,
}

impl LossReport {
    /// Recomputes the total from the components.
    pub fn check_total(&self) -> bool {
        let expect = total_with_lambdas(self.mghf_n, self.csc.total, self.lip.unwrap_or(0.0), &self.config);
        (expect - self.mghf_c).abs() <= 1e-12 * expect.abs().max(1.0)
    }
}

/// Non-differentiated state of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frozen {
    pub profile: ImportanceProfile,
    pub plans: Option<Vec<TransportPlan>>,
}

#[derive(Debug, Clone)]
pub struct MghfOutput {
    pub report: LossReport,
    pub grad_x_sr: Tensor,
    pub frozen: Frozen,
}

/// Feature-level result of the comprehensive objective.
#[derive(Debug, Clone)]
pub struct FeatureLoss {
    pub mghf_n: f64,
    pub csc: CscTerms,
    pub lip: Option<LipOutput>,
    pub total: f64,
    pub grad_s: FeatureStack,
    pub profile: ImportanceProfile,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// The comprehensive objective on precomputed stacks.
pub fn mghf_c_features(
    g: &FeatureStack,
    s: &FeatureStack,
    cfg: &MghfConfig,
    head: &EmbeddingHead,
    frozen: Option<&Frozen>,
) -> Result<FeatureLoss> {
    mghf_c_timed(g, s, cfg, head, frozen, &mut Durations::default())
}

fn mghf_c_timed(
    g: &FeatureStack,
    s: &FeatureStack,
    cfg: &MghfConfig,
    head: &EmbeddingHead,
    frozen: Option<&Frozen>,
    durations: &mut Durations,
) -> Result<FeatureLoss> {
    g.check_aligned(s, "mghf")?;
    let t = Instant::now();
    let profile = match frozen {
        Some(f) => f.profile.clone(),
        None => ImportanceProfile::compute(g, s, &cfg.pruning)?,
    };
    let gw = profile.weigh(g)?;
    let sw = profile.weigh(s)?;
    durations.pruning_ms = ms(t);

    let (n, grad_n) = mghf_n(g, s)?;
    let t = Instant::now();
    let (csc, grad_csc_w) = csc_total(&gw, &sw, &cfg.csc)?;
    let grad_csc = profile.scatter_grad(&grad_csc_w, s.len())?;
    durations.csc_ms = ms(t);

    let mut grad_s = grad_n.scale(cfg.gamma1);
    grad_s.add_scaled(&grad_csc, cfg.gamma2);

    let t = Instant::now();
    let lip = if cfg.lip_enabled {
        let (lg, ls) = if cfg.lip_on_pruned { (&gw, &sw) } else { (g, s) };
        let out = match frozen.and_then(|f| f.plans.as_deref()) {
            Some(plans) => lip_loss_with_plans(lg, ls, head, &cfg.lip, plans)?,
            None => lip_loss(lg, ls, head, &cfg.lip)?,
        };
        let grad_lip = if cfg.lip_on_pruned {
            profile.scatter_grad(&out.grad_s, s.len())?
        } else {
            out.grad_s.clone()
        };
        grad_s.add_scaled(&grad_lip, cfg.gamma3);
        Some(out)
    } else {
        None
    };
    durations.lip_ms = ms(t);

    let total = total_with_lambdas(n, csc.total, lip.as_ref().map_or(0.0, |l| l.loss), cfg);
    Ok(FeatureLoss {
        mghf_n: n,
        csc,
        lip,
        total,
        grad_s,
        profile,
    })
}

fn check_pair(x_gt: &Tensor, x_sr: &Tensor) -> Result<()> {
    if x_gt.channels() != 3 || x_sr.channels() != 3 {
        return shape_err(format!(
            "images must have 3 channels (got {} and {})",
            x_gt.channels(),
            x_sr.channels()
        ));
    }
    if !x_gt.same_shape(x_sr) {
        return shape_err(format!(
            "image sizes differ: {}x{} vs {}x{}",
            x_gt.height(),
            x_gt.width(),
            x_sr.height(),
            x_sr.width()
        ));
    }
    Ok(())
}

/// MGHF-n between two images and its gradient with respect to `x_sr`.
pub fn mghf_n_images(model: &DfeModel, x_gt: &Tensor, x_sr: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(x_gt, x_sr)?;
    let g = dfe_extract(model, x_gt)?;
    let (z, cache) = model.embed_cached(x_sr)?;
    let s = FeatureStack::from_channels(&z);
    let (loss, grad_s) = mghf_n(&g, &s)?;
    Ok((loss, model.backward(&cache, &grad_s.to_channels(), None)))
}

/// MGHF-c between two images, with its gradient with respect to `x_sr`.
pub fn mghf_c(
    model: &DfeModel,
    x_gt: &Tensor,
    x_sr: &Tensor,
    cfg: &MghfConfig,
    head: &EmbeddingHead,
) -> Result<MghfOutput> {
    evaluate(model, x_gt, x_sr, cfg, head, None)
}

/// MGHF-c with the importance profile and plans pinned to `frozen`.
pub fn mghf_c_frozen(
    model: &DfeModel,
    x_gt: &Tensor,
    x_sr: &Tensor,
    cfg: &MghfConfig,
    head: &EmbeddingHead,
    frozen: &Frozen,
) -> Result<MghfOutput> {
    evaluate(model, x_gt, x_sr, cfg, head, Some(frozen))
}

fn evaluate(
    model: &DfeModel,
    x_gt: &Tensor,
    x_sr: &Tensor,
    cfg: &MghfConfig,
    head: &EmbeddingHead,
    frozen: Option<&Frozen>,
) -> Result<MghfOutput> {
    check_pair(x_gt, x_sr)?;
    let start = Instant::now();
    let mut durations = Durations::default();
    let t = Instant::now();
    let g = dfe_extract(model, x_gt)?;
    let (z, cache) = model.embed_cached(x_sr)?;
    let s = FeatureStack::from_channels(&z);
    durations.extract_ms = ms(t);

    let fl = mghf_c_timed(&g, &s, cfg, head, frozen, &mut durations)?;

    let t = Instant::now();
    let grad_x_sr = model.backward(&cache, &fl.grad_s.to_channels(), None);
    durations.backward_ms = ms(t);
    durations.total_ms = ms(start);

    let plans = fl.lip.as_ref().map(|l| l.plans.clone());
    let report = LossReport {
        mghf_n: fl.mghf_n,
        csc: fl.csc,
        lip: fl.lip.as_ref().map(|l| l.loss),
        mghf_c: fl.total,
        profile: fl.profile.clone(),
        sinkhorn: plans.as_deref().map(SinkhornSummary::of),
        config: *cfg,
        durations,
    };
    Ok(MghfOutput {
        report,
        grad_x_sr,
        frozen: Frozen {
            profile: fl.profile,
            plans,
        },
    })
}
