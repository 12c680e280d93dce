//! Local information preservation.
//!
//! Each detail map is cut into patches, the patches are embedded on the unit
//! sphere, a Sinkhorn transport plan over SR-anchor / GT-candidate costs
//! reweights the negatives, and the modulated contrastive loss is averaged
//! over maps.

mod embed;
mod nce;
mod patches;
mod sinkhorn;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embed::{embed, EmbedCache, EmbeddingConfig, EmbeddingHead};
pub use nce::{monce_loss, patchnce_loss};
pub use patches::{extract_patches, grid_extent, PatchGrid};
pub use sinkhorn::{cost_matrix, sinkhorn, sinkhorn_kernel, CostMatrix, TransportPlan, LOG_DOMAIN_THRESHOLD};

use crate::dfe::FeatureStack;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonceConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Temperature of the transport cost.
    pub beta_ot: f64,
    /// Weight of the negative terms.
    pub q: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for MonceConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            beta_ot: 1.0,
            q: 1.0,
            sinkhorn_epsilon: 0.5,
            sinkhorn_max_iters: 500,
            sinkhorn_tol: 1e-6,
        }
    }
}

impl MonceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("beta_ot", self.beta_ot),
            ("sinkhorn_epsilon", self.sinkhorn_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.q >= 0.0) {
            return Err(Error::Argument(format!("q must be non-negative, got {}", self.q)));
        }
        if self.sinkhorn_max_iters == 0 {
            return Err(Error::Argument("sinkhorn_max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub embedding: EmbeddingConfig,
    pub monce: MonceConfig,
}

impl Default for LipConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            stride: 16,
            embedding: EmbeddingConfig::default(),
            monce: MonceConfig::default(),
        }
    }
}

impl LipConfig {
    pub fn head(&self) -> EmbeddingHead {
        EmbeddingHead::for_patch(self.patch_size, &self.embedding)
    }

    /// Patches per map for an `h x w` map.
    pub fn patch_count(&self, h: usize, w: usize) -> usize {
        if self.stride == 0 {
            return 0;
        }
        grid_extent(h, self.patch_size, self.stride) * grid_extent(w, self.patch_size, self.stride)
    }
}

/// Loss, SR-side gradient and the per-map plans that produced them.
#[derive(Debug, Clone)]
pub struct LipOutput {
    pub loss: f64,
    pub per_map: Vec<f64>,
    pub grad_s: FeatureStack,
    pub plans: Vec<TransportPlan>,
}

impl LipOutput {
    pub fn all_converged(&self) -> bool {
        self.plans.iter().all(|p| p.converged)
    }

    pub fn max_residual(&self) -> f64 {
        self.plans.iter().fold(0.0, |m, p| m.max(p.marginal_residual))
    }
}

/// Mean over maps of the modulated patch-contrastive loss between `g` and `s`.
///
/// Plans are recomputed from the current embeddings and held constant for the
/// gradient, as is the whole GT side.
pub fn lip_loss(g: &FeatureStack, s: &FeatureStack, head: &EmbeddingHead, cfg: &LipConfig) -> Result<LipOutput> {
    lip_inner(g, s, head, cfg, None)
}

/// As [`lip_loss`] but with fixed, previously computed plans.
pub fn lip_loss_with_plans(
    g: &FeatureStack,
    s: &FeatureStack,
    head: &EmbeddingHead,
    cfg: &LipConfig,
    plans: &[TransportPlan],
) -> Result<LipOutput> {
    if plans.len() != g.len() {
        return shape_err(format!("{} plans for {} maps", plans.len(), g.len()));
    }
    lip_inner(g, s, head, cfg, Some(plans))
}

struct MapTerm {
    loss: f64,
    grad: crate::numerics::Tensor,
    plan: TransportPlan,
}

fn lip_inner(
    g: &FeatureStack,
    s: &FeatureStack,
    head: &EmbeddingHead,
    cfg: &LipConfig,
    plans: Option<&[TransportPlan]>,
) -> Result<LipOutput> {
    g.check_aligned(s, "lip")?;
    cfg.monce.validate()?;
    let (h, w) = g.spatial();
    let n_k = cfg.patch_count(h, w);
    if n_k < 2 {
        return Err(Error::Argument(format!(
            "map 0 ({h}x{w}) yields {n_k} patches of size {} at stride {}; at least 2 are needed \
             (enlarge the image or shrink patch_size/stride)",
            cfg.patch_size, cfg.stride
        )));
    }
    let terms: Vec<MapTerm> = (0..g.len())
        .into_par_iter()
        .map(|k| -> Result<MapTerm> {
            let gp = extract_patches(g.map(k), cfg.patch_size, cfg.stride)?;
            let sp = extract_patches(s.map(k), cfg.patch_size, cfg.stride)?;
            let g_emb = embed(head, &gp)?;
            let (s_emb, cache) = head.embed_cached(&sp)?;
            let plan = match plans {
                Some(p) => p[k].clone(),
                None => sinkhorn(&cost_matrix(&s_emb, &g_emb, cfg.monce.beta_ot)?, &cfg.monce)?,
            };
            let (loss, grad_emb) = monce_loss(&s_emb, &g_emb, &plan, &cfg.monce)?;
            let grad_patches = head.backward(&cache, &grad_emb);
            Ok(MapTerm {
                loss,
                grad: sp.scatter(&grad_patches, h, w),
                plan,
            })
        })
        .collect::<Result<_>>()?;

    let l = g.len() as f64;
    let mut total = 0.0;
    let mut per_map = Vec::with_capacity(terms.len());
    let mut grads = Vec::with_capacity(terms.len());
    let mut out_plans = Vec::with_capacity(terms.len());
    for t in terms {
        total += t.loss;
        per_map.push(t.loss);
        grads.push(t.grad.scale(1.0 / l));
        out_plans.push(t.plan);
    }
    Ok(LipOutput {
        loss: total / l,
        per_map,
        grad_s: FeatureStack::new(grads)?,
        plans: out_plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, rel_error, Rng, Tensor};

    fn toy_cfg() -> LipConfig {
        LipConfig {
            patch_size: 2,
            stride: 2,
            embedding: EmbeddingConfig {
                hidden: 8,
                dim: 6,
                seed: 11,
            },
            monce: MonceConfig::default(),
        }
    }

    #[test]
    fn identical_maps_reduce_to_single_map_value() {
        let mut rng = Rng::new(1);
        let cfg = toy_cfg();
        let head = cfg.head();
        let m = Tensor::randn(1, 4, 4, &mut rng);
        let one = FeatureStack::new(vec![m.clone()]).unwrap();
        let three = FeatureStack::new(vec![m.clone(), m.clone(), m]).unwrap();
        let a = lip_loss(&one, &one, &head, &cfg).unwrap().loss;
        let b = lip_loss(&three, &three, &head, &cfg).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn equal_stacks_match_composed_oracle() {
        let mut rng = Rng::new(2);
        let cfg = toy_cfg();
        let head = cfg.head();
        let m = Tensor::randn(1, 4, 4, &mut rng);
        let st = FeatureStack::new(vec![m.clone()]).unwrap();
        let out = lip_loss(&st, &st, &head, &cfg).unwrap();
        let grid = extract_patches(&m, 2, 2).unwrap();
        let e = embed(&head, &grid).unwrap();
        let plan = sinkhorn(&cost_matrix(&e, &e, 1.0).unwrap(), &cfg.monce).unwrap();
        let oracle = monce_loss(&e, &e, &plan, &cfg.monce).unwrap().0;
        assert!((out.loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn too_few_patches_is_an_error() {
        let cfg = toy_cfg();
        let head = cfg.head();
        let st = FeatureStack::new(vec![Tensor::zeros(1, 2, 3)]).unwrap();
        let err = lip_loss(&st, &st, &head, &cfg).unwrap_err().to_string();
        assert!(err.contains("enlarge"), "{err}");
    }

    #[test]
    fn gradient_matches_fd_with_frozen_plans() {
        let mut rng = Rng::new(3);
        let cfg = toy_cfg();
        let head = cfg.head();
        let g = FeatureStack::from_channels(&Tensor::randn(1, 4, 4, &mut rng));
        let s = FeatureStack::from_channels(&Tensor::randn(1, 4, 4, &mut rng));
        let out = lip_loss(&g, &s, &head, &cfg).unwrap();
        let fd = finite_diff_grad(
            |t| Ok(lip_loss_with_plans(&g, &FeatureStack::from_channels(t), &head, &cfg, &out.plans)?.loss),
            &s.to_channels(),
            1e-6,
        )
        .unwrap();
        assert!(rel_error(out.grad_s.to_channels().data(), fd.data()) < 1e-3);
    }
}
