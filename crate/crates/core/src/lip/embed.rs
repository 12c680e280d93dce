use serde::{Deserialize, Serialize};

use super::PatchGrid;
use crate::error::{shape_err, Result};
use crate::numerics::{dot, leaky_grad, leaky_scalar, Rng, LEAKY_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub hidden: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            dim: 256,
            seed: 0,
        }
    }
}

/// Frozen two-layer MLP projecting flattened patches onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// `hidden x in_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `out_dim x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub struct EmbedCache {
    pre: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + dot(&w[r * n..(r + 1) * n], x))
        .collect()
}

fn affine_t(w: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += gr * wv;
        }
    }
    out
}

/// `z / |z|`, or the first basis vector when `z` vanishes.
fn normalize(z: &[f64]) -> Vec<f64> {
    let n = dot(z, z).sqrt();
    if n > 0.0 {
        z.iter().map(|v| v / n).collect()
    } else {
        let mut e = vec![0.0; z.len()];
        e[0] = 1.0;
        e
    }
}

impl EmbeddingHead {
    /// He-initialized weights, zero biases.
    pub fn new(in_dim: usize, cfg: &EmbeddingConfig) -> Self {
        let mut rng = Rng::new(cfg.seed);
        let s1 = (2.0 / in_dim as f64).sqrt();
        let s2 = (2.0 / cfg.hidden as f64).sqrt();
        let w1 = (0..cfg.hidden * in_dim).map(|_| s1 * rng.normal()).collect();
        let w2 = (0..cfg.dim * cfg.hidden).map(|_| s2 * rng.normal()).collect();
        Self {
            in_dim,
            hidden: cfg.hidden,
            out_dim: cfg.dim,
            w1,
            b1: vec![0.0; cfg.hidden],
            w2,
            b2: vec![0.0; cfg.dim],
        }
    }

    /// Head sized for square patches of side `patch_size`.
    pub fn for_patch(patch_size: usize, cfg: &EmbeddingConfig) -> Self {
        Self::new(patch_size * patch_size, cfg)
    }

    fn check(&self, grid: &PatchGrid) -> Result<()> {
        match grid.patches.first() {
            Some(p) if p.len() != self.in_dim => shape_err(format!(
                "patch length {} does not match embedding input {}",
                p.len(),
                self.in_dim
            )),
            _ => Ok(()),
        }
    }

    pub fn embed_one(&self, patch: &[f64]) -> Vec<f64> {
        let pre = affine(&self.w1, &self.b1, patch);
        let act: Vec<f64> = pre.iter().map(|&v| leaky_scalar(v, LEAKY_SLOPE)).collect();
        normalize(&affine(&self.w2, &self.b2, &act))
    }

    pub fn embed_cached(&self, grid: &PatchGrid) -> Result<(Vec<Vec<f64>>, EmbedCache)> {
        self.check(grid)?;
        let mut cache = EmbedCache {
            pre: Vec::with_capacity(grid.len()),
            raw: Vec::with_capacity(grid.len()),
            out: Vec::with_capacity(grid.len()),
        };
        for p in &grid.patches {
            let pre = affine(&self.w1, &self.b1, p);
            let act: Vec<f64> = pre.iter().map(|&v| leaky_scalar(v, LEAKY_SLOPE)).collect();
            let raw = affine(&self.w2, &self.b2, &act);
            cache.out.push(normalize(&raw));
            cache.pre.push(pre);
            cache.raw.push(raw);
        }
        Ok((cache.out.clone(), cache))
    }

    /// Patch gradients from gradients on the unit embeddings.
    pub fn backward(&self, cache: &EmbedCache, grad_out: &[Vec<f64>]) -> Vec<Vec<f64>> {
        grad_out
            .iter()
            .enumerate()
            .map(|(k, gy)| {
                let raw = &cache.raw[k];
                let y = &cache.out[k];
                let n = dot(raw, raw).sqrt();
                if n == 0.0 {
                    return vec![0.0; self.in_dim];
                }
                let proj = dot(y, gy);
                let gz: Vec<f64> = gy.iter().zip(y).map(|(g, yv)| (g - yv * proj) / n).collect();
                let mut gh = affine_t(&self.w2, self.out_dim, self.hidden, &gz);
                for (g, &p) in gh.iter_mut().zip(&cache.pre[k]) {
                    *g *= leaky_grad(p, LEAKY_SLOPE);
                }
                affine_t(&self.w1, self.hidden, self.in_dim, &gh)
            })
            .collect()
    }
}

/// Unit-length embeddings of every patch in `grid`.
pub fn embed(head: &EmbeddingHead, grid: &PatchGrid) -> Result<Vec<Vec<f64>>> {
    head.check(grid)?;
    Ok(grid.patches.iter().map(|p| head.embed_one(p)).collect())
}
