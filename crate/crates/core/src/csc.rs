//! Content-style consistency: MSE content term, per-map Gram style term and
//! a Pearson-correlation regularizer, each with its gradient on the SR side.

use serde::{Deserialize, Serialize};

use crate::dfe::FeatureStack;
use crate::error::Result;
use crate::numerics::{dot, Tensor};

/// Standard deviations below this count as a constant map.
pub const DEGENERATE_STD: f64 = 1e-12;

/// How a single-channel map is turned into a Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GramMode {
    /// `A A^T / (H W)` with the map as an `H x W` matrix.
    #[default]
    Rows,
    /// The 1x1 Gram of the flattened map, `|a|^2 / (H W)`.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CscWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub gram_mode: GramMode,
}

impl Default for CscWeights {
    fn default() -> Self {
        Self {
            beta1: 0.1333,
            beta2: 1.0,
            beta3: 0.1333,
            gram_mode: GramMode::Rows,
        }
    }
}

/// Unweighted term values and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CscTerms {
    pub mse: f64,
    pub corr: f64,
    pub gram: f64,
    pub total: f64,
}

/// Mean of `(g - s)^2` over every map and pixel; gradient `2 (s - g) / count`.
pub fn mse_content(gw: &FeatureStack, sw: &FeatureStack) -> Result<(f64, FeatureStack)> {
    gw.check_aligned(sw, "mse")?;
    let count = gw.num_values() as f64;
    let mut sum = 0.0;
    let mut grad = sw.zeros_like();
    for ((g, s), d) in gw.maps().iter().zip(sw.maps()).zip(grad.maps_mut()) {
        for ((a, b), out) in g.data().iter().zip(s.data()).zip(d.data_mut()) {
            let diff = b - a;
            sum += diff * diff;
            *out = 2.0 * diff / count;
        }
    }
    Ok((sum / count, grad))
}

/// Row Gram matrix `A A^T / (H W)`, row-major `H x H`.
pub fn gram(map: &Tensor) -> Vec<f64> {
    let (h, w) = (map.height(), map.width());
    let a = map.data();
    let norm = (h * w) as f64;
    let mut out = vec![0.0; h * h];
    for i in 0..h {
        for j in i..h {
            let v = dot(&a[i * w..(i + 1) * w], &a[j * w..(j + 1) * w]) / norm;
            out[i * h + j] = v;
            out[j * h + i] = v;
        }
    }
    out
}

fn gram_with(map: &Tensor, mode: GramMode) -> Vec<f64> {
    match mode {
        GramMode::Rows => gram(map),
        GramMode::Scalar => vec![dot(map.data(), map.data()) / map.len() as f64],
    }
}

/// `(1/M) sum_i |Gram(g_i) - Gram(s_i)|_F^2` with row Grams.
pub fn gram_loss(gw: &FeatureStack, sw: &FeatureStack) -> Result<(f64, FeatureStack)> {
    gram_loss_with(gw, sw, GramMode::Rows)
}

pub fn gram_loss_with(gw: &FeatureStack, sw: &FeatureStack, mode: GramMode) -> Result<(f64, FeatureStack)> {
    gw.check_aligned(sw, "gram")?;
    let m = gw.len() as f64;
    let mut total = 0.0;
    let mut grad = sw.zeros_like();
    for ((g, s), out) in gw.maps().iter().zip(sw.maps()).zip(grad.maps_mut()) {
        let diff: Vec<f64> = gram_with(s, mode)
            .iter()
            .zip(gram_with(g, mode))
            .map(|(a, b)| a - b)
            .collect();
        total += dot(&diff, &diff);
        let norm = s.len() as f64;
        let scale = 4.0 / (norm * m);
        match mode {
            // d|D|^2/dS = 4 D S / (H W), D symmetric.
            GramMode::Rows => {
                let (h, w) = (s.height(), s.width());
                let sd = s.data();
                let od = out.data_mut();
                for i in 0..h {
                    for j in 0..h {
                        let dij = diff[i * h + j];
                        if dij == 0.0 {
                            continue;
                        }
                        for x in 0..w {
                            od[i * w + x] += scale * dij * sd[j * w + x];
                        }
                    }
                }
            }
            GramMode::Scalar => {
                for (o, v) in out.data_mut().iter_mut().zip(s.data()) {
                    *o = scale * diff[0] * v;
                }
            }
        }
    }
    Ok((total / m, grad))
}

fn centered(t: &Tensor) -> Vec<f64> {
    let mean = t.sum() / t.len() as f64;
    t.data().iter().map(|v| v - mean).collect()
}

/// Pearson correlation of two flattened maps; 0 if either is constant.
pub fn pearson(g: &Tensor, s: &Tensor) -> f64 {
    pearson_parts(g, s).0
}

/// `(r, d r / d s)`.
fn pearson_parts(g: &Tensor, s: &Tensor) -> (f64, Option<Vec<f64>>) {
    let n = g.len() as f64;
    let gc = centered(g);
    let sc = centered(s);
    let vg = dot(&gc, &gc);
    let vs = dot(&sc, &sc);
    if (vg / n).sqrt() < DEGENERATE_STD || (vs / n).sqrt() < DEGENERATE_STD {
        return (0.0, None);
    }
    // sqrt of the product keeps r exactly 1 for identical maps.
    let r = dot(&gc, &sc) / (vg * vs).sqrt();
    let ng = vg.sqrt();
    let ns = vs.sqrt();
    let grad = gc
        .iter()
        .zip(&sc)
        .map(|(a, b)| (a / ng - r * b / ns) / ns)
        .collect();
    (r, Some(grad))
}

/// `1 - (1/M) sum_i pearson(g_i, s_i)`.
pub fn corr_loss(gw: &FeatureStack, sw: &FeatureStack) -> Result<(f64, FeatureStack)> {
    gw.check_aligned(sw, "corr")?;
    let m = gw.len() as f64;
    let mut rsum = 0.0;
    let mut grad = sw.zeros_like();
    for ((g, s), out) in gw.maps().iter().zip(sw.maps()).zip(grad.maps_mut()) {
        let (r, dr) = pearson_parts(g, s);
        rsum += r;
        if let Some(dr) = dr {
            for (o, d) in out.data_mut().iter_mut().zip(dr) {
                *o = -d / m;
            }
        }
    }
    Ok((1.0 - rsum / m, grad))
}

/// `beta1 * mse + beta2 * corr + beta3 * gram` and its SR-side gradient.
pub fn csc_total(gw: &FeatureStack, sw: &FeatureStack, w: &CscWeights) -> Result<(CscTerms, FeatureStack)> {
    let (mse, g_mse) = mse_content(gw, sw)?;
    let (corr, g_corr) = corr_loss(gw, sw)?;
    let (gram, g_gram) = gram_loss_with(gw, sw, w.gram_mode)?;
    let total = w.beta1 * mse + w.beta2 * corr + w.beta3 * gram;
    let mut grad = g_mse.scale(w.beta1);
    grad.add_scaled(&g_corr, w.beta2);
    grad.add_scaled(&g_gram, w.beta3);
    Ok((
        CscTerms {
            mse,
            corr,
            gram,
            total,
        },
        grad,
    ))
}
