//! Entropy-driven selection and reweighting of detail maps.
//!
//! Each map gets a normalized histogram entropy; low-entropy maps (concentrated
//! detail) score high. The top `M` maps are kept and scaled by
//! `(1 + alpha * importance)^gamma`.

use serde::{Deserialize, Serialize};

use crate::dfe::FeatureStack;
use crate::error::{arg_err, shape_err, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningConfig {
    pub bins: usize,
    /// Number of maps kept; `None` keeps `ceil(L / 2)`.
    pub m: Option<usize>,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            bins: 64,
            m: None,
            alpha: 1.0,
            gamma: 1.0,
        }
    }
}

impl PruningConfig {
    pub fn resolve_m(&self, l: usize) -> usize {
        self.m.unwrap_or(l.div_ceil(2))
    }
}

/// Per-map entropies and importances, the selected indices and their weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceProfile {
    pub h_norm_g: Vec<f64>,
    pub h_norm_s: Vec<f64>,
    pub combined: Vec<f64>,
    pub selected: Vec<usize>,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub bins: usize,
}

/// Histogram entropy of the min-max normalized map, divided by `ln(bins)`.
///
/// A constant map has entropy 0. Values are bucketed by
/// `min(floor(v * bins), bins - 1)` after normalization to `[0, 1]`.
pub fn normalized_entropy(map: &Tensor, bins: usize) -> f64 {
    assert!(bins >= 2, "need at least two bins");
    let data = map.data();
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in data {
        let u = (v - lo) / range;
        let b = ((u * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = data.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    (h / (bins as f64).ln()).clamp(0.0, 1.0)
}

/// `((1 - H(g_j)) + (1 - H(s_j))) / 2` from precomputed entropies.
pub fn combine(h_g: f64, h_s: f64) -> f64 {
    ((1.0 - h_g) + (1.0 - h_s)) / 2.0
}

pub fn combined_importance(g: &FeatureStack, s: &FeatureStack, bins: usize) -> Result<Vec<f64>> {
    g.check_aligned(s, "importance")?;
    Ok(g.maps()
        .iter()
        .zip(s.maps())
        .map(|(gm, sm)| combine(normalized_entropy(gm, bins), normalized_entropy(sm, bins)))
        .collect())
}

/// Indices of the `m` largest scores in increasing index order; ties go to
/// the lower index.
pub fn select_top_m(importance: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > importance.len() {
        return arg_err(format!(
            "cannot select {m} of {} feature maps",
            importance.len()
        ));
    }
    let mut order: Vec<usize> = (0..importance.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    let mut picked = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// `(1 + alpha * importance)^gamma`.
pub fn adaptive_weight(importance: f64, alpha: f64, gamma: f64) -> f64 {
    (1.0 + alpha * importance).powf(gamma)
}

impl ImportanceProfile {
    pub fn compute(g: &FeatureStack, s: &FeatureStack, cfg: &PruningConfig) -> Result<Self> {
        g.check_aligned(s, "importance")?;
        if cfg.bins < 2 {
            return arg_err(format!("bins must be at least 2, got {}", cfg.bins));
        }
        let h_norm_g: Vec<f64> = g.maps().iter().map(|m| normalized_entropy(m, cfg.bins)).collect();
        let h_norm_s: Vec<f64> = s.maps().iter().map(|m| normalized_entropy(m, cfg.bins)).collect();
        let combined: Vec<f64> = h_norm_g
            .iter()
            .zip(&h_norm_s)
            .map(|(&a, &b)| combine(a, b))
            .collect();
        let selected = select_top_m(&combined, cfg.resolve_m(g.len()))?;
        let weights = selected
            .iter()
            .map(|&i| adaptive_weight(combined[i], cfg.alpha, cfg.gamma))
            .collect();
        Ok(Self {
            h_norm_g,
            h_norm_s,
            combined,
            selected,
            weights,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            bins: cfg.bins,
        })
    }

    pub fn m(&self) -> usize {
        self.selected.len()
    }

    fn check_indices(&self, len: usize) -> Result<()> {
        if self.weights.len() != self.selected.len() {
            return arg_err("profile weights and selection differ in length");
        }
        if let Some(&bad) = self.selected.iter().find(|&&i| i >= len) {
            return arg_err(format!("selected index {bad} out of range for {len} maps"));
        }
        Ok(())
    }

    /// Selected maps of one stack, each scaled by its weight.
    pub fn weigh(&self, stack: &FeatureStack) -> Result<FeatureStack> {
        self.check_indices(stack.len())?;
        FeatureStack::new(
            self.selected
                .iter()
                .zip(&self.weights)
                .map(|(&i, &w)| stack.map(i).scale(w))
                .collect(),
        )
    }

    /// Pulls a gradient on the weighted selection back to the full stack.
    pub fn scatter_grad(&self, grad_weighted: &FeatureStack, len: usize) -> Result<FeatureStack> {
        self.check_indices(len)?;
        if grad_weighted.len() != self.selected.len() {
            return shape_err(format!(
                "gradient has {} maps, selection has {}",
                grad_weighted.len(),
                self.selected.len()
            ));
        }
        let (h, w) = grad_weighted.spatial();
        let mut out = FeatureStack::zeros(len, h, w);
        for (k, (&i, &wt)) in self.selected.iter().zip(&self.weights).enumerate() {
            out.maps_mut()[i] = grad_weighted.map(k).scale(wt);
        }
        Ok(out)
    }
}

/// `(G^w, S^w)`: the selected maps of both stacks, reweighted.
pub fn apply_weights(
    g: &FeatureStack,
    s: &FeatureStack,
    profile: &ImportanceProfile,
) -> Result<(FeatureStack, FeatureStack)> {
    g.check_aligned(s, "apply_weights")?;
    Ok((profile.weigh(g)?, profile.weigh(s)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn map(h: usize, w: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(1, h, w, data).unwrap()
    }

    /// 64 values, four per bucket of a 16-bin histogram.
    fn uniform_histogram_map() -> Tensor {
        let data = (0..64).map(|i| ((i / 4) as f64 + 0.5) / 16.0).collect();
        map(8, 8, data)
    }

    #[test]
    fn constant_map_entropy_zero() {
        assert_eq!(normalized_entropy(&Tensor::filled(1, 5, 5, 3.3), 64), 0.0);
    }

    #[test]
    fn uniform_histogram_entropy_one() {
        let h = normalized_entropy(&uniform_histogram_map(), 16);
        assert!((h - 1.0).abs() < 1e-12, "{h}");
    }

    #[test]
    fn entropy_matches_direct_shannon_oracle() {
        let mut rng = Rng::new(31);
        let m = Tensor::randn(1, 8, 8, &mut rng);
        let bins = 64;
        // Oracle: explicit bucket edges, counts, -sum p ln p.
        let lo = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0.0; bins];
        for &v in m.data() {
            let mut b = 0;
            while b + 1 < bins && v >= lo + (b + 1) as f64 * width {
                b += 1;
            }
            counts[b] += 1.0;
        }
        let oracle: f64 = counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p: f64 = c / 64.0;
                -p * p.ln()
            })
            .sum::<f64>()
            / (bins as f64).ln();
        assert!((normalized_entropy(&m, bins) - oracle).abs() < 1e-10);
    }

    #[test]
    fn combined_importance_cases() {
        let c = FeatureStack::new(vec![Tensor::filled(1, 4, 4, 1.0)]).unwrap();
        assert_eq!(combined_importance(&c, &c, 16).unwrap(), vec![1.0]);
        let u = FeatureStack::new(vec![uniform_histogram_map()]).unwrap();
        assert!(combined_importance(&u, &u, 16).unwrap()[0].abs() < 1e-12);
        assert!((combine(0.4, 0.6) - 0.5).abs() < 1e-15);
        let two = FeatureStack::new(vec![uniform_histogram_map(), uniform_histogram_map()]).unwrap();
        assert!(combined_importance(&u, &two, 16).is_err());
    }

    #[test]
    fn top_m_examples() {
        assert_eq!(select_top_m(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(select_top_m(&[0.3, 0.3, 0.3], 2).unwrap(), vec![0, 1]);
        assert!(select_top_m(&[0.3], 0).is_err());
        assert!(select_top_m(&[0.3], 2).is_err());
    }

    #[test]
    fn top_m_matches_full_sort_oracle() {
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let v: Vec<f64> = (0..12).map(|_| rng.unit()).collect();
            let mut pairs: Vec<(f64, usize)> = v.iter().cloned().zip(0..).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut oracle: Vec<usize> = pairs[..5].iter().map(|p| p.1).collect();
            oracle.sort();
            assert_eq!(select_top_m(&v, 5).unwrap(), oracle);
        }
    }

    #[test]
    fn weight_arithmetic() {
        assert_eq!(adaptive_weight(0.7, 0.0, 3.0), 1.0);
        assert!((adaptive_weight(0.5, 1.0, 1.0) - 1.5).abs() < 1e-15);
        assert!((adaptive_weight(1.0, 1.0, 2.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn apply_weights_selects_and_scales() {
        let mut rng = Rng::new(4);
        let g = FeatureStack::from_channels(&Tensor::randn(4, 3, 3, &mut rng));
        let s = FeatureStack::from_channels(&Tensor::randn(4, 3, 3, &mut rng));
        let cfg = PruningConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let p = ImportanceProfile::compute(&g, &s, &cfg).unwrap();
        assert_eq!(p.m(), 2);
        let (gw, sw) = apply_weights(&g, &s, &p).unwrap();
        for (k, &i) in p.selected.iter().enumerate() {
            assert_eq!(gw.map(k), g.map(i));
            assert_eq!(sw.map(k), s.map(i));
        }
        let mut bad = p.clone();
        bad.selected[1] = 9;
        assert!(apply_weights(&g, &s, &bad).is_err());
    }

    #[test]
    fn scatter_is_adjoint_of_weigh() {
        let mut rng = Rng::new(5);
        let g = FeatureStack::from_channels(&Tensor::randn(5, 4, 4, &mut rng));
        let p = ImportanceProfile::compute(&g, &g, &PruningConfig::default()).unwrap();
        let s = FeatureStack::from_channels(&Tensor::randn(5, 4, 4, &mut rng));
        let v = FeatureStack::from_channels(&Tensor::randn(p.m(), 4, 4, &mut rng));
        let lhs = p.weigh(&s).unwrap().dot(&v);
        let rhs = s.dot(&p.scatter_grad(&v, 5).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
