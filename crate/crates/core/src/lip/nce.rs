use super::{MonceConfig, TransportPlan};
use crate::error::{shape_err, Result};
use crate::numerics::{dot, log_sum_exp};

/// Contrastive loss where the negative `j` of anchor `i` carries weight
/// `weight(i, j)`:
///
/// `-sum_i log( e^{p_i/tau} / (e^{p_i/tau} + sum_{j != i} w_ij e^{<s_i, g_j>/tau}) )`
///
/// Returns the loss and its gradient with respect to the anchors `s`.
fn weighted_nce(
    s: &[Vec<f64>],
    g: &[Vec<f64>],
    tau: f64,
    weight: impl Fn(usize, usize) -> f64,
) -> (f64, Vec<Vec<f64>>) {
    let n = s.len();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    let mut index = Vec::with_capacity(n);
    for i in 0..n {
        logits.clear();
        index.clear();
        let pos = dot(&s[i], &g[i]) / tau;
        logits.push(pos);
        index.push(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = weight(i, j);
            if w > 0.0 {
                logits.push(w.ln() + dot(&s[i], &g[j]) / tau);
                index.push(j);
            }
        }
        let lse = log_sum_exp(&logits);
        loss += lse - pos;
        // d/ds_i = (sum_k pi_k g_k - g_i) / tau, pi the softmax over `logits`.
        let mut gi = g[i].iter().map(|v| -v / tau).collect::<Vec<_>>();
        for (&l, &j) in logits.iter().zip(&index) {
            let pi = (l - lse).exp() / tau;
            for (o, v) in gi.iter_mut().zip(&g[j]) {
                *o += pi * v;
            }
        }
        grads.push(gi);
    }
    (loss, grads)
}

fn check_sets(s: &[Vec<f64>], g: &[Vec<f64>]) -> Result<()> {
    if s.len() != g.len() {
        return shape_err(format!("{} anchors vs {} candidates", s.len(), g.len()));
    }
    if let Some(d) = s.first().map(Vec::len) {
        if s.iter().chain(g).any(|v| v.len() != d) {
            return shape_err("embeddings differ in dimension");
        }
    }
    Ok(())
}

/// Plain patch-level InfoNCE summed over anchors. A single patch has no
/// negatives and contributes 0.
pub fn patchnce_loss(s: &[Vec<f64>], g: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_sets(s, g)?;
    Ok(weighted_nce(s, g, tau, |_, _| 1.0).0)
}

/// Hard-negative modulated NCE: negatives weighted by `Q (N - 1) a_ij` from a
/// transport plan held constant under differentiation.
pub fn monce_loss(
    s: &[Vec<f64>],
    g: &[Vec<f64>],
    plan: &TransportPlan,
    cfg: &MonceConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_sets(s, g)?;
    if plan.n != s.len() {
        return shape_err(format!(
            "plan is {0}x{0} but there are {1} patches",
            plan.n,
            s.len()
        ));
    }
    let scale = cfg.q * (s.len().saturating_sub(1)) as f64;
    Ok(weighted_nce(s, g, cfg.tau, |i, j| scale * plan.at(i, j)))
}
