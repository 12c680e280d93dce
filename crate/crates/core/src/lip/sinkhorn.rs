use serde::Serialize;

use super::MonceConfig;
use crate::error::{arg_err, Result};
use crate::numerics::{dot, log_sum_exp};

/// Off-diagonal kernel entries below this switch Sinkhorn to log domain.
pub const LOG_DOMAIN_THRESHOLD: f64 = 1e-300;

/// Square cost matrix whose diagonal is excluded (stored as `+inf`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Builds a cost matrix from a dense `n x n` array, overwriting the diagonal with `+inf`.
    pub fn from_dense(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if n < 2 || data.len() != n * n {
            return arg_err(format!("need an n x n cost with n >= 2 (n = {n}, len = {})", data.len()));
        }
        for i in 0..n {
            data[i * n + i] = f64::INFINITY;
        }
        Ok(Self { n, data })
    }
}

/// Doubly-stochastic weights with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub n: usize,
    /// Row-major `n x n`.
    pub a: Vec<f64>,
    pub iterations_used: usize,
    /// Largest deviation of any row or column sum from 1.
    pub marginal_residual: f64,
    pub converged: bool,
    pub log_domain: bool,
}

impl TransportPlan {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    /// `1/(n-1)` off the diagonal.
    pub fn uniform(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        if n >= 2 {
            let v = 1.0 / (n - 1) as f64;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        a[i * n + j] = v;
                    }
                }
            }
        }
        Self {
            n,
            a,
            iterations_used: 0,
            marginal_residual: 0.0,
            converged: true,
            log_domain: false,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.a[i * self.n..(i + 1) * self.n].iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for i in 0..self.n {
            for (acc, v) in s.iter_mut().zip(&self.a[i * self.n..(i + 1) * self.n]) {
                *acc += v;
            }
        }
        s
    }

    fn measure_residual(&self) -> f64 {
        self.row_sums()
            .into_iter()
            .chain(self.col_sums())
            .fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }
}

/// `C_ij = exp(<anchor_i, candidate_j> / beta)` off the diagonal, `+inf` on it.
pub fn cost_matrix(anchors: &[Vec<f64>], candidates: &[Vec<f64>], beta: f64) -> Result<CostMatrix> {
    let n = anchors.len();
    if n < 2 || candidates.len() != n {
        return arg_err(format!(
            "cost matrix needs two equal sets of at least 2 embeddings (got {} and {})",
            n,
            candidates.len()
        ));
    }
    let mut data = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                data[i * n + j] = (dot(&anchors[i], &candidates[j]) / beta).exp();
            }
        }
    }
    Ok(CostMatrix { n, data })
}

/// Entropic transport plan with unit marginals on the off-diagonal support.
///
/// Works on the kernel `K_ij = exp(-C_ij / eps)` (`K_ii = 0`), alternating
/// row and column scalings until the largest marginal error drops below
/// `cfg.sinkhorn_tol`. Falls back to log-domain updates when the kernel
/// underflows. Non-convergence is reported in the plan, not as an error.
pub fn sinkhorn(cost: &CostMatrix, cfg: &MonceConfig) -> Result<TransportPlan> {
    let n = cost.n;
    if n < 2 {
        return arg_err("sinkhorn needs n >= 2");
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && !cost.at(i, j).is_finite() {
                return arg_err(format!("cost[{i}][{j}] is not finite"));
            }
        }
    }
    let eps = cfg.sinkhorn_epsilon;
    let mut kernel = vec![0.0; n * n];
    let mut underflow = false;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = (-cost.at(i, j) / eps).exp();
                underflow |= k < LOG_DOMAIN_THRESHOLD;
                kernel[i * n + j] = k;
            }
        }
    }
    if underflow {
        Ok(sinkhorn_log(cost, cfg))
    } else {
        sinkhorn_kernel(n, &kernel, cfg)
    }
}

/// Scaling iterations on an explicit kernel (diagonal must be zero).
pub fn sinkhorn_kernel(n: usize, kernel: &[f64], cfg: &MonceConfig) -> Result<TransportPlan> {
    if n < 2 || kernel.len() != n * n {
        return arg_err("kernel must be n x n with n >= 2");
    }
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut iters = 0;
    while iters < cfg.sinkhorn_max_iters {
        iters += 1;
        for i in 0..n {
            u[i] = 1.0 / dot(&kernel[i * n..(i + 1) * n], &v);
        }
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += kernel[i * n + j] * u[i];
            }
            v[j] = 1.0 / s;
        }
        // Columns are exact after the v-update; check the rows.
        let mut worst: f64 = 0.0;
        for i in 0..n {
            worst = worst.max((u[i] * dot(&kernel[i * n..(i + 1) * n], &v) - 1.0).abs());
        }
        if worst < cfg.sinkhorn_tol {
            break;
        }
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        let row = &kernel[i * n..(i + 1) * n];
        let z = dot(row, &v);
        for j in 0..n {
            a[i * n + j] = row[j] * v[j] / z;
        }
    }
    Ok(finish(n, a, iters, cfg, false))
}

fn sinkhorn_log(cost: &CostMatrix, cfg: &MonceConfig) -> TransportPlan {
    let n = cost.n;
    let eps = cfg.sinkhorn_epsilon;
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut buf = Vec::with_capacity(n);
    let mut iters = 0;
    let row_lse = |g: &[f64], i: usize, buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend((0..n).filter(|&j| j != i).map(|j| (g[j] - cost.at(i, j)) / eps));
        log_sum_exp(buf)
    };
    while iters < cfg.sinkhorn_max_iters {
        iters += 1;
        for i in 0..n {
            f[i] = -eps * row_lse(&g, i, &mut buf);
        }
        for j in 0..n {
            buf.clear();
            buf.extend((0..n).filter(|&i| i != j).map(|i| (f[i] - cost.at(i, j)) / eps));
            g[j] = -eps * log_sum_exp(&buf);
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let s: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((f[i] + g[j] - cost.at(i, j)) / eps).exp())
                .sum();
            worst = worst.max((s - 1.0).abs());
        }
        if worst < cfg.sinkhorn_tol {
            break;
        }
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        let lse = row_lse(&g, i, &mut buf);
        for j in 0..n {
            if j != i {
                a[i * n + j] = ((g[j] - cost.at(i, j)) / eps - lse).exp();
            }
        }
    }
    finish(n, a, iters, cfg, true)
}

fn finish(n: usize, a: Vec<f64>, iterations_used: usize, cfg: &MonceConfig, log_domain: bool) -> TransportPlan {
    let mut plan = TransportPlan {
        n,
        a,
        iterations_used,
        marginal_residual: 0.0,
        converged: false,
        log_domain,
    };
    plan.marginal_residual = plan.measure_residual();
    plan.converged = plan.marginal_residual < cfg.sinkhorn_tol.max(1e-12);
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_cost(n: usize, rng: &mut Rng) -> CostMatrix {
        CostMatrix::from_dense(n, (0..n * n).map(|_| rng.uniform(0.3, 3.0)).collect()).unwrap()
    }

    #[test]
    fn two_by_two_is_the_swap() {
        let cfg = MonceConfig::default();
        let cost = CostMatrix::from_dense(2, vec![0.0, 1.7, 0.4, 0.0]).unwrap();
        let plan = sinkhorn(&cost, &cfg).unwrap();
        assert_eq!(plan.a, vec![0.0, 1.0, 1.0, 0.0]);
        assert!(plan.converged);
    }

    #[test]
    fn equal_costs_give_uniform_plan() {
        let cfg = MonceConfig::default();
        for n in 2..7 {
            let cost = CostMatrix::from_dense(n, vec![1.3; n * n]).unwrap();
            let plan = sinkhorn(&cost, &cfg).unwrap();
            let u = TransportPlan::uniform(n);
            for (a, b) in plan.a.iter().zip(&u.a) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_costs_match_overconverged_reference() {
        let mut rng = Rng::new(17);
        let cfg = MonceConfig::default();
        let long = MonceConfig {
            sinkhorn_max_iters: 100_000,
            sinkhorn_tol: 0.0,
            ..cfg
        };
        for _ in 0..5 {
            let cost = random_cost(4, &mut rng);
            let plan = sinkhorn(&cost, &cfg).unwrap();
            assert!(plan.converged, "residual {}", plan.marginal_residual);
            for s in plan.row_sums().into_iter().chain(plan.col_sums()) {
                assert!((s - 1.0).abs() < 1e-6);
            }
            let reference = sinkhorn(&cost, &long).unwrap();
            for (a, b) in plan.a.iter().zip(&reference.a) {
                assert!((a - b).abs() < 1e-6);
            }
            for i in 0..4 {
                assert_eq!(plan.at(i, i), 0.0);
            }
        }
    }

    #[test]
    fn kernel_scaling_leaves_plan_unchanged() {
        let mut rng = Rng::new(4);
        let cfg = MonceConfig::default();
        let n = 5;
        let kernel: Vec<f64> = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { rng.uniform(0.1, 2.0) })
            .collect();
        let a = sinkhorn_kernel(n, &kernel, &cfg).unwrap();
        let scaled: Vec<f64> = kernel.iter().map(|k| 37.5 * k).collect();
        let b = sinkhorn_kernel(n, &scaled, &cfg).unwrap();
        for (x, y) in a.a.iter().zip(&b.a) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn log_domain_agrees_with_scaling() {
        let mut rng = Rng::new(5);
        let cfg = MonceConfig::default();
        let cost = random_cost(5, &mut rng);
        let plain = sinkhorn(&cost, &cfg).unwrap();
        assert!(!plain.log_domain);
        let logp = sinkhorn_log(&cost, &cfg);
        assert!(logp.converged);
        for (x, y) in plain.a.iter().zip(&logp.a) {
            assert!((x - y).abs() < 1e-6);
        }
        // Costs large enough to underflow the kernel.
        let small = random_cost(4, &mut rng);
        let big = CostMatrix::from_dense(4, small.data.iter().map(|c| 400.0 + c).collect()).unwrap();
        let p = sinkhorn(&big, &cfg).unwrap();
        assert!(p.log_domain && p.converged);
        assert!(p.a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cost_matrix_values() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = cost_matrix(&e, &e, 1.0).unwrap();
        assert_eq!(c.at(0, 1), 1.0);
        assert_eq!(c.at(0, 0), f64::INFINITY);
        let same = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let c = cost_matrix(&same, &same, 0.5).unwrap();
        assert!((c.at(0, 1) - 2f64.exp()).abs() < 1e-12);
        assert!(cost_matrix(&e[..1], &e[..1], 1.0).is_err());
    }

    #[test]
    fn unconverged_is_reported() {
        let mut rng = Rng::new(6);
        let cfg = MonceConfig {
            sinkhorn_max_iters: 1,
            ..MonceConfig::default()
        };
        let plan = sinkhorn(&random_cost(6, &mut rng), &cfg).unwrap();
        assert_eq!(plan.iterations_used, 1);
        assert!(!plan.converged);
        assert!(plan.marginal_residual > 0.0);
    }
}
