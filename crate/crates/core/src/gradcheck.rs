//! Finite-difference verification of every analytic gradient.
//!
//! Each check evaluates one loss at a seeded random point, compares its
//! analytic gradient with central differences and records the relative error.
//! Non-differentiated state (importance profile, transport plans) is frozen
//! at the analytic evaluation point.

use std::fmt;

use serde::Serialize;

use crate::csc::{corr_loss, gram_loss, mse_content};
use crate::dfe::{DfeConfig, DfeModel, FeatureStack};
use crate::error::Result;
use crate::lip::{cost_matrix, monce_loss, sinkhorn, EmbeddingConfig, LipConfig, MonceConfig};
use crate::mghf::{mghf_c, mghf_c_frozen, mghf_n, MghfConfig};
use crate::numerics::{finite_diff_grad, rel_error, Rng, Tensor};

pub const FD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub points: usize,
    pub per_loss_tol: f64,
    pub end_to_end_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 10,
            per_loss_tol: 1e-4,
            end_to_end_tol: 1e-3,
        }
    }
}

impl GradCheckConfig {
    /// Applies one tolerance to both tiers.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.per_loss_tol = tol;
        self.end_to_end_tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: &'static str,
    pub point: usize,
    pub rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub checks: Vec<GradCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Largest relative error per check name, in run order.
    pub fn worst_by_name(&self) -> Vec<(&'static str, f64, f64)> {
        let mut out: Vec<(&'static str, f64, f64)> = Vec::new();
        for c in &self.checks {
            match out.iter_mut().find(|(n, _, _)| *n == c.name) {
                Some(e) => e.1 = e.1.max(c.rel_error),
                None => out.push((c.name, c.rel_error, c.tol)),
            }
        }
        out
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>5} {:>12} {:>9}  status", "check", "point", "rel_error", "tol")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<12} {:>5} {:>12.3e} {:>9.1e}  {}",
                c.name,
                c.point,
                c.rel_error,
                c.tol,
                if c.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

const MAPS: usize = 4;
const SIDE: usize = 8;

fn random_stack(rng: &mut Rng) -> FeatureStack {
    FeatureStack::from_channels(&Tensor::randn(MAPS, SIDE, SIDE, rng))
}

/// Checks a stack loss `f(g, s)` with respect to `s`.
fn check_stack_loss(
    g: &FeatureStack,
    s: &FeatureStack,
    f: impl Fn(&FeatureStack, &FeatureStack) -> Result<(f64, FeatureStack)>,
) -> Result<f64> {
    let (_, grad) = f(g, s)?;
    let fd = finite_diff_grad(|t| Ok(f(g, &FeatureStack::from_channels(t))?.0), &s.to_channels(), FD_EPS)?;
    Ok(rel_error(grad.to_channels().data(), fd.data()))
}

fn unit_rows(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn check_monce(rng: &mut Rng) -> Result<f64> {
    let (n, d) = (2 + rng.below(7), 6);
    let s = unit_rows(n, d, rng);
    let g = unit_rows(n, d, rng);
    let cfg = MonceConfig::default();
    let plan = sinkhorn(&cost_matrix(&s, &g, cfg.beta_ot)?, &cfg)?;
    let (_, grad) = monce_loss(&s, &g, &plan, &cfg)?;
    let flat = Tensor::from_vec(1, n, d, s.concat())?;
    let fd = finite_diff_grad(
        |t| {
            let rows: Vec<Vec<f64>> = t.data().chunks(d).map(<[f64]>::to_vec).collect();
            Ok(monce_loss(&rows, &g, &plan, &cfg)?.0)
        },
        &flat,
        FD_EPS,
    )?;
    Ok(rel_error(&grad.concat(), fd.data()))
}

/// Comprehensive objective at desk scale: 3x8x8 images, 4 maps, 2x2 patches.
pub fn desk_mghf_config() -> MghfConfig {
    MghfConfig {
        lip: LipConfig {
            patch_size: 2,
            stride: 2,
            embedding: EmbeddingConfig {
                hidden: 16,
                dim: 16,
                seed: 0,
            },
            ..LipConfig::default()
        },
        ..MghfConfig::default()
    }
}

fn check_end_to_end(rng: &mut Rng) -> Result<f64> {
    let model = DfeModel::random(DfeConfig::with_channels(MAPS), 0.5, rng)?;
    let gt = Tensor::uniform(3, SIDE, SIDE, 0.0, 1.0, rng);
    let sr = Tensor::uniform(3, SIDE, SIDE, 0.0, 1.0, rng);
    let cfg = desk_mghf_config();
    let head = cfg.lip.head();
    let out = mghf_c(&model, &gt, &sr, &cfg, &head)?;
    let fd = finite_diff_grad(
        |t| Ok(mghf_c_frozen(&model, &gt, t, &cfg, &head, &out.frozen)?.report.mghf_c),
        &sr,
        FD_EPS,
    )?;
    Ok(rel_error(out.grad_x_sr.data(), fd.data()))
}

type Check = (&'static str, bool, fn(&mut Rng) -> Result<f64>);

const CHECKS: [Check; 6] = [
    ("mse_content", false, |r| check_stack_loss(&random_stack(r), &random_stack(r), mse_content)),
    ("corr_loss", false, |r| check_stack_loss(&random_stack(r), &random_stack(r), corr_loss)),
    ("gram_loss", false, |r| check_stack_loss(&random_stack(r), &random_stack(r), gram_loss)),
    ("mghf_n", false, |r| check_stack_loss(&random_stack(r), &random_stack(r), mghf_n)),
    ("monce_loss", false, check_monce),
    ("mghf_c", true, check_end_to_end),
];

/// Runs every check at `cfg.points` seeded points.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut checks = Vec::new();
    for (k, (name, end_to_end, f)) in CHECKS.iter().enumerate() {
        let tol = if *end_to_end { cfg.end_to_end_tol } else { cfg.per_loss_tol };
        for point in 0..cfg.points {
            let mut rng = Rng::with_stream(cfg.seed, (k as u64) << 32 | point as u64);
            let rel = f(&mut rng)?;
            checks.push(GradCheck {
                name,
                point,
                rel_error: rel,
                tol,
                passed: rel < tol,
            });
        }
    }
    Ok(GradCheckReport { config: *cfg, checks })
}
