//! Sinkhorn transport plans, the modulated patch contrast and its reduction
//! to plain PatchNCE, and the per-map local information term.
//!
//! cargo run --example patch_contrast

use mghf::dfe::FeatureStack;
use mghf::lip::{cost_matrix, lip_loss, monce_loss, patchnce_loss, sinkhorn, EmbeddingConfig, LipConfig, MonceConfig, TransportPlan};
use mghf::numerics::{Rng, Tensor};

fn unit_rows(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn main() -> mghf::Result<()> {
    let mut rng = Rng::new(8);
    let cfg = MonceConfig::default();
    let s = unit_rows(5, 16, &mut rng);
    let g = unit_rows(5, 16, &mut rng);

    let plan = sinkhorn(&cost_matrix(&s, &g, cfg.beta_ot)?, &cfg)?;
    println!("plan after {} iterations (residual {:.1e}):", plan.iterations_used, plan.marginal_residual);
    for i in 0..plan.n {
        let row: Vec<String> = (0..plan.n).map(|j| format!("{:.3}", plan.at(i, j))).collect();
        println!("  [{}]", row.join(" "));
    }

    let (modulated, _) = monce_loss(&s, &g, &plan, &cfg)?;
    let (uniform, _) = monce_loss(&s, &g, &TransportPlan::uniform(5), &cfg)?;
    println!("modulated NCE {modulated:.6}");
    println!("uniform plan  {uniform:.6} = PatchNCE {:.6}", patchnce_loss(&s, &g, cfg.tau)?);

    let lip = LipConfig {
        patch_size: 4,
        stride: 4,
        embedding: EmbeddingConfig { hidden: 32, dim: 32, seed: 0 },
        ..LipConfig::default()
    };
    let head = lip.head();
    let gm = FeatureStack::from_channels(&Tensor::randn(3, 16, 16, &mut rng));
    let mut sm = gm.clone();
    sm.add_scaled(&FeatureStack::from_channels(&Tensor::randn(3, 16, 16, &mut rng)), 0.5);
    for (name, other) in [("identical", &gm), ("perturbed", &sm)] {
        let out = lip_loss(&gm, other, &head, &lip)?;
        println!("LIP {name}: {:.4} (per map {:?})", out.loss, out.per_map.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    Ok(())
}
