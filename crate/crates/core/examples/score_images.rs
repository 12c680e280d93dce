//! Scores a degraded image against its ground truth with both objectives,
//! then runs a few gradient steps on the SR image to show the losses fall.
//!
//! cargo run --release --example score_images

use mghf::dfe::{DfeConfig, DfeModel};
use mghf::lip::{EmbeddingConfig, LipConfig};
use mghf::mghf::{mghf_c, mghf_n_images, MghfConfig};
use mghf::numerics::{Rng, Tensor};

fn main() -> mghf::Result<()> {
    let mut rng = Rng::new(12);
    let model = DfeModel::random(DfeConfig::with_channels(8), 0.5, &mut rng)?;
    let gt = Tensor::uniform(3, 32, 32, 0.0, 1.0, &mut rng);
    // A blurred copy stands in for an SR output.
    let mut sr = gt.clone();
    for c in 0..3 {
        for y in 0..32 {
            for x in 1..31 {
                *sr.at_mut(c, y, x) = (gt.at(c, y, x - 1) + gt.at(c, y, x) + gt.at(c, y, x + 1)) / 3.0;
            }
        }
    }

    let cfg = MghfConfig {
        lip: LipConfig {
            patch_size: 8,
            stride: 8,
            embedding: EmbeddingConfig { hidden: 64, dim: 64, seed: 0 },
            ..LipConfig::default()
        },
        ..MghfConfig::default()
    };
    let head = cfg.lip.head();

    let (n, _) = mghf_n_images(&model, &gt, &sr)?;
    println!("MGHF-n {n:.6}");
    let lr = 0.5;
    for step in 0..6 {
        let out = mghf_c(&model, &gt, &sr, &cfg, &head)?;
        let r = &out.report;
        println!(
            "step {step}: mghf_c {:.6}  (n {:.6}, csc {:.6}, lip {:.4}, kept maps {:?})",
            r.mghf_c,
            r.mghf_n,
            r.csc.total,
            r.lip.unwrap_or(0.0),
            r.profile.selected
        );
        sr.add_scaled(&out.grad_x_sr, -lr);
    }
    Ok(())
}
