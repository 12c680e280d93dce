//! Entropy-based map importance, top-M selection and adaptive reweighting.
//!
//! cargo run --example entropy_pruning

use mghf::dfe::{dfe_extract, DfeConfig, DfeModel};
use mghf::numerics::{Rng, Tensor};
use mghf::pruning::{normalized_entropy, ImportanceProfile, PruningConfig};

fn main() -> mghf::Result<()> {
    let flat = Tensor::filled(1, 8, 8, 0.3);
    let ramp = Tensor::from_vec(1, 8, 8, (0..64).map(|i| i as f64).collect())?;
    println!("constant map entropy {:.3}, ramp entropy {:.3} (64 bins)", normalized_entropy(&flat, 64), normalized_entropy(&ramp, 64));

    let mut rng = Rng::new(3);
    let model = DfeModel::random(DfeConfig::with_channels(8), 0.5, &mut rng)?;
    let gt = Tensor::uniform(3, 32, 32, 0.0, 1.0, &mut rng);
    let sr = gt.map(|v| 0.8 * v + 0.1);
    let g = dfe_extract(&model, &gt)?;
    let s = dfe_extract(&model, &sr)?;

    let cfg = PruningConfig { m: Some(3), alpha: 1.0, gamma: 2.0, ..PruningConfig::default() };
    let p = ImportanceProfile::compute(&g, &s, &cfg)?;
    println!("map  H_gt   H_sr   importance  weight");
    for i in 0..g.len() {
        let w = p.selected.iter().position(|&j| j == i).map(|k| format!("{:.4}", p.weights[k]));
        println!(
            "{i:>3}  {:.3}  {:.3}  {:.4}      {}",
            p.h_norm_g[i],
            p.h_norm_s[i],
            p.combined[i],
            w.unwrap_or_else(|| "pruned".into())
        );
    }
    println!("kept {:?}", p.selected);
    Ok(())
}
