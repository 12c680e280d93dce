//! Content-style consistency terms on a pair of feature stacks.
//!
//! cargo run --example content_style

use mghf::csc::{csc_total, gram_loss_with, CscWeights, GramMode};
use mghf::dfe::FeatureStack;
use mghf::numerics::{Rng, Tensor};

fn main() -> mghf::Result<()> {
    let mut rng = Rng::new(5);
    let g = FeatureStack::from_channels(&Tensor::randn(4, 16, 16, &mut rng));
    let cases = [
        ("identical", g.clone()),
        ("scaled x2", g.scale(2.0)),
        ("noisy", {
            let mut s = g.clone();
            s.add_scaled(&FeatureStack::from_channels(&Tensor::randn(4, 16, 16, &mut rng)), 0.3);
            s
        }),
        ("unrelated", FeatureStack::from_channels(&Tensor::randn(4, 16, 16, &mut rng))),
    ];
    let w = CscWeights::default();
    println!("{:<10} {:>9} {:>9} {:>9} {:>9}", "case", "mse", "corr", "gram", "total");
    for (name, s) in &cases {
        let (t, _) = csc_total(&g, s, &w)?;
        println!("{name:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", t.mse, t.corr, t.gram, t.total);
    }
    let (rows, _) = gram_loss_with(&g, &cases[1].1, GramMode::Rows)?;
    let (scalar, _) = gram_loss_with(&g, &cases[1].1, GramMode::Scalar)?;
    println!("gram loss for the scaled stack: rows mode {rows:.4}, scalar mode {scalar:.4}");
    Ok(())
}
