//! Pretrains a small detail feature extractor on procedural textures.
//!
//! cargo run --release --example train_toy -- [iters] [batch] [size] [channels]

use std::time::Instant;

use mghf::dfe::{DfeConfig, DfeModel};
use mghf::numerics::Rng;
use mghf::trainer::{evaluate, train, ClassifierHead, ToyDataset, TrainConfig};

fn main() -> mghf::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let (iters, batch, size, channels) = (arg(0, 300), arg(1, 8) as usize, arg(2, 16) as usize, arg(3, 4) as usize);
    let classes = 4;

    let mut rng = Rng::new(7);
    let model = DfeModel::new(DfeConfig::with_channels(channels), &mut rng)?;
    let head = ClassifierHead::new(channels, &[8, 8], size, size, classes, &mut rng)?;
    let data = ToyDataset::new(classes, size, 7);
    let cfg = TrainConfig { total_iters: iters, batch, seed: 7, ..TrainConfig::default() };

    let start = Instant::now();
    let out = train(model, head, &data, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    for p in out.curve.iter().step_by((iters as usize / 10).max(1)) {
        println!("iter {:5}  loss {:.4}  lr {:.2e}", p.iter, p.loss, p.lr);
    }
    let tail = &out.curve[out.curve.len().saturating_sub(50)..];
    let tail_loss = tail.iter().map(|p| p.loss).sum::<f64>() / tail.len().max(1) as f64;
    let held_out = ToyDataset { seed: 1007, ..data };
    let (test_loss, acc) = evaluate(&out.model, &out.head, &held_out, 0..200)?;
    println!("trained {iters} iterations in {secs:.1}s");
    println!("mean loss over last 50 iterations {tail_loss:.4} (ln K / 2 = {:.4})", (classes as f64).ln() / 2.0);
    println!("held-out loss {test_loss:.4}, accuracy {acc:.3}");
    Ok(())
}
