//! Builds a detail feature extractor, extracts maps, checks the coupling
//! cascade inverts, and round-trips the weights container.
//!
//! cargo run --example extract_features

use mghf::dfe::{container, dfe_extract, DfeConfig, DfeModel};
use mghf::numerics::{Rng, Tensor};

fn main() -> mghf::Result<()> {
    let mut rng = Rng::new(1);
    let model = DfeModel::random(DfeConfig::with_channels(8), 0.5, &mut rng)?;
    let image = Tensor::uniform(3, 32, 32, 0.0, 1.0, &mut rng);

    let maps = dfe_extract(&model, &image)?;
    println!("{} detail maps of {:?}", maps.len(), maps.spatial());
    for (i, m) in maps.maps().iter().enumerate() {
        println!("  map {i}: mean {:+.4}, |max| {:.4}", m.sum() / m.len() as f64, m.max_abs());
    }

    let expanded = model.expand.forward(&image)?;
    let back = model.invert_blocks(&model.forward_blocks(&expanded)?)?;
    let residual = back.zip_map(&expanded, |a, b| (a - b).abs()).max_abs();
    println!("inverse(forward(x)) residual: {residual:.2e}");

    for cfg in [DfeConfig::with_channels(8), DfeConfig::full_size()] {
        let r = DfeModel::zeros(cfg)?.param_report();
        println!(
            "N={:<3} params {:>7}  MACs/pixel {:>7}  container {:>7} bytes  (published reference {})",
            cfg.n_channels, r.param_count, r.flops_per_pixel, r.bytes, r.reference_param_count
        );
    }

    let bytes = container::encode_model(&model);
    let loaded = container::decode_model(&bytes)?;
    let drift = dfe_extract(&loaded, &image)?.to_channels().zip_map(&maps.to_channels(), |a, b| (a - b).abs()).max_abs();
    println!("container: {} bytes, feature drift after f32 round trip {drift:.2e}", bytes.len());
    Ok(())
}
