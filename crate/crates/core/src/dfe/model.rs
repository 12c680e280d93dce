use serde::{Deserialize, Serialize};

use super::coupling::CouplingCache;
use super::{container, CouplingLayer, FeatureStack};
use crate::error::{shape_err, Result};
use crate::numerics::{Conv2d, Rng, Tensor};

/// Published parameter count of the 128-channel, one-block extractor.
pub const REFERENCE_PARAM_COUNT: usize = 343_616;

/// Architecture of a [`DfeModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfeConfig {
    /// Channels after expansion; also the number of detail maps.
    pub n_channels: usize,
    pub n_blocks: usize,
    /// Hidden width of every shallow CNN; `None` means `n_channels / 2`.
    pub hidden: Option<usize>,
    pub kernel_size: usize,
    pub scale_clamp: f64,
}

impl Default for DfeConfig {
    fn default() -> Self {
        Self {
            n_channels: 8,
            n_blocks: 1,
            hidden: None,
            kernel_size: 3,
            scale_clamp: 2.0,
        }
    }
}

impl DfeConfig {
    /// 128 channels and a single invertible block.
    pub fn full_size() -> Self {
        Self {
            n_channels: 128,
            ..Self::default()
        }
    }

    pub fn with_channels(n_channels: usize) -> Self {
        Self {
            n_channels,
            ..Self::default()
        }
    }

    pub fn split_c(&self) -> usize {
        self.n_channels / 2
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or(self.split_c())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || !self.n_channels.is_multiple_of(2) {
            return shape_err(format!(
                "channel count must be even and positive, got {}",
                self.n_channels
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return shape_err(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if self.hidden_width() == 0 {
            return shape_err("hidden width must be positive");
        }
        if !(self.scale_clamp > 0.0) {
            return Err(crate::Error::Argument(format!(
                "scale clamp must be positive, got {}",
                self.scale_clamp
            )));
        }
        Ok(())
    }
}

/// Channel expansion followed by a cascade of coupling layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DfeModel {
    pub config: DfeConfig,
    pub expand: Conv2d,
    pub blocks: Vec<CouplingLayer>,
}

/// Intermediate activations kept for the backward pass.
pub struct DfeCache {
    in_h: usize,
    in_w: usize,
    blocks: Vec<CouplingCache>,
}

/// Size accounting for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub param_count: usize,
    /// Convolution multiply-accumulates per output pixel.
    pub flops_per_pixel: usize,
    /// Size of the serialized weights container.
    pub bytes: usize,
    pub reference_param_count: usize,
}

impl DfeModel {
    /// Random expansion, couplings initialized to the identity.
    pub fn new(config: DfeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.split_c();
        let h = config.hidden_width();
        let k = config.kernel_size;
        let expand = Conv2d::random(3, config.n_channels, 3, 1, 1.0, rng);
        let blocks = (0..config.n_blocks)
            .map(|_| CouplingLayer::identity_init(c, h, k, config.scale_clamp, rng))
            .collect();
        Ok(Self {
            config,
            expand,
            blocks,
        })
    }

    /// Every layer random, including the coupling output layers.
    pub fn random(config: DfeConfig, gain: f64, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.split_c();
        let h = config.hidden_width();
        let k = config.kernel_size;
        let expand = Conv2d::random(3, config.n_channels, 3, 1, 1.0, rng);
        let blocks = (0..config.n_blocks)
            .map(|_| CouplingLayer::random(c, h, k, config.scale_clamp, gain, rng))
            .collect();
        Ok(Self {
            config,
            expand,
            blocks,
        })
    }

    pub fn zeros(config: DfeConfig) -> Result<Self> {
        config.validate()?;
        let c = config.split_c();
        Ok(Self {
            config,
            expand: Conv2d::zeros(3, config.n_channels, 3, 1),
            blocks: (0..config.n_blocks)
                .map(|_| CouplingLayer::zeros(c, config.hidden_width(), config.kernel_size, config.scale_clamp))
                .collect(),
        })
    }

    /// Same architecture, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    pub fn n_channels(&self) -> usize {
        self.config.n_channels
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.channels() != 3 {
            return shape_err(format!(
                "extractor expects a 3-channel image, got {} channels",
                image.channels()
            ));
        }
        Ok(())
    }

    /// The `N`-channel embedding of the last coupling layer.
    pub fn embed(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut z = self.expand.forward(image)?;
        for b in &self.blocks {
            z = b.forward(&z)?;
        }
        Ok(z)
    }

    pub fn embed_cached(&self, image: &Tensor) -> Result<(Tensor, DfeCache)> {
        self.check_image(image)?;
        let mut z = self.expand.forward(image)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward_cached(&z)?;
            caches.push(cache);
            z = next;
        }
        Ok((
            z,
            DfeCache {
                in_h: image.height(),
                in_w: image.width(),
                blocks: caches,
            },
        ))
    }

    /// Image gradient of `<grad_z, embed(image)>`; parameter gradients are
    /// added into `acc` when given.
    ///
    /// The expansion layer's input is not cached, so the accumulator is
    /// paired with the original image.
    pub fn backward(
        &self,
        cache: &DfeCache,
        grad_z: &Tensor,
        mut acc: Option<(&mut DfeModel, &Tensor)>,
    ) -> Tensor {
        let mut g = grad_z.clone();
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let block_acc = acc.as_mut().map(|(m, _)| &mut m.blocks[i]);
            g = b.backward(c, &g, block_acc);
        }
        if let Some((m, image)) = acc {
            self.expand.accumulate_param_grads(image, &g, &mut m.expand);
        }
        self.expand.backward_input(&g, cache.in_h, cache.in_w)
    }

    /// Inverts the coupling cascade: recovers the expanded tensor from `z`.
    pub fn invert_blocks(&self, z: &Tensor) -> Result<Tensor> {
        let mut x = z.clone();
        for b in self.blocks.iter().rev() {
            x = b.inverse(&x)?;
        }
        Ok(x)
    }

    /// Runs the coupling cascade forward on an already-expanded tensor.
    pub fn forward_blocks(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = x.clone();
        for b in &self.blocks {
            z = b.forward(&z)?;
        }
        Ok(z)
    }

    /// Named parameter tensors in serialization order.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        push_conv(&mut out, "expand".into(), &self.expand);
        for (i, b) in self.blocks.iter().enumerate() {
            for (net_name, net) in b.nets() {
                for (conv_name, conv) in net.convs() {
                    push_conv(&mut out, format!("blocks.{i}.{net_name}.{conv_name}"), conv);
                }
            }
        }
        out
    }

    /// Mutable parameter slices, same order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.expand.params_mut());
        for b in &mut self.blocks {
            for net in b.nets_mut() {
                for conv in net.convs_mut() {
                    out.extend(conv.params_mut());
                }
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.named_params().into_iter().map(|(_, _, v)| v).collect()
    }

    pub fn param_count(&self) -> usize {
        self.expand.param_count() + self.blocks.iter().map(|b| b.param_count()).sum::<usize>()
    }

    pub fn param_report(&self) -> ParamReport {
        ParamReport {
            param_count: self.param_count(),
            flops_per_pixel: self.expand.macs_per_pixel()
                + self.blocks.iter().map(|b| b.macs_per_pixel()).sum::<usize>(),
            bytes: container::encode_model(self).len(),
            reference_param_count: REFERENCE_PARAM_COUNT,
        }
    }
}

fn push_conv<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, prefix: String, conv: &'a Conv2d) {
    out.push((format!("{prefix}.weight"), conv.kernel.shape().to_vec(), &conv.kernel.data));
    out.push((format!("{prefix}.bias"), vec![conv.bias.len()], &conv.bias));
}

/// Detail maps of `image`: one map per embedding channel.
pub fn dfe_extract(model: &DfeModel, image: &Tensor) -> Result<FeatureStack> {
    Ok(FeatureStack::from_channels(&model.embed(image)?))
}

/// Gradient of `sum_k <cotangent_k, dfe_extract(image)_k>` with respect to `image`.
pub fn dfe_vjp(model: &DfeModel, image: &Tensor, cotangent: &FeatureStack) -> Result<Tensor> {
    let (z, cache) = model.embed_cached(image)?;
    if cotangent.len() != z.channels() || cotangent.spatial() != (z.height(), z.width()) {
        return shape_err(format!(
            "cotangent has {} maps of {:?}, extractor produces {} maps of {:?}",
            cotangent.len(),
            cotangent.spatial(),
            z.channels(),
            (z.height(), z.width())
        ));
    }
    Ok(model.backward(&cache, &cotangent.to_channels(), None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_abs_diff, rel_error};

    #[test]
    fn extract_shape_contract() {
        let mut rng = Rng::new(1);
        let model = DfeModel::new(DfeConfig::with_channels(8), &mut rng).unwrap();
        let img = Tensor::uniform(3, 64, 64, 0.0, 1.0, &mut rng);
        let stack = dfe_extract(&model, &img).unwrap();
        assert_eq!(stack.len(), 8);
        assert_eq!(stack.spatial(), (64, 64));
    }

    #[test]
    fn zero_model_gives_zero_maps() {
        let model = DfeModel::zeros(DfeConfig::with_channels(4)).unwrap();
        let mut rng = Rng::new(2);
        let img = Tensor::randn(3, 6, 6, &mut rng);
        let stack = dfe_extract(&model, &img).unwrap();
        assert!(stack.maps().iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn deterministic_extraction() {
        let mut rng = Rng::new(3);
        let model = DfeModel::random(DfeConfig::with_channels(4), 0.5, &mut rng).unwrap();
        let img = Tensor::randn(3, 7, 7, &mut rng);
        let a = dfe_extract(&model, &img).unwrap();
        let b = dfe_extract(&model, &img).unwrap();
        for (x, y) in a.maps().iter().zip(b.maps()) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let model = DfeModel::zeros(DfeConfig::with_channels(4)).unwrap();
        assert!(dfe_extract(&model, &Tensor::zeros(1, 4, 4)).is_err());
        assert!(DfeModel::zeros(DfeConfig::with_channels(5)).is_err());
    }

    #[test]
    fn block_round_trip() {
        let mut rng = Rng::new(4);
        let cfg = DfeConfig {
            n_blocks: 2,
            ..DfeConfig::with_channels(4)
        };
        let model = DfeModel::random(cfg, 1.0, &mut rng).unwrap();
        let x = Tensor::uniform(4, 6, 6, -10.0, 10.0, &mut rng);
        let z = model.forward_blocks(&x).unwrap();
        let back = model.invert_blocks(&z).unwrap();
        assert!(max_abs_diff(back.data(), x.data()) < 1e-5);
    }

    #[test]
    fn vjp_zero_cotangent() {
        let mut rng = Rng::new(5);
        let model = DfeModel::random(DfeConfig::with_channels(4), 0.5, &mut rng).unwrap();
        let img = Tensor::randn(3, 5, 5, &mut rng);
        let g = dfe_vjp(&model, &img, &FeatureStack::zeros(4, 5, 5)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(dfe_vjp(&model, &img, &FeatureStack::zeros(3, 5, 5)).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = Rng::new(6);
        for n in [4, 8] {
            let model = DfeModel::random(DfeConfig::with_channels(n), 0.5, &mut rng).unwrap();
            let img = Tensor::uniform(3, 6, 6, 0.0, 1.0, &mut rng);
            let w = FeatureStack::from_channels(&Tensor::randn(n, 6, 6, &mut rng));
            let g = dfe_vjp(&model, &img, &w).unwrap();
            let fd = finite_diff_grad(|t| Ok(dfe_extract(&model, t)?.dot(&w)), &img, 1e-5).unwrap();
            assert!(rel_error(g.data(), fd.data()) < 1e-4);
        }
    }

    #[test]
    fn vjp_linear_in_cotangent() {
        let mut rng = Rng::new(7);
        let model = DfeModel::random(DfeConfig::with_channels(4), 0.5, &mut rng).unwrap();
        let img = Tensor::randn(3, 5, 5, &mut rng);
        let c1 = FeatureStack::from_channels(&Tensor::randn(4, 5, 5, &mut rng));
        let c2 = FeatureStack::from_channels(&Tensor::randn(4, 5, 5, &mut rng));
        let (a, b) = (0.7, -1.3);
        let mut mix = c1.scale(a);
        mix.add_scaled(&c2, b);
        let lhs = dfe_vjp(&model, &img, &mix).unwrap();
        let mut rhs = dfe_vjp(&model, &img, &c1).unwrap().scale(a);
        rhs.add_scaled(&dfe_vjp(&model, &img, &c2).unwrap(), b);
        assert!(max_abs_diff(lhs.data(), rhs.data()) < 1e-10);
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = Rng::new(8);
        let model = DfeModel::random(DfeConfig::with_channels(4), 0.5, &mut rng).unwrap();
        let img = Tensor::randn(3, 5, 5, &mut rng);
        let w = Tensor::randn(4, 5, 5, &mut rng);
        let (_, cache) = model.embed_cached(&img).unwrap();
        let mut acc = model.zeros_like();
        model.backward(&cache, &w, Some((&mut acc, &img)));
        let analytic: Vec<f64> = acc.params().concat();
        let flat: Vec<f64> = model.params().concat();
        let x = Tensor::from_vec(1, 1, flat.len(), flat).unwrap();
        let fd = finite_diff_grad(
            |t| {
                let mut m = model.clone();
                let mut off = 0;
                for p in m.params_mut() {
                    p.copy_from_slice(&t.data()[off..off + p.len()]);
                    off += p.len();
                }
                Ok(m.embed(&img)?.dot(&w))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rel_error(&analytic, fd.data()) < 1e-6);
    }

    #[test]
    fn param_count_by_hand() {
        // Expansion only: 3 -> 8 channels with a 3x3 kernel.
        let cfg = DfeConfig {
            n_blocks: 0,
            ..DfeConfig::with_channels(8)
        };
        let m = DfeModel::zeros(cfg).unwrap();
        assert_eq!(m.param_count(), 3 * 8 * 9 + 8);

        // One block, N = 8, hidden 4: three nets of (4*4*9 + 4) * 2.
        let m = DfeModel::zeros(DfeConfig::with_channels(8)).unwrap();
        assert_eq!(m.param_count(), 224 + 3 * 2 * (4 * 4 * 9 + 4));
        let r = m.param_report();
        assert_eq!(r.param_count, 1112);
        assert_eq!(r.flops_per_pixel, 216 + 3 * 2 * 144);
        assert_eq!(r.reference_param_count, 343_616);
    }

    #[test]
    fn wider_hidden_has_more_params() {
        let base = DfeConfig::with_channels(8);
        let wide = DfeConfig {
            hidden: Some(8),
            ..base
        };
        let a = DfeModel::zeros(base).unwrap().param_count();
        let b = DfeModel::zeros(wide).unwrap().param_count();
        assert!(b > a);
    }
}
