use crate::dfe::cnn::{CnnCache, ShallowCnn};
use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Tensor};

/// Affine coupling layer with three shallow-CNN mapping functions.
///
/// With `x = [x1; x2]` split at `split_c` channels:
///
/// ```text
/// s  = clamp * tanh(scale_net(x2) / clamp)
/// y1 = x1 * exp(s) + shift_net(x2)
/// y2 = x2 + update_net(y1)
/// ```
///
/// and the inverse runs the two half-steps backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub split_c: usize,
    pub scale_clamp: f64,
    pub scale_net: ShallowCnn,
    pub shift_net: ShallowCnn,
    pub update_net: ShallowCnn,
}

pub(crate) struct CouplingCache {
    x1: Tensor,
    raw: Tensor,
    exp_s: Tensor,
    scale: CnnCache,
    shift: CnnCache,
    update: CnnCache,
}

impl CouplingLayer {
    pub fn zeros(split_c: usize, hidden: usize, k: usize, scale_clamp: f64) -> Self {
        Self {
            split_c,
            scale_clamp,
            scale_net: ShallowCnn::zeros(split_c, hidden, split_c, k),
            shift_net: ShallowCnn::zeros(split_c, hidden, split_c, k),
            update_net: ShallowCnn::zeros(split_c, hidden, split_c, k),
        }
    }

    /// Random first layers and zero output layers, so the layer starts as the identity.
    pub fn identity_init(split_c: usize, hidden: usize, k: usize, scale_clamp: f64, rng: &mut Rng) -> Self {
        Self {
            split_c,
            scale_clamp,
            scale_net: ShallowCnn::identity_init(split_c, hidden, split_c, k, rng),
            shift_net: ShallowCnn::identity_init(split_c, hidden, split_c, k, rng),
            update_net: ShallowCnn::identity_init(split_c, hidden, split_c, k, rng),
        }
    }

    pub fn random(split_c: usize, hidden: usize, k: usize, scale_clamp: f64, gain: f64, rng: &mut Rng) -> Self {
        Self {
            split_c,
            scale_clamp,
            scale_net: ShallowCnn::random(split_c, hidden, split_c, k, gain, rng),
            shift_net: ShallowCnn::random(split_c, hidden, split_c, k, gain, rng),
            update_net: ShallowCnn::random(split_c, hidden, split_c, k, gain, rng),
        }
    }

    fn split(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if !x.channels().is_multiple_of(2) || x.channels() != 2 * self.split_c {
            return shape_err(format!(
                "coupling layer expects {} channels, got {}",
                2 * self.split_c,
                x.channels()
            ));
        }
        Ok((
            x.slice_channels(0, self.split_c),
            x.slice_channels(self.split_c, 2 * self.split_c),
        ))
    }

    /// Bounded log-scale `clamp * tanh(raw / clamp)`.
    fn log_scale(&self, raw: &Tensor) -> Tensor {
        let c = self.scale_clamp;
        let s = raw.map(|r| c * (r / c).tanh());
        assert!(
            s.data().iter().all(|v| v.abs() <= c),
            "log-scale escaped its clamp"
        );
        s
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub(crate) fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, CouplingCache)> {
        let (x1, x2) = self.split(x)?;
        let (raw, scale) = self.scale_net.forward_cached(&x2)?;
        let exp_s = self.log_scale(&raw).map(f64::exp);
        let (shift, shift_cache) = self.shift_net.forward_cached(&x2)?;
        let mut y1 = x1.zip_map(&exp_s, |a, e| a * e);
        y1.add_scaled(&shift, 1.0);
        let (upd, update) = self.update_net.forward_cached(&y1)?;
        let mut y2 = x2;
        y2.add_scaled(&upd, 1.0);
        let y = Tensor::concat_channels(&y1, &y2)?;
        Ok((
            y,
            CouplingCache {
                x1,
                raw,
                exp_s,
                scale,
                shift: shift_cache,
                update,
            },
        ))
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let (y1, y2) = self.split(y)?;
        let mut x2 = y2;
        x2.add_scaled(&self.update_net.forward(&y1)?, -1.0);
        let raw = self.scale_net.forward(&x2)?;
        let inv_scale = self.log_scale(&raw).map(|s| (-s).exp());
        let shift = self.shift_net.forward(&x2)?;
        let x1 = y1.zip_map(&shift, |a, b| a - b).zip_map(&inv_scale, |a, e| a * e);
        Tensor::concat_channels(&x1, &x2)
    }

    pub(crate) fn backward(
        &self,
        cache: &CouplingCache,
        grad_y: &Tensor,
        mut acc: Option<&mut CouplingLayer>,
    ) -> Tensor {
        let c = self.split_c;
        let gy1 = grad_y.slice_channels(0, c);
        let gy2 = grad_y.slice_channels(c, 2 * c);

        // y2 = x2 + update(y1)
        let mut g1 = gy1;
        g1.add_scaled(
            &self
                .update_net
                .backward(&cache.update, &gy2, acc.as_deref_mut().map(|a| &mut a.update_net)),
            1.0,
        );
        let mut gx2 = gy2;

        // y1 = x1 * exp(s(raw)) + shift(x2)
        let gx1 = g1.zip_map(&cache.exp_s, |g, e| g * e);
        let clamp = self.scale_clamp;
        let mut g_raw = g1.zip_map(&cache.x1, |g, a| g * a);
        for ((g, e), r) in g_raw
            .data_mut()
            .iter_mut()
            .zip(cache.exp_s.data())
            .zip(cache.raw.data())
        {
            let t = (r / clamp).tanh();
            *g *= e * (1.0 - t * t);
        }
        gx2.add_scaled(
            &self
                .scale_net
                .backward(&cache.scale, &g_raw, acc.as_deref_mut().map(|a| &mut a.scale_net)),
            1.0,
        );
        gx2.add_scaled(
            &self
                .shift_net
                .backward(&cache.shift, &g1, acc.map(|a| &mut a.shift_net)),
            1.0,
        );
        Tensor::concat_channels(&gx1, &gx2).expect("halves share spatial shape")
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|(_, n)| n.param_count()).sum()
    }

    pub fn macs_per_pixel(&self) -> usize {
        self.nets().iter().map(|(_, n)| n.macs_per_pixel()).sum()
    }

    pub(crate) fn nets(&self) -> [(&'static str, &ShallowCnn); 3] {
        [
            ("scale", &self.scale_net),
            ("shift", &self.shift_net),
            ("update", &self.update_net),
        ]
    }

    pub(crate) fn nets_mut(&mut self) -> [&mut ShallowCnn; 3] {
        [&mut self.scale_net, &mut self.shift_net, &mut self.update_net]
    }
}
