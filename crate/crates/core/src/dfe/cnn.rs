use crate::error::Result;
use crate::numerics::{leaky_grad, leaky_relu, Conv2d, Rng, Tensor, LEAKY_SLOPE};

/// conv3x3 -> leaky_relu(0.2) -> conv3x3, both "same" padded.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowCnn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

pub(crate) struct CnnCache {
    input: Tensor,
    pre: Tensor,
}

impl ShallowCnn {
    pub fn zeros(in_ch: usize, hidden: usize, out_ch: usize, k: usize) -> Self {
        Self {
            conv1: Conv2d::zeros(in_ch, hidden, k, k / 2),
            conv2: Conv2d::zeros(hidden, out_ch, k, k / 2),
        }
    }

    /// He-initialized first layer, zero second layer: the block outputs 0.
    pub fn identity_init(in_ch: usize, hidden: usize, out_ch: usize, k: usize, rng: &mut Rng) -> Self {
        Self {
            conv1: Conv2d::random(in_ch, hidden, k, k / 2, 2f64.sqrt(), rng),
            conv2: Conv2d::zeros(hidden, out_ch, k, k / 2),
        }
    }

    /// Both layers random with the given gain.
    pub fn random(in_ch: usize, hidden: usize, out_ch: usize, k: usize, gain: f64, rng: &mut Rng) -> Self {
        Self {
            conv1: Conv2d::random(in_ch, hidden, k, k / 2, 2f64.sqrt(), rng),
            conv2: Conv2d::random(hidden, out_ch, k, k / 2, gain, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.conv1.out_ch()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pre = self.conv1.forward(x)?;
        self.conv2.forward(&leaky_relu(&pre, LEAKY_SLOPE))
    }

    pub(crate) fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, CnnCache)> {
        let pre = self.conv1.forward(x)?;
        let out = self.conv2.forward(&leaky_relu(&pre, LEAKY_SLOPE))?;
        Ok((
            out,
            CnnCache {
                input: x.clone(),
                pre,
            },
        ))
    }

    /// Input gradient; parameter gradients are added into `acc` when given.
    pub(crate) fn backward(&self, cache: &CnnCache, grad_out: &Tensor, acc: Option<&mut ShallowCnn>) -> Tensor {
        let (_, h, w) = cache.pre.shape();
        let g_act = self.conv2.backward_input(grad_out, h, w);
        let g_pre = g_act.zip_map(&cache.pre, |g, p| g * leaky_grad(p, LEAKY_SLOPE));
        if let Some(acc) = acc {
            let act = leaky_relu(&cache.pre, LEAKY_SLOPE);
            self.conv2.accumulate_param_grads(&act, grad_out, &mut acc.conv2);
            self.conv1.accumulate_param_grads(&cache.input, &g_pre, &mut acc.conv1);
        }
        let (_, ih, iw) = cache.input.shape();
        self.conv1.backward_input(&g_pre, ih, iw)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    pub fn macs_per_pixel(&self) -> usize {
        self.conv1.macs_per_pixel() + self.conv2.macs_per_pixel()
    }

    pub(crate) fn convs(&self) -> [(&'static str, &Conv2d); 2] {
        [("conv1", &self.conv1), ("conv2", &self.conv2)]
    }

    pub(crate) fn convs_mut(&mut self) -> [&mut Conv2d; 2] {
        [&mut self.conv1, &mut self.conv2]
    }
}
