use crate::error::{shape_err, Result};
use crate::numerics::{Rng, Tensor};

/// Rank-4 convolution kernel `[out_ch, in_ch, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            kh,
            kw,
            data: vec![0.0; out_ch * in_ch * kh * kw],
        }
    }

    pub fn from_vec(out_ch: usize, in_ch: usize, kh: usize, kw: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_ch * in_ch * kh * kw {
            return shape_err(format!(
                "kernel data length {} does not match [{out_ch}, {in_ch}, {kh}, {kw}]",
                data.len()
            ));
        }
        Ok(Self {
            out_ch,
            in_ch,
            kh,
            kw,
            data,
        })
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, y: usize, x: usize) -> f64 {
        self.data[((o * self.in_ch + i) * self.kh + y) * self.kw + x]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kh, self.kw]
    }
}

/// 2-D cross-correlation with zero padding and stride 1.
///
/// `out[o, y, x] = bias[o] + sum_{i, ky, kx} k[o, i, ky, kx] * in[i, y + ky - p, x + kx - p]`
pub fn conv2d(input: &Tensor, kernel: &Kernel, bias: &[f64], padding: usize) -> Result<Tensor> {
    let (out_h, out_w) = check_conv(input, kernel, bias, padding)?;
    let (in_c, in_h, in_w) = input.shape();
    let mut out = Tensor::zeros(kernel.out_ch, out_h, out_w);
    let p = padding as isize;
    for o in 0..kernel.out_ch {
        out.plane_mut(o).fill(bias[o]);
        for i in 0..in_c {
            let src = input.plane(i);
            for ky in 0..kernel.kh {
                for kx in 0..kernel.kw {
                    let w = kernel.at(o, i, ky, kx);
                    if w == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - p;
                    let dx = kx as isize - p;
                    let (x0, x1) = valid_range(dx, out_w, in_w);
                    let dst = out.plane_mut(o);
                    for oy in 0..out_h {
                        let iy = oy as isize + dy;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * in_w..(iy as usize + 1) * in_w];
                        let drow = &mut dst[oy * out_w..(oy + 1) * out_w];
                        for ox in x0..x1 {
                            drow[ox] += w * srow[(ox as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output columns `ox` with `0 <= ox + d < in_len`.
#[inline]
fn valid_range(d: isize, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (in_len as isize - d).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

fn check_conv(input: &Tensor, kernel: &Kernel, bias: &[f64], padding: usize) -> Result<(usize, usize)> {
    if kernel.in_ch != input.channels() {
        return shape_err(format!(
            "kernel expects {} input channels, input has {}",
            kernel.in_ch,
            input.channels()
        ));
    }
    if bias.len() != kernel.out_ch {
        return shape_err(format!(
            "bias length {} does not match {} output channels",
            bias.len(),
            kernel.out_ch
        ));
    }
    if kernel.kh.is_multiple_of(2) || kernel.kw.is_multiple_of(2) {
        return shape_err(format!("kernel size must be odd, got {}x{}", kernel.kh, kernel.kw));
    }
    let ph = input.height() + 2 * padding;
    let pw = input.width() + 2 * padding;
    if kernel.kh > ph || kernel.kw > pw {
        return shape_err(format!(
            "kernel {}x{} larger than padded input {ph}x{pw}",
            kernel.kh, kernel.kw
        ));
    }
    Ok((ph - kernel.kh + 1, pw - kernel.kw + 1))
}

/// Convolution layer: kernel, bias and padding together.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernel: Kernel,
    pub bias: Vec<f64>,
    pub padding: usize,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize, padding: usize) -> Self {
        Self {
            kernel: Kernel::zeros(out_ch, in_ch, k, k),
            bias: vec![0.0; out_ch],
            padding,
        }
    }

    /// Kernel entries `N(0, gain^2 / fan_in)`, zero bias.
    pub fn random(in_ch: usize, out_ch: usize, k: usize, padding: usize, gain: f64, rng: &mut Rng) -> Self {
        let mut conv = Self::zeros(in_ch, out_ch, k, padding);
        let std = gain / ((in_ch * k * k) as f64).sqrt();
        for w in &mut conv.kernel.data {
            *w = std * rng.normal();
        }
        conv
    }

    pub fn in_ch(&self) -> usize {
        self.kernel.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.kernel.out_ch
    }

    pub fn param_count(&self) -> usize {
        self.kernel.data.len() + self.bias.len()
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> usize {
        self.kernel.data.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, &self.kernel, &self.bias, self.padding)
    }

    /// Gradient with respect to the input of shape `in_h x in_w`.
    pub fn backward_input(&self, grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
        let k = &self.kernel;
        let (_, out_h, out_w) = grad_out.shape();
        let p = self.padding as isize;
        let mut gin = Tensor::zeros(k.in_ch, in_h, in_w);
        for o in 0..k.out_ch {
            let g = grad_out.plane(o);
            for i in 0..k.in_ch {
                for ky in 0..k.kh {
                    for kx in 0..k.kw {
                        let w = k.at(o, i, ky, kx);
                        if w == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - p;
                        let dx = kx as isize - p;
                        let (x0, x1) = valid_range(dx, out_w, in_w);
                        let dst = gin.plane_mut(i);
                        for oy in 0..out_h {
                            let iy = oy as isize + dy;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let grow = &g[oy * out_w..(oy + 1) * out_w];
                            let drow = &mut dst[iy as usize * in_w..(iy as usize + 1) * in_w];
                            for ox in x0..x1 {
                                drow[(ox as isize + dx) as usize] += w * grow[ox];
                            }
                        }
                    }
                }
            }
        }
        gin
    }

    /// Adds kernel and bias gradients into `acc` (same shape as `self`).
    pub fn accumulate_param_grads(&self, input: &Tensor, grad_out: &Tensor, acc: &mut Conv2d) {
        let k = &self.kernel;
        let (in_c, in_h, in_w) = input.shape();
        let (_, out_h, out_w) = grad_out.shape();
        let p = self.padding as isize;
        for o in 0..k.out_ch {
            let g = grad_out.plane(o);
            let mut bsum = 0.0;
            for v in g {
                bsum += v;
            }
            acc.bias[o] += bsum;
            for i in 0..in_c {
                let src = input.plane(i);
                for ky in 0..k.kh {
                    for kx in 0..k.kw {
                        let dy = ky as isize - p;
                        let dx = kx as isize - p;
                        let (x0, x1) = valid_range(dx, out_w, in_w);
                        let mut s = 0.0;
                        for oy in 0..out_h {
                            let iy = oy as isize + dy;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let grow = &g[oy * out_w..(oy + 1) * out_w];
                            let srow = &src[iy as usize * in_w..(iy as usize + 1) * in_w];
                            for ox in x0..x1 {
                                s += grow[ox] * srow[(ox as isize + dx) as usize];
                            }
                        }
                        acc.kernel.data[((o * k.in_ch + i) * k.kh + ky) * k.kw + kx] += s;
                    }
                }
            }
        }
    }

    pub fn params(&self) -> [&[f64]; 2] {
        [&self.kernel.data, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.kernel.data, &mut self.bias]
    }
}
