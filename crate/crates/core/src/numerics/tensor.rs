use crate::error::{shape_err, Result};
use crate::numerics::Rng;

/// Dense `channels x height x width` array of `f64`, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return shape_err(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            ));
        }
        if data.len() != channels * height * width {
            return shape_err(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Standard-normal entries drawn from `rng`.
    pub fn randn(channels: usize, height: usize, width: usize, rng: &mut Rng) -> Self {
        let data = (0..channels * height * width).map(|_| rng.normal()).collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(channels: usize, height: usize, width: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..channels * height * width)
            .map(|_| rng.uniform(lo, hi))
            .collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.height, self.width)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Tensor, k: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        crate::numerics::dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channels `[start, end)` as a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Tensor {
        assert!(start < end && end <= self.channels);
        let n = self.plane_len();
        Tensor {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Stacks `a` on top of `b` along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.height != b.height || a.width != b.width {
            return shape_err(format!(
                "channel concat needs equal planes: {:?} vs {:?}",
                a.shape(),
                b.shape()
            ));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Tensor {
            channels: a.channels + b.channels,
            height: a.height,
            width: a.width,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(2, 2, 2, vec![0.0; 8]).is_ok());
        assert!(Tensor::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Tensor::from_vec(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn indexing_is_channel_row_column() {
        let t = Tensor::from_vec(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(0, 0, 2), 2.0);
        assert_eq!(t.at(0, 1, 0), 3.0);
        assert_eq!(t.at(1, 0, 0), 6.0);
        assert_eq!(t.plane(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn slice_and_concat_roundtrip() {
        let mut rng = Rng::new(3);
        let t = Tensor::randn(6, 3, 4, &mut rng);
        let a = t.slice_channels(0, 2);
        let b = t.slice_channels(2, 6);
        assert_eq!(Tensor::concat_channels(&a, &b).unwrap(), t);
    }
}
