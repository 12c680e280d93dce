use crate::error::{shape_err, Result};
use crate::numerics::Tensor;

/// Ordered single-channel detail maps sharing one spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    maps: Vec<Tensor>,
}

impl FeatureStack {
    pub fn new(maps: Vec<Tensor>) -> Result<Self> {
        if let Some(first) = maps.first() {
            for (i, m) in maps.iter().enumerate() {
                if m.channels() != 1 {
                    return shape_err(format!("map {i} has {} channels, expected 1", m.channels()));
                }
                if m.height() != first.height() || m.width() != first.width() {
                    return shape_err(format!(
                        "map {i} is {}x{}, map 0 is {}x{}",
                        m.height(),
                        m.width(),
                        first.height(),
                        first.width()
                    ));
                }
            }
        }
        Ok(Self { maps })
    }

    /// One map per channel of `t`.
    pub fn from_channels(t: &Tensor) -> Self {
        Self {
            maps: (0..t.channels())
                .map(|c| t.slice_channels(c, c + 1))
                .collect(),
        }
    }

    /// Stacks the maps back into one multi-channel tensor.
    pub fn to_channels(&self) -> Tensor {
        let (h, w) = self.spatial();
        let mut data = Vec::with_capacity(self.maps.len() * h * w);
        for m in &self.maps {
            data.extend_from_slice(m.data());
        }
        Tensor::from_vec(self.maps.len(), h, w, data).expect("non-empty stack")
    }

    pub fn zeros(len: usize, height: usize, width: usize) -> Self {
        Self {
            maps: (0..len).map(|_| Tensor::zeros(1, height, width)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (h, w) = self.spatial();
        Self::zeros(self.len(), h, w)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// `(height, width)` shared by every map; `(0, 0)` when empty.
    pub fn spatial(&self) -> (usize, usize) {
        self.maps
            .first()
            .map(|m| (m.height(), m.width()))
            .unwrap_or((0, 0))
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut [Tensor] {
        &mut self.maps
    }

    pub fn map(&self, i: usize) -> &Tensor {
        &self.maps[i]
    }

    pub fn into_maps(self) -> Vec<Tensor> {
        self.maps
    }

    pub fn check_aligned(&self, other: &FeatureStack, what: &str) -> Result<()> {
        if self.len() != other.len() || self.spatial() != other.spatial() {
            return shape_err(format!(
                "{what}: stacks differ ({} maps of {:?} vs {} maps of {:?})",
                self.len(),
                self.spatial(),
                other.len(),
                other.spatial()
            ));
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        let (h, w) = self.spatial();
        self.len() * h * w
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &FeatureStack, k: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.maps.iter_mut().zip(&other.maps) {
            a.add_scaled(b, k);
        }
    }

    pub fn scale(&self, k: f64) -> FeatureStack {
        Self {
            maps: self.maps.iter().map(|m| m.scale(k)).collect(),
        }
    }

    pub fn dot(&self, other: &FeatureStack) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.maps.iter().zip(&other.maps) {
            acc += a.dot(b);
        }
        acc
    }
}
