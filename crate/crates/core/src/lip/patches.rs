use crate::error::{arg_err, Result};
use crate::numerics::Tensor;

/// Row-major sliding-window patches of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<Vec<f64>>,
    pub patch_size: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Adds per-patch gradients back onto an `h x w` map; overlaps sum.
    pub fn scatter(&self, grads: &[Vec<f64>], h: usize, w: usize) -> Tensor {
        let p = self.patch_size;
        let mut out = Tensor::zeros(1, h, w);
        for (idx, g) in grads.iter().enumerate() {
            let (r, c) = (idx / self.cols, idx % self.cols);
            let (y0, x0) = (r * self.stride, c * self.stride);
            for dy in 0..p {
                for dx in 0..p {
                    *out.at_mut(0, y0 + dy, x0 + dx) += g[dy * p + dx];
                }
            }
        }
        out
    }
}

/// Number of window positions along one axis.
pub fn grid_extent(len: usize, patch_size: usize, stride: usize) -> usize {
    if len < patch_size {
        0
    } else {
        (len - patch_size) / stride + 1
    }
}

/// Extracts `patch_size x patch_size` windows every `stride` pixels; trailing
/// pixels that do not fill a window are dropped.
pub fn extract_patches(map: &Tensor, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 {
        return arg_err(format!(
            "patch size and stride must be positive (got {patch_size}/{stride})"
        ));
    }
    let (h, w) = (map.height(), map.width());
    if h < patch_size || w < patch_size {
        return arg_err(format!(
            "{h}x{w} map is smaller than a {patch_size}x{patch_size} patch"
        ));
    }
    let rows = grid_extent(h, patch_size, stride);
    let cols = grid_extent(w, patch_size, stride);
    let plane = map.plane(0);
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y0, x0) = (r * stride, c * stride);
            let mut v = Vec::with_capacity(patch_size * patch_size);
            for dy in 0..patch_size {
                let start = (y0 + dy) * w + x0;
                v.extend_from_slice(&plane[start..start + patch_size]);
            }
            patches.push(v);
        }
    }
    Ok(PatchGrid {
        patches,
        patch_size,
        stride,
        rows,
        cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let g = extract_patches(&Tensor::zeros(1, 64, 64), 32, 16).unwrap();
        assert_eq!((g.rows, g.cols, g.len()), (3, 3, 9));
        assert_eq!(extract_patches(&Tensor::zeros(1, 32, 32), 32, 16).unwrap().len(), 1);
        assert!(extract_patches(&Tensor::zeros(1, 31, 31), 32, 16).is_err());
        assert!(extract_patches(&Tensor::zeros(1, 8, 8), 2, 0).is_err());
    }

    #[test]
    fn row_major_contents() {
        let m = Tensor::from_vec(1, 4, 5, (0..20).map(f64::from).collect()).unwrap();
        let g = extract_patches(&m, 2, 2).unwrap();
        assert_eq!((g.rows, g.cols), (2, 2));
        assert_eq!(g.patches[0], vec![0.0, 1.0, 5.0, 6.0]);
        assert_eq!(g.patches[1], vec![2.0, 3.0, 7.0, 8.0]);
        assert_eq!(g.patches[2], vec![10.0, 11.0, 15.0, 16.0]);
    }

    #[test]
    fn scatter_is_adjoint_of_extract() {
        let mut rng = crate::numerics::Rng::new(1);
        let m = Tensor::randn(1, 7, 6, &mut rng);
        let g = extract_patches(&m, 3, 2).unwrap();
        let v: Vec<Vec<f64>> = (0..g.len()).map(|_| (0..9).map(|_| rng.normal()).collect()).collect();
        let lhs: f64 = g.patches.iter().zip(&v).map(|(a, b)| crate::numerics::dot(a, b)).sum();
        let rhs = m.dot(&g.scatter(&v, 7, 6));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
