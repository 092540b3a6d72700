//! Overlap and boundary-distance metrics on binary masks.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Binary mask on a `[D, H, W]` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: [usize; 3],
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::arg("Mask", format!("{} voxels do not fill {shape:?}", data.len())));
        }
        Ok(Mask { shape, data })
    }

    /// Voxels whose label equals `class`.
    pub fn from_labels(labels: &[u8], shape: [usize; 3], class: u8) -> Result<Self> {
        Mask::new(shape, labels.iter().map(|&l| l == class).collect())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn at(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[(z * self.shape[1] + y) * self.shape[2] + x]
    }

    /// Foreground voxels with a background 6-neighbour or on the grid edge.
    pub fn boundary(&self) -> Vec<[usize; 3]> {
        let [d, h, w] = self.shape;
        let mut out = Vec::new();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if !self.at(z, y, x) {
                        continue;
                    }
                    let edge = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                    if edge
                        || !self.at(z - 1, y, x)
                        || !self.at(z + 1, y, x)
                        || !self.at(z, y - 1, x)
                        || !self.at(z, y + 1, x)
                        || !self.at(z, y, x - 1)
                        || !self.at(z, y, x + 1)
                    {
                        out.push([z, y, x]);
                    }
                }
            }
        }
        out
    }
}

fn check_pair(a: &Mask, b: &Mask) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch { left: a.shape.to_vec(), right: b.shape.to_vec() });
    }
    Ok(())
}

/// `2|S ∩ T| / (|S| + |T|)`; two empty masks score 1.
pub fn dice_score(s: &Mask, t: &Mask) -> Result<f64> {
    check_pair(s, t)?;
    let inter = s.data.iter().zip(&t.data).filter(|(a, b)| **a && **b).count();
    let total = s.count() + t.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Symmetric Hausdorff distance between the boundaries of `p` and `t` in
/// physical units (`spacing` per axis, `[D, H, W]` order). `None` when either
/// mask is empty.
pub fn hausdorff_distance(p: &Mask, t: &Mask, spacing: [f64; 3]) -> Result<Option<f64>> {
    check_pair(p, t)?;
    if p.is_empty() || t.is_empty() {
        return Ok(None);
    }
    let (bp, bt) = (p.boundary(), t.boundary());
    let dist2 = |a: &[usize; 3], b: &[usize; 3]| {
        (0..3).map(|i| ((a[i] as f64 - b[i] as f64) * spacing[i]).powi(2)).sum::<f64>()
    };
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        from.iter().map(|a| to.iter().map(|b| dist2(a, b)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    Ok(Some(directed(&bp, &bt).max(directed(&bt, &bp)).sqrt()))
}
