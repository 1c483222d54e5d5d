//! Orthonormal bases for low-dimensional search subspaces.
//!
//! Both modes up-sample a `d`-dimensional coefficient vector to the ambient
//! space by nearest-neighbour replication. Every basis vector is the
//! normalized indicator of one block of ambient coordinates; blocks are
//! disjoint, so the basis is exactly orthonormal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::RealVec;

/// How ambient coordinates are grouped into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BasisMode {
    /// Contiguous runs of `D/d` coordinates share one coefficient.
    Block,
    /// Channel-major `C x H x W` image up-sampled from `C x h x w`.
    Image {
        channels: usize,
        height: usize,
        width: usize,
        sub_height: usize,
        sub_width: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    ambient: usize,
    dim: usize,
    mode: BasisMode,
    /// Basis index owning each ambient coordinate.
    owner: Vec<u32>,
    /// Entry value of every basis vector on its block, `1/sqrt(block size)`.
    weight: f64,
}

impl SubspaceBasis {
    /// Builds the basis for `ambient = D`, `dim = d`.
    pub fn new(ambient: usize, dim: usize, mode: BasisMode) -> Result<Self> {
        if ambient == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if dim == 0 || dim > ambient {
            return Err(Error::config(format!(
                "subspace dimension {dim} must lie in 1..={ambient}"
            )));
        }
        let owner: Vec<u32> = match mode {
            BasisMode::Block => {
                if !ambient.is_multiple_of(dim) {
                    return Err(Error::config(format!(
                        "block basis needs d | D, got D={ambient}, d={dim}"
                    )));
                }
                let k = ambient / dim;
                (0..ambient).map(|i| (i / k) as u32).collect()
            }
            BasisMode::Image {
                channels,
                height,
                width,
                sub_height,
                sub_width,
            } => {
                if channels * height * width != ambient {
                    return Err(Error::config(format!(
                        "image shape {channels}x{height}x{width} does not match D={ambient}"
                    )));
                }
                if channels * sub_height * sub_width != dim {
                    return Err(Error::config(format!(
                        "sub-image shape {channels}x{sub_height}x{sub_width} does not match d={dim}"
                    )));
                }
                if sub_height == 0 || sub_width == 0 || height % sub_height != 0 || width % sub_width != 0 {
                    return Err(Error::config(format!(
                        "sub-image {sub_height}x{sub_width} must evenly divide {height}x{width}"
                    )));
                }
                let fh = height / sub_height;
                let fw = width / sub_width;
                let mut owner = Vec::with_capacity(ambient);
                for c in 0..channels {
                    for i in 0..height {
                        for j in 0..width {
                            let small = c * sub_height * sub_width + (i / fh) * sub_width + j / fw;
                            owner.push(small as u32);
                        }
                    }
                }
                owner
            }
        };
        let block = (ambient / dim) as f64;
        Ok(Self {
            ambient,
            dim,
            mode,
            owner,
            weight: 1.0 / block.sqrt(),
        })
    }

    /// Ambient dimension `D`.
    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    /// Subspace dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    /// `V xi`
    pub fn apply(&self, coeffs: &[f64]) -> RealVec {
        debug_assert_eq!(coeffs.len(), self.dim);
        RealVec::from_raw(self.owner.iter().map(|&j| self.weight * coeffs[j as usize]).collect())
    }

    /// `V^T x`
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ambient);
        let mut out = vec![0.0; self.dim];
        for (&j, v) in self.owner.iter().zip(x) {
            out[j as usize] += v;
        }
        for c in &mut out {
            *c *= self.weight;
        }
        out
    }

    /// Orthogonal projection `V V^T x` onto the subspace.
    pub fn project(&self, x: &[f64]) -> RealVec {
        self.apply(&self.coefficients(x))
    }

    /// The `j`-th basis vector `V e_j`.
    pub fn basis_vector(&self, j: usize) -> RealVec {
        let mut e = vec![0.0; self.dim];
        e[j] = 1.0;
        self.apply(&e)
    }
}
