//! Linear patch embedding with the RGB → RGB-D expansion.
//!
//! Patches are flattened channel-major (`c·256 + row·16 + col`), the layout of
//! a `[d, C, 16, 16]` convolution kernel, so the RGB columns of a 4-channel
//! weight form a contiguous prefix of each row.

use crate::error::{Error, Result};
use crate::gradcore::{Scalar, Tensor as GTensor};

pub const PATCH: usize = 16;
const PATCH_AREA: usize = PATCH * PATCH;

/// An image as `H × W × C` values in row-major, channel-last order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Image<F> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}×{width}×{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Number of patch tokens, or a shape error when a side is not a multiple of 16.
    pub fn patch_count(&self) -> Result<usize> {
        if self.height % PATCH != 0 || self.width % PATCH != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Shape(format!(
                "image {}×{} not divisible into {PATCH}×{PATCH} patches",
                self.height, self.width
            )));
        }
        Ok((self.height / PATCH) * (self.width / PATCH))
    }

    /// Rows of flattened patches, `[P × 256·C]`, patches in raster order.
    pub fn patch_matrix(&self) -> Result<GTensor<F>> {
        let p = self.patch_count()?;
        let c = self.channels;
        let per_row = self.width / PATCH;
        let cols = PATCH_AREA * c;
        let mut out = vec![F::zero(); p * cols];
        for pi in 0..p {
            let (py, px) = (pi / per_row, pi % per_row);
            let row = &mut out[pi * cols..(pi + 1) * cols];
            for ch in 0..c {
                for y in 0..PATCH {
                    for x in 0..PATCH {
                        let iy = py * PATCH + y;
                        let ix = px * PATCH + x;
                        row[ch * PATCH_AREA + y * PATCH + x] = self.data[(iy * self.width + ix) * c + ch];
                    }
                }
            }
        }
        GTensor::new(&[p, cols], out)
    }
}

/// `e = W_patch · Flatten(P) + b_patch` over 16×16 patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder<F> {
    in_channels: usize,
    weight: GTensor<F>,
    bias: GTensor<F>,
}

impl<F: Scalar> PatchEmbedder<F> {
    pub fn new(in_channels: usize, weight: GTensor<F>, bias: GTensor<F>) -> Result<Self> {
        if !(3..=4).contains(&in_channels) {
            return Err(Error::Config(format!("patch embedder needs 3 or 4 channels, got {in_channels}")));
        }
        let [d, cols] = weight.shape()[..] else {
            return Err(Error::Shape(format!("patch weight must be a matrix, got {:?}", weight.shape())));
        };
        if cols != PATCH_AREA * in_channels {
            return Err(Error::Shape(format!(
                "patch weight has {cols} columns, expected {}",
                PATCH_AREA * in_channels
            )));
        }
        if bias.shape() != [d] {
            return Err(Error::Shape(format!("patch bias {:?} for embed dim {d}", bias.shape())));
        }
        Ok(Self { in_channels, weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn embed_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn weight(&self) -> &GTensor<F> {
        &self.weight
    }

    pub fn bias(&self) -> &GTensor<F> {
        &self.bias
    }

    /// Embeds every patch of `img` into a `[P × d]` token matrix.
    pub fn embed_patches(&self, img: &Image<F>) -> Result<GTensor<F>> {
        if img.channels != self.in_channels {
            return Err(Error::Config(format!(
                "image has {} channels, embedder expects {}",
                img.channels, self.in_channels
            )));
        }
        let patches = img.patch_matrix()?;
        let p = patches.shape()[0];
        let (d, k) = (self.embed_dim(), PATCH_AREA * self.in_channels);
        let mut out = vec![F::zero(); p * d];
        crate::gradcore::matmul_t_into(patches.data(), self.weight.data(), &mut out, p, k, d);
        let b = self.bias.data();
        for row in out.chunks_mut(d) {
            row.iter_mut().zip(b).for_each(|(o, &bi)| *o = *o + bi);
        }
        GTensor::new(&[p, d], out)
    }

    /// Extends a 3-channel embedder with a depth channel whose weights are the
    /// mean of the R, G and B weights at the same spatial position.
    pub fn expand_to_rgbd(&self) -> Result<Self> {
        if self.in_channels != 3 {
            return Err(Error::Contract(format!(
                "expand_to_rgbd needs a 3-channel embedder, got {}",
                self.in_channels
            )));
        }
        let d = self.embed_dim();
        let three = F::lit(3.0);
        let old = self.weight.data();
        let (oc, nc) = (3 * PATCH_AREA, 4 * PATCH_AREA);
        let mut w = vec![F::zero(); d * nc];
        for i in 0..d {
            let src = &old[i * oc..(i + 1) * oc];
            let dst = &mut w[i * nc..(i + 1) * nc];
            dst[..oc].copy_from_slice(src);
            for s in 0..PATCH_AREA {
                dst[oc + s] = (src[s] + src[PATCH_AREA + s] + src[2 * PATCH_AREA + s]) / three;
            }
        }
        Self::new(4, GTensor::new(&[d, nc], w)?, self.bias.clone())
    }
}
