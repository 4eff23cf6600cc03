//! Latent-resolution numerics for localized refinement: block-average mask
//! pooling, noise re-initialization and region/prompt pairing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::planning::RefinementPlan;
use crate::tensor::MaskVolume;

/// Latent downsample factor used when none is configured.
pub const DEFAULT_DOWNSAMPLE: usize = 8;

/// RNG stream used for fresh noise in refine regions, distinct from the
/// stream that produced the initial noise under the same seed.
pub const REFINE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("downsample factor must be at least 1")]
    ZeroDownsample,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Dims of a latent noise volume, stored `(T, C, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NoiseShape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl NoiseShape {
    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latent shape for a pixel volume of the given size at factor `d`.
    pub fn for_pixels(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        d: usize,
    ) -> Self {
        Self {
            frames,
            channels,
            height: height.div_ceil(d),
            width: width.div_ceil(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVolume {
    shape: NoiseShape,
    data: Vec<f32>,
}

impl NoiseVolume {
    pub fn new(shape: NoiseShape, data: Vec<f32>) -> Result<Self, LatentError> {
        if data.len() != shape.len() {
            return Err(LatentError::Shape(format!(
                "noise {shape:?} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LatentError::Shape(
                "noise contains non-finite values".into(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> NoiseShape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_container(&self) -> Container {
        let s = self.shape;
        let dims = [s.frames, s.channels, s.height, s.width]
            .map(|d| d as u32)
            .to_vec();
        Container::f32(dims, self.data.clone()).expect("validated length")
    }

    pub fn from_container(c: Container) -> Result<Self, LatentError> {
        let (dims, data) = c.expect_f32(4)?;
        let shape = NoiseShape {
            frames: dims[0],
            channels: dims[1],
            height: dims[2],
            width: dims[3],
        };
        Self::new(shape, data)
    }
}

/// Block-averaged mask at latent resolution, `(T, h, w)` with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMask {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PooledMask {
    pub fn filled(frames: usize, height: usize, width: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            frames,
            height,
            width,
            data: vec![value; frames * height * width],
        }
    }

    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, LatentError> {
        if data.len() != frames * height * width {
            return Err(LatentError::Shape(format!(
                "pooled mask ({frames}, {height}, {width}) with {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LatentError::Shape(format!(
                "pooled value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> f64 {
        self.data[(t * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Weight grid of the complementary (refine) region.
    pub fn complement(&self) -> PooledMask {
        PooledMask {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Nearest-neighbour expansion back to a `height x width` pixel grid, each
    /// cell filling the block it was pooled from.
    pub fn upsample_nearest(&self, height: usize, width: usize, d: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames * height * width);
        for t in 0..self.frames {
            for y in 0..height {
                for x in 0..width {
                    out.push(self.get(t, y / d, x / d));
                }
            }
        }
        out
    }

    /// f32 `(T, h, w)` container; the wire and disk representation.
    pub fn to_container(&self) -> Container {
        let dims = [self.frames, self.height, self.width]
            .map(|d| d as u32)
            .to_vec();
        Container::f32(dims, self.data.iter().map(|&v| v as f32).collect())
            .expect("validated length")
    }

    pub fn from_container(c: Container) -> Result<Self, LatentError> {
        let (dims, data) = c.expect_f32(3)?;
        Self::new(
            dims[0],
            dims[1],
            dims[2],
            data.into_iter().map(f64::from).collect(),
        )
    }
}

/// Block mean of a dense `(T, H, W)` field. Edge blocks average over the
/// pixels they actually contain.
pub fn pool_dense(
    frames: usize,
    height: usize,
    width: usize,
    values: &[f64],
    d: usize,
) -> Result<PooledMask, LatentError> {
    if d == 0 {
        return Err(LatentError::ZeroDownsample);
    }
    if values.len() != frames * height * width {
        return Err(LatentError::Shape(format!(
            "field ({frames}, {height}, {width}) with {} values",
            values.len()
        )));
    }
    let (ph, pw) = (height.div_ceil(d), width.div_ceil(d));
    let mut out = Vec::with_capacity(frames * ph * pw);
    for t in 0..frames {
        let frame = &values[t * height * width..(t + 1) * height * width];
        for by in 0..ph {
            let (y0, y1) = (by * d, ((by + 1) * d).min(height));
            for bx in 0..pw {
                let (x0, x1) = (bx * d, ((bx + 1) * d).min(width));
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += frame[y * width + x0..y * width + x1].iter().sum::<f64>();
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    PooledMask::new(frames, ph, pw, out)
}

/// Downsamples a pixel mask to latent resolution by block averaging.
pub fn pool_mask(mask: &MaskVolume, d: usize) -> Result<PooledMask, LatentError> {
    let values: Vec<f64> = mask.data().iter().map(|&v| f64::from(v)).collect();
    pool_dense(mask.frames(), mask.height(), mask.width(), &values, d)
}

/// `eps0 * pooled + eps_new * (1 - pooled)`, with the pooled mask broadcast
/// across channels. Cells with weight exactly 1 or 0 copy the corresponding
/// input bit for bit.
pub fn compose_noise(
    eps0: &NoiseVolume,
    eps_new: &NoiseVolume,
    pooled: &PooledMask,
) -> Result<NoiseVolume, LatentError> {
    let s = eps0.shape;
    if eps_new.shape != s {
        return Err(LatentError::Shape(format!(
            "noise shapes differ: {:?} vs {:?}",
            s, eps_new.shape
        )));
    }
    if (pooled.frames, pooled.height, pooled.width) != (s.frames, s.height, s.width) {
        return Err(LatentError::Shape(format!(
            "pooled mask ({}, {}, {}) does not match noise {:?}",
            pooled.frames, pooled.height, pooled.width, s
        )));
    }
    let plane = s.height * s.width;
    let mut data = Vec::with_capacity(s.len());
    for t in 0..s.frames {
        let weights = &pooled.data[t * plane..(t + 1) * plane];
        for c in 0..s.channels {
            let base = (t * s.channels + c) * plane;
            for (i, &w) in weights.iter().enumerate() {
                let (a, b) = (eps0.data[base + i], eps_new.data[base + i]);
                data.push(if w == 1.0 {
                    a
                } else if w == 0.0 {
                    b
                } else {
                    (f64::from(a) * w + f64::from(b) * (1.0 - w)) as f32
                });
            }
        }
    }
    NoiseVolume::new(s, data)
}

/// Standard-normal noise, deterministic per `(seed, stream)`.
pub fn sample_noise_stream(shape: NoiseShape, seed: u64, stream: u64) -> NoiseVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let data = (0..shape.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    NoiseVolume { shape, data }
}

pub fn sample_noise(shape: NoiseShape, seed: u64) -> NoiseVolume {
    sample_noise_stream(shape, seed, 0)
}

/// Prompt assignment over the latent grid: the pooled mask carries the
/// original prompt, its complement the refinement prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub preserve_weight: PooledMask,
    pub preserve_prompt: String,
    pub refine_prompt: String,
}

impl RegionSpec {
    pub fn refine_weight(&self) -> PooledMask {
        self.preserve_weight.complement()
    }

    /// Prompts whose region carries non-zero weight somewhere.
    pub fn active_prompts(&self) -> Vec<&str> {
        let mut out = Vec::new();
        if self.preserve_weight.data.iter().any(|&w| w > 0.0) {
            out.push(self.preserve_prompt.as_str());
        }
        if self.preserve_weight.data.iter().any(|&w| w < 1.0) {
            out.push(self.refine_prompt.as_str());
        }
        out
    }
}

/// Pairs the pooled mask with the plan's prompts. An empty refinement prompt
/// falls back to the original prompt so both regions stay non-empty.
pub fn make_region_spec(plan: &RefinementPlan, pooled: PooledMask) -> RegionSpec {
    let refine_prompt = if plan.refinement_prompt.trim().is_empty() {
        plan.original_prompt.clone()
    } else {
        plan.refinement_prompt.clone()
    };
    RegionSpec {
        preserve_weight: pooled,
        preserve_prompt: plan.original_prompt.clone(),
        refine_prompt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(t: usize, c: usize, h: usize, w: usize) -> NoiseShape {
        NoiseShape {
            frames: t,
            channels: c,
            height: h,
            width: w,
        }
    }

    #[test]
    fn pool_constant_ones() {
        let m = MaskVolume::new(1, 8, 8, vec![1; 64]).unwrap();
        let p = pool_mask(&m, 2).unwrap();
        assert_eq!((p.height(), p.width()), (4, 4));
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pool_single_block_mean() {
        let m = MaskVolume::new(1, 2, 2, vec![1, 1, 0, 0]).unwrap();
        assert_eq!(pool_mask(&m, 2).unwrap().data(), &[0.5]);
    }

    #[test]
    fn pool_edge_blocks_use_actual_pixel_count() {
        // 3x3, d=2: blocks are 2x2, 2x1, 1x2, 1x1
        let m = MaskVolume::new(1, 3, 3, vec![1, 0, 1, 0, 0, 1, 1, 1, 0]).unwrap();
        let p = pool_mask(&m, 2).unwrap();
        assert_eq!(p.data(), &[0.25, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pool_rejects_zero_factor() {
        let m = MaskVolume::zeros(1, 2, 2);
        assert!(matches!(pool_mask(&m, 0), Err(LatentError::ZeroDownsample)));
    }

    #[test]
    fn d_one_is_identity() {
        let m = MaskVolume::new(2, 2, 2, vec![1, 0, 0, 1, 1, 1, 0, 0]).unwrap();
        let p = pool_mask(&m, 1).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn compose_identity_limits() {
        let s = shape(2, 3, 2, 2);
        let a = sample_noise(s, 1);
        let b = sample_noise(s, 2);
        let ones = PooledMask::filled(2, 2, 2, 1.0);
        let zeros = PooledMask::filled(2, 2, 2, 0.0);
        assert_eq!(compose_noise(&a, &b, &ones).unwrap(), a);
        assert_eq!(compose_noise(&a, &b, &zeros).unwrap(), b);
    }

    #[test]
    fn compose_negative_zero_preserved() {
        let s = shape(1, 1, 1, 1);
        let a = NoiseVolume::new(s, vec![-0.0]).unwrap();
        let b = NoiseVolume::new(s, vec![3.0]).unwrap();
        let out = compose_noise(&a, &b, &PooledMask::filled(1, 1, 1, 1.0)).unwrap();
        assert_eq!(out.data()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn compose_shape_mismatch() {
        let a = sample_noise(shape(1, 1, 2, 2), 0);
        let b = sample_noise(shape(1, 1, 2, 3), 0);
        let p = PooledMask::filled(1, 2, 2, 0.5);
        assert!(compose_noise(&a, &b, &p).is_err());
        assert!(compose_noise(&a, &a, &PooledMask::filled(1, 3, 2, 0.5)).is_err());
    }

    #[test]
    fn noise_streams_differ() {
        let s = shape(1, 2, 4, 4);
        assert_eq!(sample_noise(s, 5), sample_noise(s, 5));
        assert_ne!(sample_noise(s, 5), sample_noise_stream(s, 5, REFINE_STREAM));
    }

    #[test]
    fn latent_shape_rounds_up() {
        let s = NoiseShape::for_pixels(16, 17, 15, 4, 4);
        assert_eq!((s.height, s.width), (5, 4));
    }

    #[test]
    fn pooled_container_round_trip() {
        let p = PooledMask::new(1, 1, 2, vec![0.25, 1.0]).unwrap();
        assert_eq!(PooledMask::from_container(p.to_container()).unwrap(), p);
    }
}
