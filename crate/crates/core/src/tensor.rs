//! Pixel-space volumes: videos, single frames and preservation masks.

use crate::container::{Container, ContainerError};

fn checked_len(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn to_u32_dims(dims: &[usize]) -> Result<Vec<u32>, ContainerError> {
    dims.iter()
        .map(|&d| {
            u32::try_from(d).map_err(|_| ContainerError::Shape(format!("dim {d} exceeds u32")))
        })
        .collect()
}

/// An RGB video, row-major `(T, H, W, C)` u8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ContainerError> {
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(ContainerError::Shape(format!(
                "video dims must be positive, got ({frames}, {height}, {width}, {channels})"
            )));
        }
        let expected = checked_len(&[frames, height, width, channels])
            .ok_or_else(|| ContainerError::Shape("video size overflows".into()))?;
        if data.len() != expected {
            return Err(ContainerError::Shape(format!(
                "video data has {} bytes, dims need {expected}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> u8,
    ) -> Result<Self, ContainerError> {
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        Self::new(frames, height, width, channels, data)
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
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> &[u8] {
        let start = ((t * self.height + y) * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copies frame `t` out as a standalone image.
    pub fn frame(&self, t: usize) -> Image {
        let len = self.frame_len();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[t * len..(t + 1) * len].to_vec(),
        }
    }

    pub fn to_container(&self) -> Container {
        let dims = to_u32_dims(&[self.frames, self.height, self.width, self.channels])
            .expect("validated dims fit u32");
        Container::u8(dims, self.data.clone()).expect("validated length")
    }

    pub fn from_container(c: Container) -> Result<Self, ContainerError> {
        let (dims, data) = c.expect_u8(4)?;
        Self::new(dims[0], dims[1], dims[2], dims[3], data)
    }
}

/// A single frame, row-major `(H, W, C)` u8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ContainerError> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(ContainerError::Shape(format!(
                "image ({height}, {width}, {channels}) with {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn to_container(&self) -> Container {
        let dims =
            to_u32_dims(&[self.height, self.width, self.channels]).expect("validated dims fit u32");
        Container::u8(dims, self.data.clone()).expect("validated length")
    }

    pub fn from_container(c: Container) -> Result<Self, ContainerError> {
        let (dims, data) = c.expect_u8(3)?;
        Self::new(dims[0], dims[1], dims[2], data)
    }
}

/// Binary mask for one frame, row-major `(H, W)`, 1 = preserve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl FrameMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Builds a mask from raw values; any non-zero value counts as set.
    pub fn from_raw(height: usize, width: usize, raw: Vec<u8>) -> Result<Self, ContainerError> {
        if raw.len() != height * width {
            return Err(ContainerError::Shape(format!(
                "mask ({height}, {width}) with {} values",
                raw.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: raw.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)`, clipped to the frame.
    pub fn rect(height: usize, width: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mut m = Self::zeros(height, width);
        for y in y0.min(height)..y1.min(height) {
            for x in x0.min(width)..x1.min(width) {
                m.data[y * width + x] = 1;
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn union_with(&mut self, other: &FrameMask) {
        assert_eq!((self.height, self.width), (other.height, other.width));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_container(&self) -> Container {
        let dims = to_u32_dims(&[self.height, self.width]).expect("dims fit u32");
        Container::u8(dims, self.data.clone()).expect("validated length")
    }

    pub fn from_container(c: Container) -> Result<Self, ContainerError> {
        let (dims, data) = c.expect_u8(2)?;
        Self::from_raw(dims[0], dims[1], data)
    }
}

/// Frame-wise preservation mask, row-major `(T, H, W)` with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskVolume {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![0; frames * height * width],
        }
    }

    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<u8>,
    ) -> Result<Self, ContainerError> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(ContainerError::Shape("mask dims must be positive".into()));
        }
        if data.len() != frames * height * width {
            return Err(ContainerError::Shape(format!(
                "mask ({frames}, {height}, {width}) with {} values",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(ContainerError::Shape(format!(
                "mask value {bad} is not binary"
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    /// Stacks per-frame masks into a volume.
    pub fn from_frames(frames: &[FrameMask]) -> Result<Self, ContainerError> {
        let first = frames
            .first()
            .ok_or_else(|| ContainerError::Shape("no frames".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(frames.len() * h * w);
        for f in frames {
            if (f.height, f.width) != (h, w) {
                return Err(ContainerError::Shape("frame masks differ in size".into()));
            }
            data.extend_from_slice(&f.data);
        }
        Self::new(frames.len(), h, w, data)
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
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> u8 {
        self.data[(t * self.height + y) * self.width + x]
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let len = self.height * self.width;
        &self.data[t * len..(t + 1) * len]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_container(&self) -> Container {
        let dims = to_u32_dims(&[self.frames, self.height, self.width]).expect("dims fit u32");
        Container::u8(dims, self.data.clone()).expect("validated length")
    }

    pub fn from_container(c: Container) -> Result<Self, ContainerError> {
        let (dims, data) = c.expect_u8(3)?;
        Self::new(dims[0], dims[1], dims[2], data)
    }
}
