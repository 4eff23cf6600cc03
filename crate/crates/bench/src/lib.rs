//! Fixtures shared by the benchmarks.

use vrefine_core::latent::{
    pool_mask, sample_noise, sample_noise_stream, NoiseShape, PooledMask, REFINE_STREAM,
};
use vrefine_core::tensor::{MaskVolume, VideoTensor};

/// A mask holding one rectangle that drifts right frame by frame.
pub fn moving_box_mask(frames: usize, height: usize, width: usize) -> MaskVolume {
    let mut data = vec![0u8; frames * height * width];
    for t in 0..frames {
        let x0 = (t * 7) % (width / 2);
        let y0 = height / 4;
        for y in y0..y0 + height / 2 {
            let row = (t * height + y) * width;
            data[row + x0..row + x0 + width / 3].fill(1);
        }
    }
    MaskVolume::new(frames, height, width, data).expect("consistent dims")
}

pub fn gradient_video(frames: usize, height: usize, width: usize) -> VideoTensor {
    VideoTensor::from_fn(frames, height, width, 3, |t, y, x, c| {
        (t + y * 3 + x * 5 + c * 7) as u8
    })
    .expect("consistent dims")
}

/// Two noise volumes and a pooled mask over the same latent grid.
pub fn compose_inputs(
    frames: usize,
    height: usize,
    width: usize,
    d: usize,
) -> (
    vrefine_core::latent::NoiseVolume,
    vrefine_core::latent::NoiseVolume,
    PooledMask,
) {
    let mask = moving_box_mask(frames, height, width);
    let pooled = pool_mask(&mask, d).expect("d > 0");
    let shape = NoiseShape::for_pixels(frames, height, width, 16, d);
    (
        sample_noise(shape, 0),
        sample_noise_stream(shape, 0, REFINE_STREAM),
        pooled,
    )
}
