use crate::rps::sample_keyframes;
use crate::tensor::{Image, VideoTensor};

/// Tiles four sampled frames into one `2H x 2W` image in reading order.
/// Videos with fewer than four frames repeat their frames cyclically.
pub fn frame_grid(video: &VideoTensor) -> Image {
    let keyframes = sample_keyframes(video.frames());
    let picks: Vec<usize> = (0..4).map(|i| keyframes[i % keyframes.len()]).collect();
    let (h, w, c) = (video.height(), video.width(), video.channels());
    let row_len = w * c;
    let mut data = vec![0u8; 4 * h * w * c];
    for (slot, &t) in picks.iter().enumerate() {
        let (gy, gx) = (slot / 2, slot % 2);
        let frame = video.frame(t);
        for y in 0..h {
            let src = &frame.data()[y * row_len..(y + 1) * row_len];
            let dst_start = ((gy * h + y) * 2 * w + gx * w) * c;
            data[dst_start..dst_start + row_len].copy_from_slice(src);
        }
    }
    Image::new(2 * h, 2 * w, c, data).expect("grid dims are consistent")
}
