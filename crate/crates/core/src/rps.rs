//! Region-preserving segmentation: point at the preserved objects on a few
//! keyframes, segment each point, and spread the keyframe masks over time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::protocol::{Point, PointRequest, SegmentRequest};
use crate::backends::{BackendError, Backends};
use crate::planning::RefinementPlan;
use crate::tensor::{FrameMask, MaskVolume, VideoTensor};

#[derive(Debug, Error)]
pub enum RpsError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("keyframe {frame_index} produced an empty mask")]
    EmptyMask { frame_index: usize },
    #[error("plan preserves no objects")]
    NothingToPreserve,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Frames `0, s, 2s, 3s` with `s = floor(T / 4)`; shorter videos use every
/// frame.
pub fn sample_keyframes(frames: usize) -> Vec<usize> {
    if frames >= 4 {
        let s = frames / 4;
        vec![0, s, 2 * s, 3 * s]
    } else {
        (0..frames).collect()
    }
}

pub fn pointing_prompt(object: &str, count: u32) -> Result<String, RpsError> {
    if count == 0 {
        return Err(RpsError::InvalidInput(
            "cannot point at zero instances".into(),
        ));
    }
    if object.trim().is_empty() {
        return Err(RpsError::InvalidInput("object name is empty".into()));
    }
    Ok(format!("Point the biggest {count} {object}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub frame_index: usize,
    pub object: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuild {
    pub mask: MaskVolume,
    pub keyframes: Vec<usize>,
    pub point_sets: Vec<PointSet>,
}

/// Every frame takes the mask of the latest keyframe at or before it.
pub fn replicate_keyframe_masks(
    keyframes: &[usize],
    masks: &[FrameMask],
    frames: usize,
) -> Result<MaskVolume, RpsError> {
    if keyframes.is_empty() || keyframes.len() != masks.len() {
        return Err(RpsError::InvalidInput(format!(
            "{} keyframes with {} masks",
            keyframes.len(),
            masks.len()
        )));
    }
    if keyframes[0] != 0 || keyframes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RpsError::InvalidInput(
            "keyframes must start at 0 and increase".into(),
        ));
    }
    if keyframes[keyframes.len() - 1] >= frames {
        return Err(RpsError::InvalidInput(
            "keyframe beyond the last frame".into(),
        ));
    }
    let mut per_frame = Vec::with_capacity(frames);
    let mut k = 0;
    for t in 0..frames {
        while k + 1 < keyframes.len() && keyframes[k + 1] <= t {
            k += 1;
        }
        per_frame.push(masks[k].clone());
    }
    MaskVolume::from_frames(&per_frame).map_err(|e| RpsError::InvalidInput(e.to_string()))
}

fn keyframe_mask(
    video: &VideoTensor,
    frame_index: usize,
    plan: &RefinementPlan,
    backends: &Backends,
) -> Result<(FrameMask, Vec<PointSet>), RpsError> {
    let (h, w) = (video.height(), video.width());
    let image = backends.encode(&video.frame(frame_index).to_container())?;
    let mut mask = FrameMask::zeros(h, w);
    let mut sets = Vec::new();
    for obj in &plan.preserved_objects {
        let req = PointRequest {
            image: image.clone(),
            prompt: pointing_prompt(&obj.object, obj.count)?,
            object: obj.object.clone(),
            count: obj.count,
            frame_index,
        };
        let reply = backends.point(&req)?;
        let mut points = reply.value.points;
        points.truncate(obj.count as usize);
        for &point in &points {
            let seg = backends.segment(&SegmentRequest {
                image: image.clone(),
                point,
                object: obj.object.clone(),
                frame_index,
            })?;
            let segmenter = backends.client(crate::backends::BackendRole::Segmenter)?;
            let container = segmenter.decode_tensor(&seg.value.mask, &seg.raw)?;
            let m = FrameMask::from_container(container)
                .map_err(|e| segmenter.reject(format!("segment mask: {e}"), &seg.raw))?;
            if (m.height(), m.width()) != (h, w) {
                return Err(segmenter
                    .reject(
                        format!("mask is {}x{}, frame is {h}x{w}", m.height(), m.width()),
                        &seg.raw,
                    )
                    .into());
            }
            mask.union_with(&m);
        }
        sets.push(PointSet {
            frame_index,
            object: obj.object.clone(),
            points,
        });
    }
    if mask.count() == 0 {
        return Err(RpsError::EmptyMask { frame_index });
    }
    Ok((mask, sets))
}

/// Builds the pixel preservation mask for every preserved object.
pub fn build_mask(
    video: &VideoTensor,
    plan: &RefinementPlan,
    backends: &Backends,
) -> Result<MaskBuild, RpsError> {
    if plan.preserved_objects.is_empty() {
        return Err(RpsError::NothingToPreserve);
    }
    let keyframes = sample_keyframes(video.frames());
    let results: Vec<_> = keyframes
        .par_iter()
        .map(|&k| keyframe_mask(video, k, plan, backends))
        .collect();
    let mut masks = Vec::with_capacity(keyframes.len());
    let mut point_sets = Vec::new();
    for r in results {
        let (m, sets) = r?;
        masks.push(m);
        point_sets.extend(sets);
    }
    let mask = replicate_keyframe_masks(&keyframes, &masks, video.frames())?;
    tracing::info!(pixels = mask.count(), "preservation mask built");
    Ok(MaskBuild {
        mask,
        keyframes,
        point_sets,
    })
}
