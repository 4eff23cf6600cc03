//! Typed request and reply bodies for the v1 endpoints.

use serde::{Deserialize, Serialize};

use super::wire::TensorRef;
use crate::planning::{PreservedObject, Question, SemanticTuple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub prompt: String,
    pub instruction: String,
}

/// Raw planner reply; entries are sanitized by the planning module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReply {
    pub tuples: Vec<SemanticTuple>,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    Refine,
    Paraphrase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinePromptRequest {
    pub mode: RefineMode,
    pub prompt: String,
    pub questions: Vec<String>,
    pub preserved: Vec<PreservedObject>,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinePromptReply {
    pub refinement_prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEvidence {
    pub question: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvidence {
    pub object: String,
    pub num_correct: u32,
    pub num_total: u32,
    pub answers: Vec<AnswerEvidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum VqaRequest {
    AnswerCount {
        question_id: String,
        question: String,
        object: String,
        n_p: u32,
        instruction: String,
        image: TensorRef,
    },
    AnswerAttribute {
        question_id: String,
        question: String,
        object: String,
        instruction: String,
        image: TensorRef,
    },
    SelectObjects {
        objects: Vec<ObjectEvidence>,
        allow_multi: bool,
        instruction: String,
        image: TensorRef,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountAnswer {
    pub answer: YesNo,
    pub n_v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_p: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAnswer {
    pub answer: YesNo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSelection {
    pub objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

/// Fractional image coordinates, `x` along columns and `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRequest {
    pub image: TensorRef,
    pub prompt: String,
    pub object: String,
    pub count: u32,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReply {
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: TensorRef,
    pub point: Point,
    pub object: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReply {
    pub mask: TensorRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRegion {
    /// `(T, h, w)` f32 weights at latent resolution.
    pub weights: TensorRef,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt_regions: Vec<PromptRegion>,
    /// `(T, C, h, w)` f32 initial latent noise.
    pub noise: TensorRef,
    pub output: OutputDims,
    pub seed: u64,
    pub downsample: usize,
    /// Video whose pixels under `preserve_mask` must be kept.
    #[serde(default)]
    pub reference: Option<TensorRef>,
    /// `(T, H, W)` u8 pixel mask, 1 = preserve.
    #[serde(default)]
    pub preserve_mask: Option<TensorRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReply {
    pub video: TensorRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub video: TensorRef,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub blip_bleu: f64,
}
