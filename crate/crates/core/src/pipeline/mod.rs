//! Orchestration of refinement rounds and the on-disk run layout.
//!
//! ```text
//! <out>/question_set.json
//! <out>/round_<r>/input.vrtc   mask.vrtc   plan.json   report.json
//! <out>/round_<r>/cand_<i>/noise.vrtc   video.vrtc   eval.json
//! <out>/final.vrtc             summary.json
//! ```

mod round;

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::protocol::{GenerateRequest, OutputDims, PromptRegion};
use crate::backends::{BackendError, BackendRole, Backends};
use crate::config::PipelineConfig;
use crate::container::{Container, ContainerError};
use crate::latent::{sample_noise, LatentError, NoiseShape, NoiseVolume, PooledMask};
use crate::planning::{
    generate_question_set, DsgScore, EvaluationReport, KeyObjectSelection, PlanningError,
    QuestionSet, RefinementPlan,
};
use crate::rps::RpsError;
use crate::templates::TemplateSet;
use crate::tensor::VideoTensor;

pub use round::{run_round, RoundInput, RoundOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Rps(#[from] RpsError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("every candidate in round {round} failed")]
    AllCandidatesFailed { round: u32 },
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    Replay(String),
}

impl PipelineError {
    /// Whether the failure came from a model backend.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            PipelineError::Backend(_)
                | PipelineError::Planning(PlanningError::Backend(_))
                | PipelineError::Rps(RpsError::Backend(_))
                | PipelineError::AllCandidatesFailed { .. }
        )
    }

    /// Error text without backend locations, as recorded in reports.
    pub fn portable_message(&self) -> String {
        match self {
            PipelineError::Backend(e)
            | PipelineError::Planning(PlanningError::Backend(e))
            | PipelineError::Rps(RpsError::Backend(e)) => e.portable_message(),
            other => other.to_string(),
        }
    }

    /// The unbound role, when that is what went wrong.
    pub fn unbound_role(&self) -> Option<BackendRole> {
        let inner = match self {
            PipelineError::Backend(e)
            | PipelineError::Planning(PlanningError::Backend(e))
            | PipelineError::Rps(RpsError::Backend(e)) => e,
            _ => return None,
        };
        match inner {
            BackendError::Unbound(r) => Some(*r),
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub(crate) fn write_container(path: &Path, c: &Container) -> Result<(), PipelineError> {
    c.write_file(path).map_err(|e| io_err(path, e))
}

pub fn read_video(path: &Path) -> Result<VideoTensor, PipelineError> {
    Container::read_file(path)
        .and_then(VideoTensor::from_container)
        .map_err(|e: ContainerError| io_err(path, e))
}

pub fn read_noise(path: &Path) -> Result<NoiseVolume, PipelineError> {
    let c = Container::read_file(path).map_err(|e| io_err(path, e))?;
    NoiseVolume::from_container(c).map_err(|e| io_err(path, e))
}

/// Everything a round needs besides its input.
pub struct RunContext<'a> {
    pub config: &'a PipelineConfig,
    pub backends: &'a Backends,
    pub templates: &'a TemplateSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub seed: u64,
    pub video_ref: Option<String>,
    pub noise_ref: Option<String>,
    pub eval_ref: Option<String>,
    pub dsg_score: Option<DsgScore>,
    pub blip_bleu: Option<f64>,
    pub error: Option<String>,
}

impl CandidateSummary {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.dsg_score.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub input_video_ref: String,
    pub question_set: QuestionSet,
    pub evaluation: EvaluationReport,
    pub key_objects: Option<KeyObjectSelection>,
    pub plan: Option<RefinementPlan>,
    pub mask_ref: Option<String>,
    pub mask_downgraded: bool,
    pub candidates: Vec<CandidateSummary>,
    pub winner_index: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub prompt: String,
    pub rounds: u32,
    pub final_video_ref: String,
    pub final_dsg_score: Option<DsgScore>,
    pub stopped_early: bool,
    pub target_reached: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub final_video: VideoTensor,
    pub rounds: Vec<RoundReport>,
    pub summary: RunSummary,
}

/// Orders candidates by DSG score, then BLIP-BLEU, both descending; equal
/// candidates keep their generation order. Returns the winning position.
pub fn rank_candidates(scores: &[(DsgScore, f64)]) -> Option<usize> {
    let indexed: Vec<(usize, DsgScore, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &(d, b))| (i, d, b))
        .collect();
    rank_indexed(&indexed)
}

/// Like [`rank_candidates`] for entries in any order, each carrying its
/// candidate index as the final tie-break. Returns the winning position in
/// `entries`.
pub fn rank_indexed(entries: &[(usize, DsgScore, f64)]) -> Option<usize> {
    (0..entries.len()).min_by(|&a, &b| {
        let (ia, da, ba) = entries[a];
        let (ib, db, bb) = entries[b];
        compare_candidates((da, ba), (db, bb)).then(ia.cmp(&ib))
    })
}

/// `Less` means `a` ranks ahead of `b`.
pub fn compare_candidates(a: (DsgScore, f64), b: (DsgScore, f64)) -> Ordering {
    b.0.cmp(&a.0).then_with(|| b.1.total_cmp(&a.1))
}

/// Generation request for a fresh video covering the whole frame with one
/// prompt.
pub fn initial_request(
    prompt: &str,
    config: &PipelineConfig,
    backends: &Backends,
    noise: &NoiseVolume,
) -> Result<GenerateRequest, PipelineError> {
    let s = noise.shape();
    let ones = PooledMask::filled(s.frames, s.height, s.width, 1.0);
    let v = config.video;
    Ok(GenerateRequest {
        prompt_regions: vec![PromptRegion {
            weights: backends.encode(&ones.to_container())?,
            prompt: prompt.to_owned(),
        }],
        noise: backends.encode(&noise.to_container())?,
        output: OutputDims {
            frames: v.frames,
            height: v.height,
            width: v.width,
            channels: v.channels,
        },
        seed: config.base_seed,
        downsample: config.downsample,
        reference: None,
        preserve_mask: None,
    })
}

pub fn noise_shape(config: &PipelineConfig) -> NoiseShape {
    let v = config.video;
    NoiseShape::for_pixels(
        v.frames,
        v.height,
        v.width,
        config.latent_channels,
        config.downsample,
    )
}

/// Decodes a generated video and checks it has the requested dims.
pub(crate) fn decode_generated(
    backends: &Backends,
    reply: crate::backends::Reply<crate::backends::protocol::GenerateReply>,
    expect: OutputDims,
) -> Result<VideoTensor, PipelineError> {
    let client = backends.client(BackendRole::T2v)?;
    let c = client.decode_tensor(&reply.value.video, &reply.raw)?;
    let video = VideoTensor::from_container(c)
        .map_err(|e| client.reject(format!("video: {e}"), &reply.raw))?;
    let got = (
        video.frames(),
        video.height(),
        video.width(),
        video.channels(),
    );
    if got != (expect.frames, expect.height, expect.width, expect.channels) {
        return Err(client
            .reject(
                format!("video dims {got:?} differ from the request {expect:?}"),
                &reply.raw,
            )
            .into());
    }
    Ok(video)
}

/// Where the first round's input comes from.
#[derive(Debug, Clone)]
pub enum InitialVideo {
    /// Generate it from the prompt with noise drawn from `base_seed`.
    Generate,
    /// Start from an existing video. Without a noise volume, the noise
    /// drawn from `base_seed` at the video's latent shape is used.
    Given {
        video: VideoTensor,
        noise: Option<NoiseVolume>,
    },
}

/// Generates the initial video, then refines it for up to
/// `max_iterations` rounds.
pub fn run_pipeline(
    prompt: &str,
    config: &PipelineConfig,
    backends: &Backends,
    templates: &TemplateSet,
) -> Result<PipelineResult, PipelineError> {
    run_pipeline_from(prompt, InitialVideo::Generate, config, backends, templates)
}

/// Refines `initial` for up to `max_iterations` rounds. The run ends early
/// when a round's input already meets `early_stop_score`, or when a round's
/// winner does.
pub fn run_pipeline_from(
    prompt: &str,
    initial: InitialVideo,
    config: &PipelineConfig,
    backends: &Backends,
    templates: &TemplateSet,
) -> Result<PipelineResult, PipelineError> {
    config
        .validate()
        .map_err(|e| PipelineError::Shape(e.to_string()))?;
    backends.require(&[BackendRole::LlmPlanner, BackendRole::Vqa])?;
    if matches!(initial, InitialVideo::Generate) {
        backends.require(&[BackendRole::T2v])?;
    }
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let qs = generate_question_set(prompt, backends, templates)?;
    write_json(&out.join("question_set.json"), &qs)?;

    let (mut video, mut noise) = match initial {
        InitialVideo::Generate => {
            let eps0 = sample_noise(noise_shape(config), config.base_seed);
            let req = initial_request(prompt, config, backends, &eps0)?;
            let reply = backends.generate(&req)?;
            let video = decode_generated(backends, reply, req.output)?;
            tracing::info!(prompt, "initial video generated");
            (video, eps0)
        }
        InitialVideo::Given { video, noise } => {
            let shape = NoiseShape::for_pixels(
                video.frames(),
                video.height(),
                video.width(),
                config.latent_channels,
                config.downsample,
            );
            let noise = match noise {
                Some(n) if n.shape() == shape => n,
                Some(n) => {
                    return Err(PipelineError::Shape(format!(
                        "noise shape {:?} does not match the video's latent shape {shape:?}",
                        n.shape()
                    )))
                }
                None => sample_noise(shape, config.base_seed),
            };
            (video, noise)
        }
    };

    let ctx = RunContext {
        config,
        backends,
        templates,
    };
    let mut rounds = Vec::new();
    let mut final_ref = None;
    let mut final_score = None;
    let mut stopped_early = false;
    for r in 1..=config.max_iterations {
        let outcome = run_round(
            &ctx,
            RoundInput {
                round: r,
                question_set: &qs,
                video: &video,
                noise: &noise,
            },
        )?;
        let report = outcome.report;
        stopped_early = report.stopped_early;
        if stopped_early {
            final_score = Some(report.evaluation.dsg_score);
            final_ref = Some(report.input_video_ref.clone());
            rounds.push(report);
            break;
        }
        let (winner_video, winner_noise) = outcome.winner.expect("a finished round has a winner");
        let w = report.winner_index.expect("winner recorded");
        let cand = &report.candidates[w];
        final_score = cand.dsg_score;
        final_ref = cand.video_ref.clone();
        video = winner_video;
        noise = winner_noise;
        rounds.push(report);
        if final_score.is_some_and(|s| s.value() >= config.early_stop_score) {
            tracing::info!(round = r, "winner reached the target score");
            break;
        }
    }

    write_container(&out.join("final.vrtc"), &video.to_container())?;
    let summary = RunSummary {
        prompt: prompt.to_owned(),
        rounds: rounds.len() as u32,
        final_video_ref: final_ref.unwrap_or_else(|| "final.vrtc".into()),
        final_dsg_score: final_score,
        stopped_early,
        target_reached: final_score.is_some_and(|s| s.value() >= config.early_stop_score),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(PipelineResult {
        final_video: video,
        rounds,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub winner_index: Option<usize>,
    pub report_identical: bool,
}

/// Re-ranks a persisted round from its candidate evaluations and checks
/// that the regenerated report matches the stored one byte for byte.
pub fn replay_round(round_dir: &Path) -> Result<ReplayOutcome, PipelineError> {
    let report_path = round_dir.join("report.json");
    let stored = fs::read(&report_path).map_err(|e| io_err(&report_path, e))?;
    let mut report: RoundReport = read_json(&report_path)?;
    let run_dir = round_dir.parent().unwrap_or(Path::new("."));

    let mut entries = Vec::new();
    for cand in report.candidates.iter_mut() {
        let Some(eval_ref) = &cand.eval_ref else {
            continue;
        };
        if !cand.succeeded() {
            continue;
        }
        let eval: EvaluationReport = read_json(&run_dir.join(eval_ref))?;
        let stored_score = cand.dsg_score.map(|s| (s.correct, s.total));
        if stored_score != Some((eval.dsg_score.correct, eval.dsg_score.total)) {
            return Err(PipelineError::Replay(format!(
                "candidate {} score differs from {eval_ref}",
                cand.index
            )));
        }
        entries.push((cand.index, eval.dsg_score, cand.blip_bleu.unwrap_or(0.0)));
    }
    report.winner_index = rank_indexed(&entries).map(|p| entries[p].0);
    let mut regenerated = serde_json::to_string_pretty(&report).expect("serializes");
    regenerated.push('\n');
    Ok(ReplayOutcome {
        winner_index: report.winner_index,
        report_identical: regenerated.as_bytes() == stored.as_slice(),
    })
}
