use std::fs;

use rayon::prelude::*;

use super::{
    decode_generated, io_err, noise_shape, rank_candidates, write_container, write_json,
    CandidateSummary, PipelineError, RoundReport, RunContext,
};
use crate::backends::protocol::{GenerateRequest, OutputDims, PromptRegion, ScoreRequest};
use crate::backends::BackendRole;
use crate::latent::{
    compose_noise, make_region_spec, pool_mask, sample_noise_stream, NoiseVolume, PooledMask,
    REFINE_STREAM,
};
use crate::planning::{
    build_refinement_prompt, evaluate_video, select_key_objects, QuestionSet, RefinementPlan,
};
use crate::rps::{build_mask, RpsError};
use crate::tensor::{MaskVolume, VideoTensor};

pub struct RoundInput<'a> {
    pub round: u32,
    pub question_set: &'a QuestionSet,
    pub video: &'a VideoTensor,
    /// Noise the input video was generated from.
    pub noise: &'a NoiseVolume,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub report: RoundReport,
    /// Winning video and the noise it was generated from.
    pub winner: Option<(VideoTensor, NoiseVolume)>,
}

struct Candidate {
    summary: CandidateSummary,
    output: Option<(VideoTensor, NoiseVolume)>,
}

struct Shared<'a> {
    ctx: &'a RunContext<'a>,
    input: &'a RoundInput<'a>,
    mask: &'a MaskVolume,
    pooled: &'a PooledMask,
    regions: Vec<PromptRegion>,
    round_dir: &'a std::path::Path,
    rel_dir: String,
}

fn candidate(shared: &Shared<'_>, index: usize) -> Candidate {
    let seed = shared.ctx.config.base_seed + index as u64;
    let mut summary = CandidateSummary {
        index,
        seed,
        video_ref: None,
        noise_ref: None,
        eval_ref: None,
        dsg_score: None,
        blip_bleu: None,
        error: None,
    };
    match try_candidate(shared, index, seed, &mut summary) {
        Ok(output) => Candidate {
            summary,
            output: Some(output),
        },
        Err(e) => {
            tracing::warn!(index, seed, error = %e, "candidate failed");
            summary.error = Some(e.portable_message());
            Candidate {
                summary,
                output: None,
            }
        }
    }
}

fn try_candidate(
    shared: &Shared<'_>,
    index: usize,
    seed: u64,
    summary: &mut CandidateSummary,
) -> Result<(VideoTensor, NoiseVolume), PipelineError> {
    let ctx = shared.ctx;
    let input = shared.input;
    let backends = ctx.backends;
    let eps0 = input.noise;
    let fresh = sample_noise_stream(eps0.shape(), seed, REFINE_STREAM);
    let noise = compose_noise(eps0, &fresh, shared.pooled)?;

    let dir = shared.round_dir.join(format!("cand_{index}"));
    let rel = format!("{}/cand_{index}", shared.rel_dir);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write_container(&dir.join("noise.vrtc"), &noise.to_container())?;
    summary.noise_ref = Some(format!("{rel}/noise.vrtc"));

    let v = input.video;
    let output = OutputDims {
        frames: v.frames(),
        height: v.height(),
        width: v.width(),
        channels: v.channels(),
    };
    let req = GenerateRequest {
        prompt_regions: shared.regions.clone(),
        noise: backends.encode(&noise.to_container())?,
        output,
        seed,
        downsample: ctx.config.downsample,
        reference: Some(backends.encode(&v.to_container())?),
        preserve_mask: Some(backends.encode(&shared.mask.to_container())?),
    };
    let reply = backends.generate(&req)?;
    let video = decode_generated(backends, reply, output)?;
    write_container(&dir.join("video.vrtc"), &video.to_container())?;
    summary.video_ref = Some(format!("{rel}/video.vrtc"));

    let eval = evaluate_video(&video, input.question_set, backends, ctx.templates)?;
    write_json(&dir.join("eval.json"), &eval)?;
    summary.eval_ref = Some(format!("{rel}/eval.json"));

    let blip = if backends.has(BackendRole::Scorer) {
        let video_ref = backends.encode(&video.to_container())?;
        backends
            .score(&ScoreRequest {
                video: video_ref,
                prompt: input.question_set.prompt.clone(),
            })?
            .value
            .blip_bleu
    } else {
        0.0
    };
    summary.dsg_score = Some(eval.dsg_score);
    summary.blip_bleu = Some(blip);
    Ok((video, noise))
}

fn regions(
    ctx: &RunContext<'_>,
    plan: &RefinementPlan,
    pooled: &PooledMask,
) -> Result<Vec<PromptRegion>, PipelineError> {
    let spec = make_region_spec(plan, pooled.clone());
    let refine_weight = spec.refine_weight();
    let mut out = Vec::new();
    for (weights, prompt) in [
        (&spec.preserve_weight, &spec.preserve_prompt),
        (&refine_weight, &spec.refine_prompt),
    ] {
        if weights.data().iter().any(|&w| w > 0.0) {
            out.push(PromptRegion {
                weights: ctx.backends.encode(&weights.to_container())?,
                prompt: prompt.clone(),
            });
        }
    }
    Ok(out)
}

/// One refinement round: evaluate the input, stop if it is good enough,
/// otherwise plan, mask, and generate `k` candidates and keep the best.
pub fn run_round(
    ctx: &RunContext<'_>,
    input: RoundInput<'_>,
) -> Result<RoundOutcome, PipelineError> {
    let config = ctx.config;
    let qs = input.question_set;
    let video = input.video;
    let rel_dir = format!("round_{}", input.round);
    let round_dir = config.output_dir.join(&rel_dir);
    fs::create_dir_all(&round_dir).map_err(|e| io_err(&round_dir, e))?;
    write_container(&round_dir.join("input.vrtc"), &video.to_container())?;

    let expect = noise_shape(config);
    let got = input.noise.shape();
    if (got.frames, got.height, got.width)
        != (
            video.frames(),
            video.height().div_ceil(config.downsample),
            video.width().div_ceil(config.downsample),
        )
        || got.channels != expect.channels
    {
        return Err(PipelineError::Shape(format!(
            "input noise {got:?} does not fit a {}x{}x{} video at d={}",
            video.frames(),
            video.height(),
            video.width(),
            config.downsample
        )));
    }

    let evaluation = evaluate_video(video, qs, ctx.backends, ctx.templates)?;
    let mut report = RoundReport {
        round: input.round,
        input_video_ref: format!("{rel_dir}/input.vrtc"),
        question_set: qs.clone(),
        evaluation,
        key_objects: None,
        plan: None,
        mask_ref: None,
        mask_downgraded: false,
        candidates: Vec::new(),
        winner_index: None,
        stopped_early: false,
    };
    let score = report.evaluation.dsg_score;
    tracing::info!(
        round = input.round,
        correct = score.correct,
        total = score.total,
        "input evaluated"
    );
    if score.value() >= config.early_stop_score {
        report.stopped_early = true;
        write_json(&round_dir.join("report.json"), &report)?;
        return Ok(RoundOutcome {
            report,
            winner: None,
        });
    }

    let selection = select_key_objects(
        video,
        qs,
        &report.evaluation,
        ctx.backends,
        ctx.templates,
        config.allow_multi_object,
    )?;
    let mut plan = build_refinement_prompt(
        qs,
        &report.evaluation,
        &selection,
        ctx.backends,
        ctx.templates,
    )?;
    report.key_objects = Some(selection);

    let (t, h, w) = (video.frames(), video.height(), video.width());
    let mask = if plan.preserved_objects.is_empty() {
        MaskVolume::zeros(t, h, w)
    } else {
        match build_mask(video, &plan, ctx.backends) {
            Ok(built) => built.mask,
            Err(RpsError::EmptyMask { frame_index }) => {
                tracing::warn!(
                    frame_index,
                    "empty keyframe mask; regenerating the whole frame"
                );
                report.mask_downgraded = true;
                plan.refinement_prompt = if plan.refinement_prompt.is_empty() {
                    plan.original_prompt.clone()
                } else {
                    format!("{}, {}", plan.refinement_prompt, plan.original_prompt)
                };
                MaskVolume::zeros(t, h, w)
            }
            Err(e) => return Err(e.into()),
        }
    };
    write_container(&round_dir.join("mask.vrtc"), &mask.to_container())?;
    report.mask_ref = Some(format!("{rel_dir}/mask.vrtc"));
    write_json(&round_dir.join("plan.json"), &plan)?;

    let pooled = pool_mask(&mask, config.downsample)?;
    let shared = Shared {
        ctx,
        input: &input,
        mask: &mask,
        pooled: &pooled,
        regions: regions(ctx, &plan, &pooled)?,
        round_dir: &round_dir,
        rel_dir: rel_dir.clone(),
    };
    report.plan = Some(plan);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| PipelineError::Shape(format!("thread pool: {e}")))?;
    let mut candidates: Vec<Candidate> = pool.install(|| {
        (0..config.k)
            .into_par_iter()
            .map(|i| candidate(&shared, i))
            .collect()
    });

    let ok: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.output.is_some())
        .map(|(i, _)| i)
        .collect();
    if ok.is_empty() {
        report.candidates = candidates.into_iter().map(|c| c.summary).collect();
        write_json(&round_dir.join("report.json"), &report)?;
        return Err(PipelineError::AllCandidatesFailed { round: input.round });
    }
    let scores: Vec<_> = ok
        .iter()
        .map(|&i| {
            let s = &candidates[i].summary;
            (
                s.dsg_score.expect("succeeded"),
                s.blip_bleu.expect("succeeded"),
            )
        })
        .collect();
    let winner = ok[rank_candidates(&scores).expect("non-empty")];
    tracing::info!(round = input.round, winner, "round ranked");
    report.winner_index = Some(winner);
    let output = candidates[winner].output.take();
    report.candidates = candidates.into_iter().map(|c| c.summary).collect();
    write_json(&round_dir.join("report.json"), &report)?;
    Ok(RoundOutcome {
        report,
        winner: output,
    })
}
