use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use vrefine_core::backends::conformance::run_conformance;
use vrefine_core::backends::{BackendError, BackendRole, Backends};
use vrefine_core::config::PipelineConfig;
use vrefine_core::latent::NoiseVolume;
use vrefine_core::pipeline::{replay_round, run_pipeline_from, InitialVideo, RoundReport};
use vrefine_core::planning::{evaluate_video, generate_question_set, QuestionSet, RefinementPlan};
use vrefine_core::rps::build_mask;
use vrefine_core::templates::TemplateSet;
use vrefine_core::tensor::{MaskVolume, VideoTensor};

use crate::args::{Command, EvaluateArgs, Global, MaskArgs, RoundDirArgs, RunArgs};
use crate::{format_score, read_container, read_typed, score_json, CliError, Output, CONFIG_ENV};

/// Config file (from `--config` or the environment), then backend flags,
/// then `overrides`; the merged result is checked against the schema.
pub fn resolve_config(
    global: &Global,
    overrides: impl FnOnce(&mut PipelineConfig),
) -> Result<PipelineConfig, CliError> {
    let path = global.config.clone().or_else(|| {
        std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(&p)?,
        None => PipelineConfig::default(),
    };
    cfg.backends.extend(global.backends.bound());
    overrides(&mut cfg);
    let merged = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(PipelineConfig::from_value(merged)?)
}

fn require(cfg: &PipelineConfig, roles: &[BackendRole]) -> Result<(), CliError> {
    match roles.iter().find(|r| !cfg.backends.contains_key(r)) {
        Some(&r) => Err(BackendError::Unbound(r).into()),
        None => Ok(()),
    }
}

fn connect(cfg: &PipelineConfig) -> Result<(Backends, TemplateSet), CliError> {
    let templates =
        TemplateSet::load(&cfg.templates).map_err(|e| CliError::Config(e.to_string()))?;
    let backends = Backends::from_endpoints(&cfg.backends, &cfg.http_options(), cfg.wire_codec())
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((backends, templates))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn read_noise(path: &Path) -> Result<NoiseVolume, CliError> {
    NoiseVolume::from_container(read_container(path)?).map_err(|e| CliError::FileFormat {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

pub fn dispatch(command: &Command, global: &Global, out: Output) -> Result<(), CliError> {
    match command {
        Command::Run(a) => run(a, global, out),
        Command::Evaluate(a) => evaluate(a, global, out),
        Command::Mask(a) => mask(a, global, out),
        Command::Rank(a) => rank(a, out),
        Command::Replay(a) => replay(a, out),
        Command::Conformance => conformance(global, out),
    }
}

fn run(a: &RunArgs, global: &Global, out: Output) -> Result<(), CliError> {
    let cfg = resolve_config(global, |c| {
        if let Some(k) = a.k {
            c.k = k;
        }
        if let Some(n) = a.iterations {
            c.max_iterations = n;
        }
        if let Some(s) = a.seed {
            c.base_seed = s;
        }
        if let Some(o) = &a.out {
            c.output_dir = o.clone();
        }
    })?;
    let mut needed = vec![BackendRole::LlmPlanner, BackendRole::Vqa];
    if a.video.is_none() {
        needed.insert(0, BackendRole::T2v);
    }
    require(&cfg, &needed)?;
    let (backends, templates) = connect(&cfg)?;
    let initial = match &a.video {
        None => InitialVideo::Generate,
        Some(v) => InitialVideo::Given {
            video: read_typed(v, VideoTensor::from_container)?,
            noise: a.noise.as_deref().map(read_noise).transpose()?,
        },
    };

    let result = run_pipeline_from(&a.prompt, initial, &cfg, &backends, &templates)?;
    for r in &result.rounds {
        let entry = r.evaluation.dsg_score;
        let winner = r.winner_index.map(|w| &r.candidates[w]);
        out.emit(
            || match winner {
                _ if r.stopped_early => {
                    format!(
                        "round {}: entry {}; stopped early",
                        r.round,
                        format_score(entry)
                    )
                }
                Some(c) => format!(
                    "round {}: entry {}; winner cand_{} {} blip_bleu={} -> {}",
                    r.round,
                    format_score(entry),
                    c.index,
                    c.dsg_score.map(format_score).unwrap_or_default(),
                    c.blip_bleu.unwrap_or(0.0),
                    c.video_ref.as_deref().unwrap_or("-"),
                ),
                None => format!(
                    "round {}: entry {}; no winner",
                    r.round,
                    format_score(entry)
                ),
            },
            || {
                json!({
                    "event": "round",
                    "round": r.round,
                    "entry": score_json(entry),
                    "stopped_early": r.stopped_early,
                    "mask_downgraded": r.mask_downgraded,
                    "winner_index": r.winner_index,
                    "winner": winner.map(|c| json!({
                        "seed": c.seed,
                        "dsg": c.dsg_score.map(score_json),
                        "blip_bleu": c.blip_bleu,
                        "video": c.video_ref,
                    })),
                })
            },
        );
    }
    let s = &result.summary;
    let final_path = cfg.output_dir.join("final.vrtc");
    out.emit(
        || {
            format!(
                "final: {} -> {} ({})",
                s.final_dsg_score
                    .map(format_score)
                    .unwrap_or_else(|| "dsg=?".into()),
                s.final_video_ref,
                final_path.display()
            )
        },
        || {
            json!({
                "event": "final",
                "rounds": s.rounds,
                "dsg": s.final_dsg_score.map(score_json),
                "video": s.final_video_ref,
                "final_path": final_path,
                "stopped_early": s.stopped_early,
                "target_reached": s.target_reached,
            })
        },
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs, global: &Global, out: Output) -> Result<(), CliError> {
    let cfg = resolve_config(global, |_| {})?;
    let mut needed = vec![BackendRole::Vqa];
    if a.question_set.is_none() {
        needed.push(BackendRole::LlmPlanner);
    }
    require(&cfg, &needed)?;
    let (backends, templates) = connect(&cfg)?;
    let video = read_typed(&a.video, VideoTensor::from_container)?;
    let qs: QuestionSet = match &a.question_set {
        Some(p) => read_json(p)?,
        None => generate_question_set(&a.prompt, &backends, &templates)?,
    };
    let report = evaluate_video(&video, &qs, &backends, &templates)?;
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(p, text + "\n").map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))?;
    }
    out.emit(
        || {
            let mut lines = vec![format_score(report.dsg_score)];
            for ans in &report.answers {
                let q = qs
                    .question(&ans.question_id)
                    .map(|q| q.text.as_str())
                    .unwrap_or("");
                let note = if !ans.valid {
                    " (skipped: prerequisite failed)"
                } else if ans.parse_failed {
                    " (unusable reply)"
                } else {
                    ""
                };
                lines.push(format!("  {} b={} {q}{note}", ans.question_id, ans.binary));
            }
            lines.join("\n")
        },
        || json!({"event": "evaluation", "dsg": score_json(report.dsg_score), "report": report}),
    );
    Ok(())
}

fn mask(a: &MaskArgs, global: &Global, out: Output) -> Result<(), CliError> {
    let plan: RefinementPlan = read_json(&a.plan)?;
    let video = read_typed(&a.video, VideoTensor::from_container)?;
    let (mask, keyframes) = if plan.preserved_objects.is_empty() {
        (
            MaskVolume::zeros(video.frames(), video.height(), video.width()),
            Vec::new(),
        )
    } else {
        let cfg = resolve_config(global, |_| {})?;
        require(&cfg, &[BackendRole::Pointer, BackendRole::Segmenter])?;
        let (backends, _) = connect(&cfg)?;
        let built = build_mask(&video, &plan, &backends)?;
        (built.mask, built.keyframes)
    };
    mask.to_container()
        .write_file(&a.out)
        .map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    let pixels = mask.count();
    out.emit(
        || format!("pixels={pixels} frames={} keyframes={keyframes:?} -> {}", mask.frames(), a.out.display()),
        || json!({"event": "mask", "pixels": pixels, "frames": mask.frames(), "keyframes": keyframes, "path": a.out}),
    );
    Ok(())
}

/// Loads the stored report and checks that every container it references
/// decodes.
fn load_round(round_dir: &Path) -> Result<RoundReport, CliError> {
    let report: RoundReport = read_json(&round_dir.join("report.json"))?;
    let run_dir = round_dir.parent().unwrap_or(Path::new("."));
    let refs = std::iter::once(Some(&report.input_video_ref))
        .chain([report.mask_ref.as_ref()])
        .chain(
            report
                .candidates
                .iter()
                .flat_map(|c| [c.video_ref.as_ref(), c.noise_ref.as_ref()]),
        );
    for r in refs.flatten() {
        read_container(&run_dir.join(r))?;
    }
    Ok(report)
}

fn rank(a: &RoundDirArgs, out: Output) -> Result<(), CliError> {
    let report = load_round(&a.round_dir)?;
    let replayed = replay_round(&a.round_dir)?;
    let winner = replayed.winner_index.map(|w| &report.candidates[w]);
    out.emit(
        || match winner {
            Some(c) => format!(
                "winner_index={} seed={} {} -> {}",
                c.index,
                c.seed,
                c.dsg_score.map(format_score).unwrap_or_default(),
                c.video_ref.as_deref().unwrap_or("-")
            ),
            None => "winner_index=none".into(),
        },
        || {
            json!({
                "event": "rank",
                "round": report.round,
                "winner_index": replayed.winner_index,
                "stored_winner_index": report.winner_index,
                "seed": winner.map(|c| c.seed),
                "video": winner.and_then(|c| c.video_ref.clone()),
            })
        },
    );
    if replayed.winner_index != report.winner_index {
        return Err(CliError::Failed(format!(
            "re-ranked winner {:?} differs from the stored {:?}",
            replayed.winner_index, report.winner_index
        )));
    }
    Ok(())
}

fn replay(a: &RoundDirArgs, out: Output) -> Result<(), CliError> {
    let report = load_round(&a.round_dir)?;
    let replayed = replay_round(&a.round_dir)?;
    let same_winner = replayed.winner_index == report.winner_index;
    out.emit(
        || {
            format!(
                "winner_index={:?} report_identical={}",
                replayed.winner_index, replayed.report_identical
            )
        },
        || {
            json!({
                "event": "replay",
                "round": report.round,
                "winner_index": replayed.winner_index,
                "report_identical": replayed.report_identical,
            })
        },
    );
    if same_winner && replayed.report_identical {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "replay of {} does not reproduce the stored report",
            a.round_dir.display()
        )))
    }
}

fn conformance(global: &Global, out: Output) -> Result<(), CliError> {
    let cfg = resolve_config(global, |_| {})?;
    if cfg.backends.is_empty() {
        return Err(CliError::Config("no backends bound".into()));
    }
    let checks = run_conformance(&cfg.backends, &cfg.http_options(), cfg.wire_codec())
        .map_err(|e| CliError::Config(e.to_string()))?;
    for c in &checks {
        out.emit(
            || {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                let detail = if c.detail.is_empty() {
                    String::new()
                } else {
                    format!(": {}", c.detail)
                };
                format!("{verdict} {} {}{detail}", c.role, c.name)
            },
            || json!({"event": "check", "check": c}),
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Backend(format!(
            "{failed} of {} conformance checks failed",
            checks.len()
        )))
    }
}
