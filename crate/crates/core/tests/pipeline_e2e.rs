mod common;

use vrefine_core::backends::mock::demo::{
    self, GOLDEN_BEAR_RECTS, GOLDEN_REFINEMENT, TWO_ROUND_BEAR_RECT, TWO_ROUND_PEOPLE_RECTS,
};
use vrefine_core::backends::BackendRole;
use vrefine_core::container::Container;
use vrefine_core::latent::{pool_mask, sample_noise, NoiseShape, NoiseVolume};
use vrefine_core::pipeline::{
    read_video, replay_round, run_pipeline, run_pipeline_from, run_round, InitialVideo,
    PipelineError, RoundInput, RunContext,
};
use vrefine_core::planning::{contains_word, DsgScore};
use vrefine_core::templates::TemplateSet;
use vrefine_core::tensor::{MaskVolume, VideoTensor};

fn mask_at(h: &common::Harness, rel: &str) -> MaskVolume {
    let c = Container::read_file(h.out().join(rel)).unwrap();
    MaskVolume::from_container(c).unwrap()
}

#[test]
fn golden_scenario_over_http() {
    let d = demo::golden();
    let h = common::http(&d);
    let result = run_pipeline(d.prompt, &h.config, &h.backends, &TemplateSet::default()).unwrap();

    assert_eq!(result.rounds.len(), 1);
    let round = &result.rounds[0];
    assert_eq!(round.evaluation.dsg_score, DsgScore::new(3, 5));
    let q4 = round.evaluation.answer("q4").unwrap();
    assert!(
        !q4.valid && q4.binary == 0,
        "q4 depends on the failed people count"
    );

    let plan = round.plan.as_ref().unwrap();
    assert_eq!(plan.refinement_prompt, GOLDEN_REFINEMENT);
    assert_eq!(plan.preserved_objects.len(), 1);
    assert_eq!(plan.preserved_objects[0].object, "bear");
    assert_eq!(plan.preserved_objects[0].count, 1);
    assert!(!contains_word(&plan.refinement_prompt, "bear"));
    let on_disk: serde_json::Value =
        serde_json::from_slice(&std::fs::read(h.out().join("round_1/plan.json")).unwrap()).unwrap();
    let stored = on_disk["refinement_prompt"].as_str().unwrap();
    assert_eq!(stored, GOLDEN_REFINEMENT);
    assert!(!contains_word(stored, "bear"));

    let expected = common::forward_filled_rects(16, 32, 48, &GOLDEN_BEAR_RECTS);
    assert_eq!(mask_at(&h, "round_1/mask.vrtc"), expected);
    assert!(!round.mask_downgraded);

    assert_eq!(round.candidates.len(), 5);
    assert!(round.candidates[4].error.is_some());
    assert_eq!(round.winner_index, Some(2));
    assert_eq!(result.summary.final_dsg_score, Some(DsgScore::new(5, 5)));
    assert_eq!(result.summary.final_video_ref, "round_1/cand_2/video.vrtc");

    let input = read_video(&h.out().join("round_1/input.vrtc")).unwrap();
    let winner = read_video(&h.out().join("final.vrtc")).unwrap();
    assert_eq!(winner, result.final_video);
    for t in 0..16 {
        for y in 0..32 {
            for x in 0..48 {
                if expected.get(t, y, x) == 1 {
                    assert_eq!(winner.pixel(t, y, x), input.pixel(t, y, x));
                }
            }
        }
    }

    let stats = h.suite.as_ref().unwrap().stats();
    assert!(stats.values().all(|s| s.unscripted == 0), "{stats:?}");
    // 4 keyframes x 1 preserved object.
    assert_eq!(stats[&BackendRole::Pointer].calls, 4);
    // Only the first point of the two returned is segmented.
    assert_eq!(stats[&BackendRole::Segmenter].calls, 4);
    assert_eq!(stats[&BackendRole::T2v].calls, 6);
    assert_eq!(stats[&BackendRole::Scorer].calls, 4);
}

#[test]
fn golden_candidate_noise_keeps_the_preserved_latents() {
    let d = demo::golden();
    let h = common::in_process(&d);
    run_pipeline(d.prompt, &h.config, &h.backends, &TemplateSet::default()).unwrap();
    let eps0 = sample_noise(
        vrefine_core::pipeline::noise_shape(&h.config),
        h.config.base_seed,
    );
    let pooled = pool_mask(&mask_at(&h, "round_1/mask.vrtc"), 8).unwrap();
    let mut seen = Vec::new();
    for i in 0..4 {
        let c = Container::read_file(h.out().join(format!("round_1/cand_{i}/noise.vrtc"))).unwrap();
        let noise = NoiseVolume::from_container(c).unwrap();
        let s = noise.shape();
        let plane = s.height * s.width;
        for t in 0..s.frames {
            for ch in 0..s.channels {
                for cell in 0..plane {
                    let idx = (t * s.channels + ch) * plane + cell;
                    let w = pooled.data()[t * plane + cell];
                    if w == 1.0 {
                        assert_eq!(noise.data()[idx].to_bits(), eps0.data()[idx].to_bits());
                    } else if w == 0.0 {
                        assert_ne!(noise.data()[idx], eps0.data()[idx]);
                    }
                }
            }
        }
        seen.push(noise);
    }
    assert_ne!(seen[0], seen[1]);
}

#[test]
fn reruns_are_byte_identical_and_replay_matches() {
    let d = demo::golden();
    let a = common::in_process(&d);
    let b = common::http(&d);
    run_pipeline(d.prompt, &a.config, &a.backends, &TemplateSet::default()).unwrap();
    run_pipeline(d.prompt, &b.config, &b.backends, &TemplateSet::default()).unwrap();
    let (ta, tb) = (common::tree(a.out()), common::tree(b.out()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(bytes == &tb[path], "{} differs", path.display());
    }
    let replay = replay_round(&a.out().join("round_1")).unwrap();
    assert_eq!(replay.winner_index, Some(2));
    assert!(replay.report_identical);
}

#[test]
fn two_rounds_chain_the_winner() {
    let d = demo::two_round();
    let h = common::http(&d);
    let result = run_pipeline(d.prompt, &h.config, &h.backends, &TemplateSet::default()).unwrap();
    assert_eq!(h.config.max_iterations, 3);
    assert_eq!(result.rounds.len(), 2, "a perfect winner ends the run");
    assert!(result.summary.target_reached && !result.summary.stopped_early);
    assert!(!h.out().join("round_3").exists());
    let (r1, r2) = (&result.rounds[0], &result.rounds[1]);
    assert_eq!(r1.evaluation.dsg_score, DsgScore::new(3, 5));
    assert!(r2.evaluation.dsg_score > r1.evaluation.dsg_score);
    assert_eq!(r1.winner_index, Some(1));
    assert_eq!(r2.evaluation.dsg_score, DsgScore::new(4, 5));
    assert_eq!(r2.winner_index, Some(1));
    assert_eq!(result.summary.final_dsg_score, Some(DsgScore::new(5, 5)));
    assert_eq!(result.summary.final_video_ref, "round_2/cand_1/video.vrtc");

    let r1_winner = read_video(&h.out().join("round_1/cand_1/video.vrtc")).unwrap();
    let r2_input = read_video(&h.out().join("round_2/input.vrtc")).unwrap();
    assert_eq!(r1_winner, r2_input);

    let plan2 = r2.plan.as_ref().unwrap();
    let names: Vec<_> = plan2
        .preserved_objects
        .iter()
        .map(|p| (p.object.as_str(), p.count))
        .collect();
    assert_eq!(names, [("people", 2), ("bear", 1)]);
    assert_eq!(plan2.refinement_prompt, "a pizza on the table");

    let rects: Vec<[usize; 4]> = TWO_ROUND_PEOPLE_RECTS
        .iter()
        .copied()
        .chain([TWO_ROUND_BEAR_RECT])
        .collect();
    let mask = mask_at(&h, "round_2/mask.vrtc");
    for t in 0..16 {
        for y in 0..32 {
            for x in 0..48 {
                let inside = rects
                    .iter()
                    .any(|[x0, y0, x1, y1]| *x0 <= x && x < *x1 && *y0 <= y && y < *y1);
                assert_eq!(mask.get(t, y, x), u8::from(inside), "t={t} y={y} x={x}");
            }
        }
    }

    // Round 2 noise starts from the round 1 winner's noise.
    let w1 =
        vrefine_core::pipeline::read_noise(&h.out().join("round_1/cand_1/noise.vrtc")).unwrap();
    let pooled = pool_mask(&mask, 8).unwrap();
    let c0 =
        vrefine_core::pipeline::read_noise(&h.out().join("round_2/cand_0/noise.vrtc")).unwrap();
    let plane = pooled.height() * pooled.width();
    let full = pooled.data().iter().position(|&w| w == 1.0).unwrap();
    let (t, cell) = (full / plane, full % plane);
    let idx = t * 4 * plane + cell;
    assert_eq!(c0.data()[idx].to_bits(), w1.data()[idx].to_bits());
}

#[test]
fn perfect_initial_video_stops_before_refinement() {
    let d = demo::early_stop();
    let h = common::http(&d);
    let result = run_pipeline(d.prompt, &h.config, &h.backends, &TemplateSet::default()).unwrap();
    assert_eq!(result.rounds.len(), 1);
    assert!(result.summary.stopped_early);
    assert!(result.rounds[0].candidates.is_empty());
    let stats = h.suite.as_ref().unwrap().stats();
    assert_eq!(stats[&BackendRole::T2v].calls, 1);
    assert_eq!(stats[&BackendRole::Pointer].calls, 0);
    assert_eq!(stats[&BackendRole::Segmenter].calls, 0);
    assert_eq!(result.summary.final_video_ref, "round_1/input.vrtc");
}

#[test]
fn perfect_given_video_makes_no_generation_calls() {
    let d = demo::early_stop();
    let h = common::http(&d);
    let video =
        VideoTensor::from_fn(16, 32, 48, 3, |t, y, x, c| (t * 7 + y * 3 + x + c) as u8).unwrap();
    h.state.register_video("s0", &video);
    let result = run_pipeline_from(
        d.prompt,
        InitialVideo::Given {
            video: video.clone(),
            noise: None,
        },
        &h.config,
        &h.backends,
        &TemplateSet::default(),
    )
    .unwrap();
    assert!(result.summary.stopped_early && result.summary.target_reached);
    assert_eq!(result.final_video, video);
    for role in [
        BackendRole::Pointer,
        BackendRole::Segmenter,
        BackendRole::T2v,
        BackendRole::Scorer,
    ] {
        assert_eq!(h.state.role_stats(role).calls, 0, "{role}");
    }
}

#[test]
fn given_noise_must_match_the_video() {
    let d = demo::early_stop();
    let h = common::in_process(&d);
    let video = VideoTensor::from_fn(16, 32, 48, 3, |_, _, _, _| 1).unwrap();
    let wrong = sample_noise(
        NoiseShape {
            frames: 1,
            channels: 4,
            height: 4,
            width: 6,
        },
        0,
    );
    let err = run_pipeline_from(
        d.prompt,
        InitialVideo::Given {
            video,
            noise: Some(wrong),
        },
        &h.config,
        &h.backends,
        &TemplateSet::default(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::Shape(_)), "{err}");
}

#[test]
fn all_candidates_failing_is_an_error() {
    let mut d = demo::golden();
    d.scenario.generate.fail_seeds = (0..5).collect();
    let h = common::in_process(&d);
    let err = run_pipeline(d.prompt, &h.config, &h.backends, &TemplateSet::default()).unwrap_err();
    // Seed 0 also drives the initial video, which fails first.
    assert!(err.is_backend(), "{err}");

    let mut d = demo::golden();
    d.scenario.generate.fail_seeds = (0..5).collect();
    d.config.base_seed = 0;
    let h = common::in_process(&d);
    let video = vrefine_core::tensor::VideoTensor::from_fn(16, 32, 48, 3, |_, _, _, _| 9).unwrap();
    h.state.register_video("s0", &video);
    let qs = vrefine_core::planning::generate_question_set(
        d.prompt,
        &h.backends,
        &TemplateSet::default(),
    )
    .unwrap();
    let templates = TemplateSet::default();
    let ctx = RunContext {
        config: &h.config,
        backends: &h.backends,
        templates: &templates,
    };
    let noise = sample_noise(vrefine_core::pipeline::noise_shape(&h.config), 0);
    let err = run_round(
        &ctx,
        RoundInput {
            round: 1,
            question_set: &qs,
            video: &video,
            noise: &noise,
        },
    )
    .unwrap_err();
    assert!(matches!(
        err,
        vrefine_core::pipeline::PipelineError::AllCandidatesFailed { round: 1 }
    ));
    assert!(h.out().join("round_1/report.json").exists());
}

#[test]
fn empty_keyframe_mask_downgrades_to_full_regeneration() {
    let mut d = demo::golden();
    if let Some(rules) = d.scenario.rules.get_mut("segment") {
        rules.insert(
            0,
            vrefine_core::backends::mock::Rule::reply(
                serde_json::json!({"frame_index": 8}),
                serde_json::json!({"rect": [0, 0, 0, 0]}),
            ),
        );
    }
    let h = common::in_process(&d);
    let result = run_pipeline(d.prompt, &h.config, &h.backends, &TemplateSet::default()).unwrap();
    let round = &result.rounds[0];
    assert!(round.mask_downgraded);
    assert_eq!(mask_at(&h, "round_1/mask.vrtc").count(), 0);
    let plan = round.plan.as_ref().unwrap();
    assert_eq!(
        plan.refinement_prompt,
        format!("{GOLDEN_REFINEMENT}, {}", d.prompt)
    );
}
