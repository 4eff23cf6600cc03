use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use serde_json::Value;
use tempfile::TempDir;
use vrefine_core::backends::mock::demo::{self, DemoScenario, GOLDEN_BEAR_RECTS};
use vrefine_core::backends::mock::{MockState, MockSuite};
use vrefine_core::backends::{BackendRole, WireCodec};
use vrefine_core::container::Container;
use vrefine_core::pipeline::RoundReport;
use vrefine_core::tensor::{MaskVolume, VideoTensor};

struct Env {
    suite: MockSuite,
    state: Arc<MockState>,
    dir: TempDir,
}

impl Env {
    fn new(d: &DemoScenario) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let state = MockState::new(
            d.scenario.clone(),
            WireCodec::new(dir.path().join("mock-wire")),
        )
        .unwrap();
        let suite = MockSuite::start(state.clone(), None).unwrap();
        Self { suite, state, dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Writes the demo's config with this suite's endpoints and returns it.
    fn config_file(&self, d: &DemoScenario, omit: &[BackendRole]) -> PathBuf {
        let mut cfg = d.config.clone();
        cfg.backends = self.suite.endpoints();
        for r in omit {
            cfg.backends.remove(r);
        }
        cfg.output_dir = self.path("out");
        cfg.spill_dir = Some(self.path("wire"));
        let path = self.path("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        path
    }
}

fn vrefine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrefine"))
        .args(args)
        .env_remove("VIDEOREPAIR_CONFIG")
        .output()
        .unwrap()
}

fn text(out: &Output) -> (String, String) {
    (
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_rounds_and_final_video() {
    let d = demo::golden();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let out = vrefine(&["run", "--config", s(&cfg), "--prompt", d.prompt]);
    let (stdout, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(0), "{stderr}");
    assert!(
        stdout.contains("round 1: entry dsg=0.6 (3/5); winner cand_2 dsg=1.0 (5/5)"),
        "{stdout}"
    );
    assert!(stdout.contains("-> round_1/cand_2/video.vrtc"), "{stdout}");
    assert!(env.path("out/round_1/report.json").exists());
    assert!(env.path("out/final.vrtc").exists());
}

#[test]
fn two_iterations_make_two_round_dirs_and_json_lines() {
    let d = demo::two_round();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let out = vrefine(&[
        "run",
        "--json",
        "--config",
        s(&cfg),
        "--prompt",
        d.prompt,
        "--iterations",
        "2",
    ]);
    let (stdout, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(0), "{stderr}");
    assert!(env.path("out/round_1").is_dir());
    assert!(env.path("out/round_2").is_dir());
    assert!(!env.path("out/round_3").exists());
    let events: Vec<Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events.len(), 3);
    assert_eq!(events[0]["event"], "round");
    assert_eq!(events[0]["entry"]["correct"], 3);
    assert_eq!(events[1]["entry"]["correct"], 4);
    assert_eq!(events[2]["event"], "final");
    assert_eq!(events[2]["dsg"]["value"], 1.0);
    assert_eq!(events[2]["video"], "round_2/cand_1/video.vrtc");
}

#[test]
fn missing_t2v_is_a_config_error() {
    let d = demo::golden();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[BackendRole::T2v]);
    let out = vrefine(&["run", "--config", s(&cfg), "--prompt", d.prompt]);
    let (_, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr.contains("role t2v unbound"), "{stderr}");
    assert_eq!(env.suite.stats()[&BackendRole::LlmPlanner].calls, 0);
}

#[test]
fn flags_override_the_config_file_and_env_is_a_fallback() {
    let d = demo::golden();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let out = Command::new(env!("CARGO_BIN_EXE_vrefine"))
        .args([
            "run",
            "--prompt",
            d.prompt,
            "--k",
            "2",
            "--out",
            s(&env.path("flagged")),
        ])
        .env("VIDEOREPAIR_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out).1);
    let report: RoundReport =
        serde_json::from_slice(&std::fs::read(env.path("flagged/round_1/report.json")).unwrap())
            .unwrap();
    assert_eq!(report.candidates.len(), 2);
    assert!(!env.path("out").exists());

    let out = vrefine(&[
        "run",
        "--config",
        s(&cfg),
        "--prompt",
        d.prompt,
        "--backend.t2v=ftp://nowhere",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out).1);
}

#[test]
fn backend_failures_exit_2_with_role_and_endpoint() {
    let mut d = demo::golden();
    d.scenario.rules.remove("plan");
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let out = vrefine(&["run", "--config", s(&cfg), "--prompt", d.prompt]);
    let (_, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(2), "{stderr}");
    let url = format!("{}/v1/plan", env.suite.url(BackendRole::LlmPlanner));
    assert!(
        stderr.contains("llm_planner") && stderr.contains(&url),
        "{stderr}"
    );
}

#[test]
fn evaluate_prints_a_perfect_score() {
    let d = demo::early_stop();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let video =
        VideoTensor::from_fn(16, 32, 48, 3, |t, y, x, c| (t + 2 * y + 3 * x + c) as u8).unwrap();
    env.state.register_video("s0", &video);
    let path = env.path("v.vrtc");
    video.to_container().write_file(&path).unwrap();
    let report = env.path("eval.json");
    let out = vrefine(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--prompt",
        d.prompt,
        "--video",
        s(&path),
        "--report",
        s(&report),
    ]);
    let (stdout, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(0), "{stderr}");
    assert!(stdout.starts_with("dsg=1.0 (5/5)"), "{stdout}");
    assert!(report.exists());
}

#[test]
fn corrupt_containers_are_file_format_errors() {
    let d = demo::early_stop();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let good = VideoTensor::from_fn(2, 4, 4, 3, |_, _, _, _| 1)
        .unwrap()
        .to_container()
        .encode();
    for (name, patch) in [("magic", 0usize), ("version", 4)] {
        let mut bytes = good.clone();
        bytes[patch] ^= 0x5a;
        let path = env.path(&format!("bad-{name}.vrtc"));
        std::fs::write(&path, bytes).unwrap();
        let out = vrefine(&[
            "evaluate",
            "--config",
            s(&cfg),
            "--prompt",
            d.prompt,
            "--video",
            s(&path),
        ]);
        let (_, stderr) = text(&out);
        assert_eq!(out.status.code(), Some(1), "{stderr}");
        assert!(stderr.starts_with("FileFormatError:"), "{stderr}");
        assert!(stderr.contains(name), "{stderr}");
    }
    assert_eq!(env.suite.stats()[&BackendRole::Vqa].calls, 0);
}

/// Runs the golden pipeline once through the CLI and returns the env.
fn golden_run() -> (DemoScenario, Env, PathBuf) {
    let d = demo::golden();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let out = vrefine(&["run", "--config", s(&cfg), "--prompt", d.prompt]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out).1);
    (d, env, cfg)
}

#[test]
fn mask_rebuilds_the_golden_mask() {
    let (_, env, cfg) = golden_run();
    let mask_path = env.path("mask.vrtc");
    let out = vrefine(&[
        "mask",
        "--config",
        s(&cfg),
        "--plan",
        s(&env.path("out/round_1/plan.json")),
        "--video",
        s(&env.path("out/round_1/input.vrtc")),
        "--out",
        s(&mask_path),
    ]);
    let (stdout, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(0), "{stderr}");

    // Each frame holds the rectangle of its latest keyframe (every 4th frame).
    let expected: usize = (0..16)
        .map(|t| {
            let (_, [x0, y0, x1, y1]) = GOLDEN_BEAR_RECTS
                .iter()
                .rev()
                .find(|(k, _)| *k <= t)
                .unwrap();
            (x1 - x0) * (y1 - y0)
        })
        .sum();
    assert!(
        stdout.starts_with(&format!("pixels={expected} ")),
        "{stdout}"
    );
    let rebuilt = MaskVolume::from_container(Container::read_file(&mask_path).unwrap()).unwrap();
    assert_eq!(rebuilt.count(), expected);
    assert_eq!(
        std::fs::read(&mask_path).unwrap(),
        std::fs::read(env.path("out/round_1/mask.vrtc")).unwrap()
    );
}

#[test]
fn rank_and_replay_reproduce_the_stored_round() {
    let (_, env, _) = golden_run();
    let round = env.path("out/round_1");
    let out = vrefine(&["rank", "--json", "--round-dir", s(&round)]);
    let (stdout, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(0), "{stderr}");
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    let report: RoundReport =
        serde_json::from_slice(&std::fs::read(round.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["winner_index"], serde_json::json!(report.winner_index));
    assert_eq!(v["winner_index"], 2);

    let out = vrefine(&["replay", "--round-dir", s(&round)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out).1);
    assert!(text(&out).0.contains("report_identical=true"));

    // Lowering the winner's blip score makes candidate 1 the winner on replay.
    let mut edited = report.clone();
    edited.candidates[2].blip_bleu = Some(0.0);
    std::fs::write(
        round.join("report.json"),
        serde_json::to_string_pretty(&edited).unwrap() + "\n",
    )
    .unwrap();
    let out = vrefine(&["replay", "--round-dir", s(&round)]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(round.join("cand_0/video.vrtc"), b"XXXX").unwrap();
    let out = vrefine(&["rank", "--round-dir", s(&round)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).1.contains("FileFormatError"), "{}", text(&out).1);
}

#[test]
fn conformance_subcommand_passes_against_mocks() {
    let d = demo::conformance();
    let env = Env::new(&d);
    let cfg = env.config_file(&d, &[]);
    let out = vrefine(&["conformance", "--config", s(&cfg)]);
    let (stdout, stderr) = text(&out);
    assert_eq!(out.status.code(), Some(0), "{stdout}{stderr}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
    assert!(stdout.contains("PASS t2v healthz"), "{stdout}");

    let empty = Env::new(&DemoScenario {
        scenario: Default::default(),
        ..demo::conformance()
    });
    let cfg = empty.config_file(&d, &[]);
    let out = vrefine(&["conformance", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_are_config_errors() {
    assert_eq!(vrefine(&["run"]).status.code(), Some(3));
    assert_eq!(vrefine(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(vrefine(&["--help"]).status.code(), Some(0));
}

#[test]
fn mock_binary_serves_a_builtin_scenario() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_vrefine-mock"))
        .args(["--scenario", "golden"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let endpoints: Value = serde_json::from_str(&line).unwrap();
    let base = endpoints["t2v"].as_str().unwrap().to_owned();
    let health = reqwest::blocking::get(format!("{base}/healthz")).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health.status().as_u16(), 200);
    assert_eq!(endpoints.as_object().unwrap().len(), 6);

    let out = Command::new(env!("CARGO_BIN_EXE_vrefine-mock"))
        .args(["--scenario", "/does/not/exist.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
