mod common;

use std::io::Read;
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use vrefine_core::backends::conformance::run_conformance;
use vrefine_core::backends::mock::demo;
use vrefine_core::backends::mock::{fingerprint, MockState, MockSuite, RoleStats, Rule, Scenario};
use vrefine_core::backends::protocol::{Point, PointRequest, ScoreRequest, SegmentRequest};
use vrefine_core::backends::{
    BackendError, BackendRole, Backends, Endpoint, HttpOptions, HttpTransport, TensorRef, WireCodec,
};
use vrefine_core::tensor::{FrameMask, Image, VideoTensor};

fn suite(scenario: Scenario, codec: WireCodec) -> (MockSuite, Backends) {
    let state = MockState::new(scenario, codec.clone()).unwrap();
    let suite = MockSuite::start(state, None).unwrap();
    let backends =
        Backends::from_endpoints(&suite.endpoints(), &HttpOptions::default(), codec).unwrap();
    (suite, backends)
}

fn image(codec: &WireCodec) -> TensorRef {
    let img = Image::new(6, 8, 3, (0..144).map(|i| i as u8).collect()).unwrap();
    codec.encode(&img.to_container()).unwrap()
}

#[test]
fn stats_endpoint_reports_per_role_counts() {
    let d = demo::golden();
    let (suite, backends) = suite(d.scenario.clone(), WireCodec::default());
    vrefine_core::planning::generate_question_set(d.prompt, &backends, &Default::default())
        .unwrap();
    let body = reqwest::blocking::get(format!("{}/__stats", suite.url(BackendRole::LlmPlanner)))
        .unwrap()
        .text()
        .unwrap();
    let stats: RoleStats = serde_json::from_str(&body).unwrap();
    assert_eq!(stats.calls, 1);
    assert_eq!(stats.endpoints["plan"], 1);
    let other: RoleStats = serde_json::from_str(
        &reqwest::blocking::get(format!("{}/__stats", suite.url(BackendRole::T2v)))
            .unwrap()
            .text()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(other.calls, 0);
}

#[test]
fn invalid_requests_are_rejected_with_422() {
    let (suite, _) = suite(Scenario::default(), WireCodec::default());
    let client = reqwest::blocking::Client::new();
    let url = format!("{}/v1/plan", suite.url(BackendRole::LlmPlanner));
    let resp = client
        .post(&url)
        .json(&json!({"prompt": "x"}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 422);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["error"], "invalid_request");
    let resp = client.post(&url).body("not json").send().unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let resp = client
        .post(format!("{}/v1/vqa", suite.url(BackendRole::LlmPlanner)))
        .json(&json!({}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 404);
}

#[test]
fn unscripted_requests_report_a_usable_fingerprint() {
    let codec = WireCodec::default();
    let (_suite, backends) = suite(Scenario::default(), codec.clone());
    let req = ScoreRequest {
        video: codec
            .encode(
                &VideoTensor::from_fn(2, 2, 2, 3, |_, _, _, _| 1)
                    .unwrap()
                    .to_container(),
            )
            .unwrap(),
        prompt: "a bear".into(),
    };
    let err = backends.score(&req).unwrap_err();
    let body: Value = match &err {
        BackendError::Status {
            status: 500, body, ..
        } => serde_json::from_str(body).unwrap(),
        other => panic!("{other}"),
    };
    assert_eq!(body["error"], "unscripted_request");
    let print = body["fingerprint"].as_str().unwrap().to_owned();
    assert_eq!(print, fingerprint(&body["request"]));

    let mut s = Scenario::default();
    s.push(
        Endpoint::Score,
        Rule {
            fingerprint: Some(print),
            response: Some(json!({"blip_bleu": 0.25})),
            ..Rule::default()
        },
    );
    let (_suite, backends) = suite(s, codec);
    assert_eq!(backends.score(&req).unwrap().value.blip_bleu, 0.25);
}

#[test]
fn large_tensors_travel_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let codec = WireCodec::new(dir.path()).with_inline_limit(32);
    let mut s = Scenario::default();
    s.push(
        Endpoint::Segment,
        Rule::reply(json!({"object": "cat"}), json!({"rect": [1, 1, 4, 3]})),
    );
    let (_suite, backends) = suite(s, codec.clone());
    let img = image(&codec);
    assert!(matches!(img, TensorRef::Path { .. }));
    let reply = backends
        .segment(&SegmentRequest {
            image: img,
            point: Point { x: 0.2, y: 0.3 },
            object: "cat".into(),
            frame_index: 0,
        })
        .unwrap();
    assert!(matches!(reply.value.mask, TensorRef::Path { .. }));
    let mask = FrameMask::from_container(reply.value.mask.decode().unwrap()).unwrap();
    assert_eq!(mask, FrameMask::rect(6, 8, 1, 1, 4, 3));
}

#[test]
fn schema_violations_in_replies_are_protocol_errors() {
    let codec = WireCodec::default();
    let mut s = Scenario::default();
    s.push(
        Endpoint::Point,
        Rule::reply(json!({}), json!({"points": [{"x": 1.5, "y": 0.1}]})),
    );
    let (_suite, backends) = suite(s, codec.clone());
    let err = backends
        .point(&PointRequest {
            image: image(&codec),
            prompt: "Point the biggest 1 cat".into(),
            object: "cat".into(),
            count: 1,
            frame_index: 0,
        })
        .unwrap_err();
    assert!(err.is_protocol(), "{err}");
    assert!(err.raw_body().unwrap().contains("1.5"));
}

#[test]
fn silent_server_times_out_and_is_retried_once() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let accepted = Arc::new(AtomicUsize::new(0));
    let seen = accepted.clone();
    std::thread::spawn(move || {
        let mut held = Vec::new();
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            seen.fetch_add(1, Ordering::SeqCst);
            let mut buf = [0u8; 1024];
            let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
            let _ = stream.read(&mut buf);
            held.push(stream);
        }
    });
    let opts = HttpOptions {
        timeout: Duration::from_millis(300),
        bearer_token: Some("secret".into()),
    };
    let transport =
        HttpTransport::new(BackendRole::Scorer, &format!("http://{addr}"), &opts).unwrap();
    let backends = Backends::default().bind(BackendRole::Scorer, Arc::new(transport));
    let err = backends
        .score(&ScoreRequest {
            video: TensorRef::Inline {
                inline: "AA==".into(),
            },
            prompt: "x".into(),
        })
        .unwrap_err();
    assert!(err.is_transport(), "{err}");
    assert_eq!(accepted.load(Ordering::SeqCst), 2);
}

#[test]
fn closed_port_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let transport = HttpTransport::new(
        BackendRole::Vqa,
        &format!("http://127.0.0.1:{port}"),
        &HttpOptions::default(),
    )
    .unwrap();
    let backends = Backends::default().bind(BackendRole::Vqa, Arc::new(transport));
    let err = backends
        .select_objects(
            &vrefine_core::backends::protocol::VqaRequest::SelectObjects {
                objects: vec![],
                allow_multi: false,
                instruction: "pick".into(),
                image: TensorRef::Inline {
                    inline: "AA==".into(),
                },
            },
        )
        .unwrap_err();
    assert!(err.is_transport(), "{err}");
}

#[test]
fn fixed_base_port_assigns_one_port_per_role() {
    let probe = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = probe.local_addr().unwrap().port();
    drop(probe);
    let state = MockState::new(Scenario::default(), WireCodec::default()).unwrap();
    let Ok(suite) = MockSuite::start(state, Some(base)) else {
        // The ports after the probe may be taken on a busy host.
        return;
    };
    for (i, role) in BackendRole::ALL.into_iter().enumerate() {
        assert_eq!(
            suite.url(role),
            format!("http://127.0.0.1:{}", base + i as u16)
        );
    }
}

#[test]
fn shared_suite_passes_against_the_mocks() {
    let d = demo::conformance();
    let (suite, _) = suite(d.scenario, WireCodec::default());
    let checks = run_conformance(
        &suite.endpoints(),
        &HttpOptions::default(),
        WireCodec::default(),
    )
    .unwrap();
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    // healthz per role, two rejections per endpoint, one probe per endpoint
    // except vqa, which has three tasks.
    assert_eq!(checks.len(), 6 + 2 * 7 + 7 + 2);
    assert!(suite.stats().values().all(|s| s.unscripted == 0));
}

#[test]
fn shared_suite_reports_a_server_without_scripts() {
    let (suite, _) = suite(Scenario::default(), WireCodec::default());
    let checks = run_conformance(
        &suite.endpoints(),
        &HttpOptions::default(),
        WireCodec::default(),
    )
    .unwrap();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    // Generation is synthesized by the mock, so only scripted probes fail.
    assert_eq!(
        failed,
        [
            "plan.well_formed",
            "refineprompt.well_formed",
            "vqa.answer_count",
            "vqa.answer_attribute",
            "vqa.select_objects",
            "point.well_formed",
            "segment.well_formed",
            "score.well_formed"
        ]
    );
    assert!(checks
        .iter()
        .filter(|c| c.name == "healthz")
        .all(|c| c.passed));
}
