//! Protocol conformance checks that any v1 server must pass, whether it is
//! a scripted mock or a model adapter.
//!
//! Every bound role is probed for `GET /healthz`, for rejection of
//! malformed and schema-violating bodies, and for one well-formed request
//! per endpoint whose reply must validate and decode. The well-formed
//! probes are fixed, so a mock only needs rules for them; see
//! [`super::mock::demo::conformance`].

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use super::protocol::{
    GenerateRequest, ObjectEvidence, OutputDims, PlanRequest, Point, PointRequest, PromptRegion,
    RefineMode, RefinePromptRequest, ScoreRequest, SegmentRequest, VqaRequest,
};
use super::{BackendError, BackendRole, Backends, Endpoint, HttpOptions, TensorRef, WireCodec};
use crate::latent::{sample_noise, NoiseShape, PooledMask};
use crate::tensor::{FrameMask, Image, VideoTensor};

pub const PROBE_PROMPT: &str = "a red cube on a table";
pub const PROBE_OBJECT: &str = "cube";
pub const PROBE_DIMS: OutputDims = OutputDims {
    frames: 4,
    height: 16,
    width: 16,
    channels: 3,
};
const PROBE_DOWNSAMPLE: usize = 8;
const PROBE_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub role: BackendRole,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn probe_image() -> Image {
    let (h, w) = (PROBE_DIMS.height, PROBE_DIMS.width);
    let data = (0..h * w * 3).map(|i| ((i * 37) % 251) as u8).collect();
    Image::new(h, w, 3, data).expect("probe image dims")
}

fn probe_video() -> VideoTensor {
    let d = PROBE_DIMS;
    VideoTensor::from_fn(d.frames, d.height, d.width, d.channels, |t, y, x, c| {
        (t * 40 + y * 7 + x * 3 + c * 50) as u8
    })
    .expect("probe video dims")
}

fn probe_noise_shape() -> NoiseShape {
    let d = PROBE_DIMS;
    NoiseShape::for_pixels(
        d.frames,
        d.height,
        d.width,
        PROBE_CHANNELS,
        PROBE_DOWNSAMPLE,
    )
}

/// The fixed well-formed generation probe.
pub fn probe_generate_request(codec: &WireCodec) -> Result<GenerateRequest, String> {
    let shape = probe_noise_shape();
    let ones = PooledMask::filled(shape.frames, shape.height, shape.width, 1.0);
    Ok(GenerateRequest {
        prompt_regions: vec![PromptRegion {
            weights: codec.encode(&ones.to_container())?,
            prompt: PROBE_PROMPT.into(),
        }],
        noise: codec.encode(&sample_noise(shape, 7).to_container())?,
        output: PROBE_DIMS,
        seed: 7,
        downsample: PROBE_DOWNSAMPLE,
        reference: None,
        preserve_mask: None,
    })
}

struct Prober<'a> {
    role: BackendRole,
    base: String,
    client: &'a reqwest::blocking::Client,
    bearer: Option<&'a str>,
    out: Vec<ConformanceCheck>,
}

impl Prober<'_> {
    fn record(&mut self, name: impl Into<String>, result: Result<(), String>) {
        let (passed, detail) = match result {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.out.push(ConformanceCheck {
            role: self.role,
            name: name.into(),
            passed,
            detail,
        });
    }

    fn with_auth(
        &self,
        req: reqwest::blocking::RequestBuilder,
    ) -> reqwest::blocking::RequestBuilder {
        match self.bearer {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn raw_post(&self, endpoint: Endpoint, body: &str) -> Result<(u16, String), String> {
        let url = format!("{}{}", self.base, endpoint.path());
        let resp = self
            .with_auth(self.client.post(url))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned())
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        Ok((status, resp.text().map_err(|e| e.to_string())?))
    }

    fn health(&mut self) {
        let url = format!("{}/healthz", self.base);
        let result = self
            .with_auth(self.client.get(url))
            .send()
            .map_err(|e| e.to_string())
            .and_then(|r| match r.status().as_u16() {
                200 => Ok(()),
                s => Err(format!("status {s}")),
            });
        self.record("healthz", result);
    }

    fn rejections(&mut self, endpoint: Endpoint) {
        let name = endpoint.name();
        let malformed = self
            .raw_post(endpoint, "{not json")
            .and_then(|(status, body)| expect_error(status, &body, &[400, 422]));
        self.record(format!("{name}.malformed_json"), malformed);
        let violation = self
            .raw_post(endpoint, "{}")
            .and_then(|(status, body)| expect_error(status, &body, &[422]));
        self.record(format!("{name}.schema_violation"), violation);
    }
}

fn expect_error(status: u16, body: &str, allowed: &[u16]) -> Result<(), String> {
    if !allowed.contains(&status) {
        return Err(format!("expected status in {allowed:?}, got {status}"));
    }
    let v: Value =
        serde_json::from_str(body).map_err(|e| format!("error body is not JSON: {e}"))?;
    if v.get("error").is_some() || v.get("detail").is_some() {
        Ok(())
    } else {
        Err(format!("error body lacks an `error` field: {body}"))
    }
}

fn describe(e: BackendError) -> String {
    e.portable_message()
}

fn well_formed(backends: &Backends, endpoint: Endpoint) -> Vec<(String, Result<(), String>)> {
    let codec = backends.codec();
    let image = || codec.encode(&probe_image().to_container());
    let name = endpoint.name();
    let one = |label: &str, r: Result<(), String>| (format!("{name}.{label}"), r);
    match endpoint {
        Endpoint::Plan => vec![one(
            "well_formed",
            backends
                .plan(&PlanRequest {
                    prompt: PROBE_PROMPT.into(),
                    instruction: "Decompose the prompt into tuples and questions.".into(),
                })
                .map(drop)
                .map_err(describe),
        )],
        Endpoint::RefinePrompt => vec![one(
            "well_formed",
            backends
                .refine_prompt(&RefinePromptRequest {
                    mode: RefineMode::Refine,
                    prompt: PROBE_PROMPT.into(),
                    questions: vec!["Is the cube red?".into()],
                    preserved: vec![],
                    instruction: "Write a prompt for the listed questions.".into(),
                })
                .map(drop)
                .map_err(describe),
        )],
        Endpoint::Vqa => {
            let Ok(img) = image() else {
                return vec![one("encode", Err("probe image does not encode".into()))];
            };
            let count = VqaRequest::AnswerCount {
                question_id: "q1".into(),
                question: "Is there one cube?".into(),
                object: PROBE_OBJECT.into(),
                n_p: 1,
                instruction: "Count the objects.".into(),
                image: img.clone(),
            };
            let attribute = VqaRequest::AnswerAttribute {
                question_id: "q2".into(),
                question: "Is the cube red?".into(),
                object: PROBE_OBJECT.into(),
                instruction: "Answer yes or no.".into(),
                image: img.clone(),
            };
            let select = VqaRequest::SelectObjects {
                objects: vec![ObjectEvidence {
                    object: PROBE_OBJECT.into(),
                    num_correct: 1,
                    num_total: 2,
                    answers: vec![],
                }],
                allow_multi: false,
                instruction: "Pick the object to keep.".into(),
                image: img,
            };
            vec![
                one(
                    "answer_count",
                    backends.vqa_count(&count).map(drop).map_err(describe),
                ),
                one(
                    "answer_attribute",
                    backends
                        .vqa_attribute(&attribute)
                        .map(drop)
                        .map_err(describe),
                ),
                one(
                    "select_objects",
                    backends.select_objects(&select).map(drop).map_err(describe),
                ),
            ]
        }
        Endpoint::Point => {
            let result = image().and_then(|img| {
                backends
                    .point(&PointRequest {
                        image: img,
                        prompt: format!("Point the biggest 1 {PROBE_OBJECT}"),
                        object: PROBE_OBJECT.into(),
                        count: 1,
                        frame_index: 0,
                    })
                    .map(drop)
                    .map_err(describe)
            });
            vec![one("well_formed", result)]
        }
        Endpoint::Segment => {
            let result = image().and_then(|img| {
                let reply = backends
                    .segment(&SegmentRequest {
                        image: img,
                        point: Point { x: 0.5, y: 0.5 },
                        object: PROBE_OBJECT.into(),
                        frame_index: 0,
                    })
                    .map_err(describe)?;
                let mask = reply
                    .value
                    .mask
                    .decode()
                    .and_then(|c| FrameMask::from_container(c).map_err(|e| e.to_string()))?;
                let got = (mask.height(), mask.width());
                if got == (PROBE_DIMS.height, PROBE_DIMS.width) {
                    Ok(())
                } else {
                    Err(format!("mask dims {got:?} differ from the image"))
                }
            });
            vec![one("well_formed", result)]
        }
        Endpoint::Generate => {
            let result = probe_generate_request(codec).and_then(|req| {
                let reply = backends.generate(&req).map_err(describe)?;
                let video = reply
                    .value
                    .video
                    .decode()
                    .and_then(|c| VideoTensor::from_container(c).map_err(|e| e.to_string()))?;
                let got = (
                    video.frames(),
                    video.height(),
                    video.width(),
                    video.channels(),
                );
                let d = PROBE_DIMS;
                if got == (d.frames, d.height, d.width, d.channels) {
                    Ok(())
                } else {
                    Err(format!("video dims {got:?} differ from the request"))
                }
            });
            vec![one("well_formed", result)]
        }
        Endpoint::Score => {
            let result =
                codec
                    .encode(&probe_video().to_container())
                    .and_then(|video: TensorRef| {
                        backends
                            .score(&ScoreRequest {
                                video,
                                prompt: PROBE_PROMPT.into(),
                            })
                            .map(drop)
                            .map_err(describe)
                    });
            vec![one("well_formed", result)]
        }
    }
}

/// Runs every check against each bound role and returns them in role order.
pub fn run_conformance(
    endpoints: &BTreeMap<BackendRole, String>,
    options: &HttpOptions,
    codec: WireCodec,
) -> Result<Vec<ConformanceCheck>, BackendError> {
    let backends = Backends::from_endpoints(endpoints, options, codec)?;
    let client = reqwest::blocking::Client::builder()
        .timeout(options.timeout)
        .build()
        .map_err(|e| BackendError::Transport {
            role: BackendRole::LlmPlanner,
            location: "client".into(),
            message: e.to_string(),
        })?;
    let mut checks = Vec::new();
    for (&role, base) in endpoints {
        let mut prober = Prober {
            role,
            base: base.trim_end_matches('/').to_owned(),
            client: &client,
            bearer: options.bearer_token.as_deref(),
            out: Vec::new(),
        };
        prober.health();
        for &endpoint in role.endpoints() {
            prober.rejections(endpoint);
            for (name, result) in well_formed(&backends, endpoint) {
                prober.record(name, result);
            }
        }
        checks.extend(prober.out);
    }
    Ok(checks)
}
