//! Scripted, deterministic stand-ins for every backend role.
//!
//! A scenario lists rules per endpoint. Each incoming request is reduced to a
//! projection: tensors become `{"sha256": ...}` digests, the free-text
//! `instruction` is dropped, and requests that carry a known video (or a
//! frame or grid of one) gain a field holding that video's label: `"video"`
//! for vqa, point and segment requests, `"video_label"` for score requests.
//! The first rule whose `match` object is a subset of the projection (or whose
//! `fingerprint` equals the projection's digest) answers. The text-to-video
//! role is not scripted: it renders a deterministic video per seed, copying
//! reference pixels wherever the preservation mask is set.

pub mod demo;
mod server;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::protocol::{GenerateRequest, OutputDims};
use super::schema::SchemaId;
use super::{frame_grid, BackendError, BackendRole, Endpoint, Transport, WireCodec};
use crate::container::Container;
use crate::latent::{NoiseShape, NoiseVolume, PooledMask};
use crate::tensor::{FrameMask, Image, MaskVolume, VideoTensor};

pub use server::MockSuite;

/// Label given to videos the mock has never seen.
pub const UNREGISTERED: &str = "unregistered";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(rename = "match", default)]
    pub match_: Value,
    #[serde(default)]
    pub fingerprint: Option<String>,
    #[serde(default)]
    pub response: Option<Value>,
    /// Replies used in order; the last one repeats.
    #[serde(default)]
    pub responses: Option<Vec<Value>>,
    #[serde(default)]
    pub status: Option<u16>,
}

impl Rule {
    pub fn reply(match_: Value, response: Value) -> Self {
        Self {
            match_,
            response: Some(response),
            ..Self::default()
        }
    }

    pub fn sequence(match_: Value, responses: Vec<Value>) -> Self {
        Self {
            match_,
            responses: Some(responses),
            ..Self::default()
        }
    }

    pub fn failure(match_: Value, status: u16) -> Self {
        Self {
            match_,
            status: Some(status),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateScript {
    #[serde(default)]
    pub fail_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Keyed by endpoint name: `plan`, `refineprompt`, `vqa`, `point`,
    /// `segment`, `score`.
    #[serde(default)]
    pub rules: BTreeMap<String, Vec<Rule>>,
    #[serde(default)]
    pub generate: GenerateScript,
    #[serde(default)]
    pub videos: Vec<VideoEntry>,
}

impl Scenario {
    /// Reads a scenario file; video paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut s: Scenario =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for v in &mut s.videos {
            if v.path.is_relative() {
                v.path = base.join(&v.path);
            }
        }
        for key in s.rules.keys() {
            if !matches!(
                key.as_str(),
                "plan" | "refineprompt" | "vqa" | "point" | "segment" | "score"
            ) {
                return Err(format!("no scripted endpoint named `{key}`"));
            }
        }
        Ok(s)
    }

    pub fn push(&mut self, endpoint: Endpoint, rule: Rule) -> &mut Self {
        self.rules
            .entry(endpoint.name().to_owned())
            .or_default()
            .push(rule);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleStats {
    pub calls: u64,
    pub endpoints: BTreeMap<String, u64>,
    pub unscripted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub endpoint: String,
    pub projection: Value,
}

#[derive(Default)]
struct Labels {
    videos: HashMap<String, String>,
    grids: HashMap<String, String>,
    frames: HashMap<String, String>,
}

/// Shared state behind every mock role.
pub struct MockState {
    scenario: Scenario,
    codec: WireCodec,
    labels: Mutex<Labels>,
    cursors: Mutex<HashMap<(String, usize), usize>>,
    stats: Mutex<BTreeMap<BackendRole, RoleStats>>,
    log: Mutex<Vec<LoggedRequest>>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn container_digest(c: &Container) -> String {
    hex_digest(&c.encode())
}

/// Digest of the canonical JSON text of a projection.
pub fn fingerprint(projection: &Value) -> String {
    hex_digest(projection.to_string().as_bytes())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tensor_bytes(v: &Value) -> Option<Result<Vec<u8>, String>> {
    let obj = v.as_object()?;
    if obj.len() != 1 {
        return None;
    }
    if let Some(Value::String(s)) = obj.get("inline") {
        use base64::Engine;
        return Some(
            base64::engine::general_purpose::STANDARD
                .decode(s)
                .map_err(|e| e.to_string()),
        );
    }
    if let Some(Value::String(p)) = obj.get("path") {
        return Some(fs::read(p).map_err(|e| format!("{p}: {e}")));
    }
    None
}

fn strip_tensors(v: &Value) -> Value {
    if let Some(bytes) = tensor_bytes(v) {
        let digest = match bytes {
            Ok(b) => hex_digest(&b),
            Err(_) => "undecodable".to_owned(),
        };
        return json!({ "sha256": digest });
    }
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| (k.clone(), strip_tensors(x)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip_tensors).collect()),
        other => other.clone(),
    }
}

fn is_subset(pattern: &Value, value: &Value) -> bool {
    match pattern {
        Value::Object(p) => match value {
            Value::Object(v) => p
                .iter()
                .all(|(k, pv)| is_subset(pv, v.get(k).unwrap_or(&Value::Null))),
            _ => false,
        },
        _ => pattern == value,
    }
}

fn request_schema(endpoint: Endpoint) -> SchemaId {
    match endpoint {
        Endpoint::Plan => SchemaId::PlanRequest,
        Endpoint::RefinePrompt => SchemaId::RefinePromptRequest,
        Endpoint::Vqa => SchemaId::VqaRequest,
        Endpoint::Point => SchemaId::PointRequest,
        Endpoint::Segment => SchemaId::SegmentRequest,
        Endpoint::Generate => SchemaId::GenerateRequest,
        Endpoint::Score => SchemaId::ScoreRequest,
    }
}

type Outcome = (u16, String);

fn error_reply(status: u16, kind: &str, detail: impl Into<String>) -> Outcome {
    (
        status,
        json!({ "error": kind, "detail": detail.into() }).to_string(),
    )
}

impl MockState {
    pub fn new(scenario: Scenario, codec: WireCodec) -> Result<Arc<Self>, String> {
        let state = Arc::new(Self {
            scenario,
            codec,
            labels: Mutex::new(Labels::default()),
            cursors: Mutex::new(HashMap::new()),
            stats: Mutex::new(
                BackendRole::ALL
                    .iter()
                    .map(|&r| (r, RoleStats::default()))
                    .collect(),
            ),
            log: Mutex::new(Vec::new()),
        });
        for entry in &state.scenario.videos {
            let c = Container::read_file(&entry.path)
                .map_err(|e| format!("{}: {e}", entry.path.display()))?;
            let video = VideoTensor::from_container(c)
                .map_err(|e| format!("{}: {e}", entry.path.display()))?;
            state.register_video(&entry.label, &video);
        }
        Ok(state)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Makes a video, its frames and its frame grid recognisable by label.
    /// The first label registered for a digest wins.
    pub fn register_video(&self, label: &str, video: &VideoTensor) {
        let mut labels = self.labels.lock().unwrap();
        labels
            .videos
            .entry(container_digest(&video.to_container()))
            .or_insert_with(|| label.to_owned());
        labels
            .grids
            .entry(container_digest(&frame_grid(video).to_container()))
            .or_insert_with(|| label.to_owned());
        for t in 0..video.frames() {
            labels
                .frames
                .entry(container_digest(&video.frame(t).to_container()))
                .or_insert_with(|| label.to_owned());
        }
    }

    pub fn label_of(&self, video: &VideoTensor) -> Option<String> {
        let d = container_digest(&video.to_container());
        self.labels.lock().unwrap().videos.get(&d).cloned()
    }

    pub fn stats(&self) -> BTreeMap<BackendRole, RoleStats> {
        self.stats.lock().unwrap().clone()
    }

    pub fn role_stats(&self, role: BackendRole) -> RoleStats {
        self.stats
            .lock()
            .unwrap()
            .get(&role)
            .cloned()
            .unwrap_or_default()
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    /// Reduces a request to the form rules are matched against.
    pub fn project(&self, endpoint: Endpoint, body: &Value) -> Value {
        let mut p = strip_tensors(body);
        if let Value::Object(m) = &mut p {
            m.remove("instruction");
            let (field, table) = match endpoint {
                Endpoint::Vqa => ("image", 0),
                Endpoint::Point | Endpoint::Segment => ("image", 1),
                Endpoint::Score => ("video", 2),
                _ => ("", 3),
            };
            if table < 3 {
                let digest = m
                    .get(field)
                    .and_then(|t| t.get("sha256"))
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_owned();
                let labels = self.labels.lock().unwrap();
                let map = match table {
                    0 => &labels.grids,
                    1 => &labels.frames,
                    _ => &labels.videos,
                };
                let label = map
                    .get(&digest)
                    .cloned()
                    .unwrap_or_else(|| UNREGISTERED.to_owned());
                let key = if endpoint == Endpoint::Score {
                    "video_label"
                } else {
                    "video"
                };
                m.insert(key.to_owned(), Value::String(label));
            }
        }
        p
    }

    fn bump(&self, role: BackendRole, endpoint: Endpoint, unscripted: bool) {
        let mut stats = self.stats.lock().unwrap();
        let s = stats.entry(role).or_default();
        s.calls += 1;
        *s.endpoints.entry(endpoint.name().to_owned()).or_default() += 1;
        if unscripted {
            s.unscripted += 1;
        }
    }

    /// Answers one request with an HTTP status and body.
    pub fn handle(&self, endpoint: Endpoint, body: &Value) -> Outcome {
        if let Err(msg) = request_schema(endpoint).validate(body) {
            self.bump(endpoint.role(), endpoint, false);
            return error_reply(422, "invalid_request", msg);
        }
        if endpoint == Endpoint::Generate {
            self.bump(endpoint.role(), endpoint, false);
            return self.generate(body);
        }
        let projection = self.project(endpoint, body);
        self.log.lock().unwrap().push(LoggedRequest {
            endpoint: endpoint.name().to_owned(),
            projection: projection.clone(),
        });
        let print = fingerprint(&projection);
        let rules = self
            .scenario
            .rules
            .get(endpoint.name())
            .map(Vec::as_slice)
            .unwrap_or_default();
        let hit = rules
            .iter()
            .enumerate()
            .find(|(_, r)| match &r.fingerprint {
                Some(f) => *f == print,
                None => is_subset(&r.match_, &projection),
            });
        let Some((index, rule)) = hit else {
            self.bump(endpoint.role(), endpoint, true);
            tracing::warn!(%endpoint, fingerprint = %print, "unscripted mock request");
            return (
                500,
                json!({ "error": "unscripted_request", "fingerprint": print, "request": projection })
                    .to_string(),
            );
        };
        self.bump(endpoint.role(), endpoint, false);
        let response = match (&rule.response, &rule.responses) {
            (_, Some(seq)) if !seq.is_empty() => {
                let mut cursors = self.cursors.lock().unwrap();
                let c = cursors
                    .entry((endpoint.name().to_owned(), index))
                    .or_default();
                let r = seq[(*c).min(seq.len() - 1)].clone();
                *c += 1;
                Some(r)
            }
            (Some(r), _) => Some(r.clone()),
            _ => None,
        };
        let status = rule.status.unwrap_or(200);
        match response {
            Some(r) if endpoint == Endpoint::Segment && r.get("rect").is_some() => {
                self.render_rect(body, &r)
            }
            Some(Value::String(raw)) => (status, raw),
            Some(r) => (status, r.to_string()),
            None if status != 200 => error_reply(status, "scripted_failure", "rule has no body"),
            None => error_reply(500, "bad_rule", "rule has neither status nor response"),
        }
    }

    /// Parses a raw body and dispatches it.
    pub fn handle_raw(&self, endpoint: Endpoint, body: &str) -> Outcome {
        match serde_json::from_str::<Value>(body) {
            Ok(v) => self.handle(endpoint, &v),
            Err(e) => {
                self.bump(endpoint.role(), endpoint, false);
                error_reply(400, "invalid_json", e.to_string())
            }
        }
    }

    fn render_rect(&self, body: &Value, response: &Value) -> Outcome {
        let image = body
            .get("image")
            .and_then(tensor_bytes)
            .and_then(Result::ok)
            .and_then(|b| Container::decode(&b).ok())
            .and_then(|c| Image::from_container(c).ok());
        let rect: Option<Vec<usize>> = response
            .get("rect")
            .and_then(|r| serde_json::from_value(r.clone()).ok());
        match (image, rect) {
            (Some(img), Some(r)) if r.len() == 4 => {
                let mask = FrameMask::rect(img.height(), img.width(), r[0], r[1], r[2], r[3]);
                match self.codec.encode(&mask.to_container()) {
                    Ok(t) => (200, json!({ "mask": t }).to_string()),
                    Err(e) => error_reply(500, "wire", e),
                }
            }
            _ => error_reply(
                500,
                "bad_rule",
                "rect needs [x0, y0, x1, y1] and a decodable image",
            ),
        }
    }

    fn generate(&self, body: &Value) -> Outcome {
        let req: GenerateRequest = match serde_json::from_value(body.clone()) {
            Ok(r) => r,
            Err(e) => return error_reply(422, "invalid_request", e.to_string()),
        };
        if self.scenario.generate.fail_seeds.contains(&req.seed) {
            return error_reply(
                500,
                "generation_failed",
                format!("seed {} is scripted to fail", req.seed),
            );
        }
        match self.render(&req) {
            Ok((label, video)) => {
                self.register_video(&label, &video);
                tracing::debug!(%label, "mock video rendered");
                match self.codec.encode(&video.to_container()) {
                    Ok(t) => (200, json!({ "video": t }).to_string()),
                    Err(e) => error_reply(500, "wire", e),
                }
            }
            Err(msg) => error_reply(422, "invalid_request", msg),
        }
    }

    fn render(&self, req: &GenerateRequest) -> Result<(String, VideoTensor), String> {
        let OutputDims {
            frames,
            height,
            width,
            channels,
        } = req.output;
        let d = req.downsample;
        let noise = NoiseVolume::from_container(req.noise.decode()?).map_err(|e| e.to_string())?;
        let expect = NoiseShape::for_pixels(frames, height, width, noise.shape().channels, d);
        if noise.shape() != expect {
            return Err(format!(
                "noise {:?} does not fit output at d={d}: {expect:?}",
                noise.shape()
            ));
        }
        let mut total = vec![0.0f64; frames * expect.height * expect.width];
        for region in &req.prompt_regions {
            let w =
                PooledMask::from_container(region.weights.decode()?).map_err(|e| e.to_string())?;
            if (w.frames(), w.height(), w.width()) != (frames, expect.height, expect.width) {
                return Err("region weights do not match the latent grid".into());
            }
            for (acc, v) in total.iter_mut().zip(w.data()) {
                *acc += v;
            }
        }
        if let Some(bad) = total.iter().find(|s| (*s - 1.0).abs() > 1e-5) {
            return Err(format!("region weights sum to {bad}, not 1"));
        }

        let reference = match (&req.reference, &req.preserve_mask) {
            (Some(r), Some(m)) => {
                let video = VideoTensor::from_container(r.decode()?).map_err(|e| e.to_string())?;
                let mask = {
                    let (dims, data) = m.decode()?.expect_u8(3).map_err(|e| e.to_string())?;
                    MaskVolume::new(dims[0], dims[1], dims[2], data).map_err(|e| e.to_string())?
                };
                if (
                    video.frames(),
                    video.height(),
                    video.width(),
                    video.channels(),
                ) != (frames, height, width, channels)
                    || (mask.frames(), mask.height(), mask.width()) != (frames, height, width)
                {
                    return Err("reference or mask does not match the output dims".into());
                }
                Some((video, mask))
            }
            (None, None) => None,
            _ => return Err("reference and preserve_mask go together".into()),
        };

        let label = match &reference {
            Some((video, _)) => format!(
                "{}.s{}",
                self.label_of(video)
                    .unwrap_or_else(|| UNREGISTERED.to_owned()),
                req.seed
            ),
            None => format!("s{}", req.seed),
        };
        let key = u64::from_le_bytes(Sha256::digest(label.as_bytes())[..8].try_into().unwrap());
        let video = VideoTensor::from_fn(frames, height, width, channels, |t, y, x, c| {
            if let Some((src, mask)) = &reference {
                if mask.get(t, y, x) == 1 {
                    return src.pixel(t, y, x)[c];
                }
            }
            let idx = (((t * height + y) * width + x) * channels + c) as u64;
            splitmix64(key.wrapping_add(idx)) as u8
        })
        .map_err(|e| e.to_string())?;
        Ok((label, video))
    }
}

/// In-process transport that calls a mock role directly.
pub struct MockTransport {
    state: Arc<MockState>,
    role: BackendRole,
}

impl MockTransport {
    pub fn new(state: Arc<MockState>, role: BackendRole) -> Self {
        Self { state, role }
    }
}

impl Transport for MockTransport {
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<String, BackendError> {
        let (status, text) = self.state.handle(endpoint, body);
        if (200..300).contains(&status) {
            Ok(text)
        } else {
            Err(BackendError::Status {
                role: self.role,
                location: self.location(),
                status,
                body: text,
            })
        }
    }

    fn location(&self) -> String {
        format!("mock:{}", self.role)
    }
}

/// Binds every role to in-process mocks sharing one state.
pub fn in_process_backends(state: &Arc<MockState>, codec: WireCodec) -> super::Backends {
    BackendRole::ALL
        .into_iter()
        .fold(super::Backends::new(codec), |b, role| {
            b.bind(role, Arc::new(MockTransport::new(state.clone(), role)))
        })
}

/// Roles an unscripted request was routed to, for diagnostics.
pub fn roles_with_unscripted(stats: &BTreeMap<BackendRole, RoleStats>) -> HashSet<BackendRole> {
    stats
        .iter()
        .filter(|(_, s)| s.unscripted > 0)
        .map(|(r, _)| *r)
        .collect()
}
