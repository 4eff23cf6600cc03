use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::protocol::*;
use super::schema::SchemaId;
use super::wire::{TensorRef, WireCodec};
use super::{BackendError, BackendRole, Endpoint};
use crate::container::Container;

/// Carries one JSON request to a backend and returns the raw reply body.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<String, BackendError>;

    /// Where requests go, for error context.
    fn location(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub bearer_token: Option<String>,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            bearer_token: None,
        }
    }
}

pub struct HttpTransport {
    role: BackendRole,
    base_url: String,
    bearer_token: Option<String>,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport")
            .field("role", &self.role)
            .field("base_url", &self.base_url)
            .finish()
    }
}

impl HttpTransport {
    pub fn new(
        role: BackendRole,
        base_url: &str,
        opts: &HttpOptions,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(opts.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                role,
                location: base_url.to_owned(),
                message: e.to_string(),
            })?;
        Ok(Self {
            role,
            base_url: base_url.trim_end_matches('/').to_owned(),
            bearer_token: opts.bearer_token.clone(),
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<String, BackendError> {
        let url = format!("{}{}", self.base_url, endpoint.path());
        let mut req = self.client.post(&url).json(body);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let transport_err = |e: reqwest::Error| BackendError::Transport {
            role: self.role,
            location: url.clone(),
            message: e.to_string(),
        };
        let resp = req.send().map_err(transport_err)?;
        let status = resp.status();
        let text = resp.text().map_err(transport_err)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                role: self.role,
                location: url,
                status: status.as_u16(),
                body: text,
            });
        }
        Ok(text)
    }

    fn location(&self) -> String {
        self.base_url.clone()
    }
}

/// A successfully validated reply together with its raw body.
#[derive(Debug, Clone)]
pub struct Reply<T> {
    pub value: T,
    pub raw: String,
}

/// One backend role bound to a transport. Validates both directions against
/// the v1 schemas and retries once on transport failure.
#[derive(Clone)]
pub struct RoleClient {
    role: BackendRole,
    transport: Arc<dyn Transport>,
}

impl fmt::Debug for RoleClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoleClient")
            .field("role", &self.role)
            .field("location", &self.transport.location())
            .finish()
    }
}

impl RoleClient {
    pub fn new(role: BackendRole, transport: Arc<dyn Transport>) -> Self {
        Self { role, transport }
    }

    pub fn role(&self) -> BackendRole {
        self.role
    }

    fn protocol_error(
        &self,
        endpoint: Option<Endpoint>,
        message: String,
        body: String,
    ) -> BackendError {
        let only = match self.role.endpoints() {
            [single] => Some(*single),
            _ => None,
        };
        let location = match endpoint.or(only) {
            Some(e) => format!("{}{}", self.transport.location(), e.path()),
            None => self.transport.location(),
        };
        BackendError::Protocol {
            role: self.role,
            location,
            message,
            body,
        }
    }

    pub fn call<Req, Resp>(
        &self,
        endpoint: Endpoint,
        request: &Req,
        request_schema: SchemaId,
        response_schema: SchemaId,
    ) -> Result<Reply<Resp>, BackendError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        debug_assert_eq!(endpoint.role(), self.role);
        let body = serde_json::to_value(request).expect("protocol types serialize");
        if let Err(msg) = request_schema.validate(&body) {
            return Err(self.protocol_error(
                Some(endpoint),
                format!("request rejected locally: {msg}"),
                String::new(),
            ));
        }
        let request_bytes = body.to_string().len();

        let started = Instant::now();
        let raw = match self.transport.post(endpoint, &body) {
            Err(e) if e.is_transport() => {
                tracing::warn!(role = %self.role, %endpoint, error = %e, "retrying after transport error");
                self.transport.post(endpoint, &body)?
            }
            other => other?,
        };
        tracing::debug!(
            role = %self.role,
            %endpoint,
            latency_ms = started.elapsed().as_millis() as u64,
            request_bytes,
            response_bytes = raw.len(),
            "backend call"
        );

        let value: Value = serde_json::from_str(&raw).map_err(|e| {
            self.protocol_error(
                Some(endpoint),
                format!("reply is not JSON: {e}"),
                raw.clone(),
            )
        })?;
        response_schema
            .validate(&value)
            .map_err(|msg| self.protocol_error(Some(endpoint), msg, raw.clone()))?;
        let typed = serde_json::from_value(value).map_err(|e| {
            self.protocol_error(
                Some(endpoint),
                format!("reply does not decode: {e}"),
                raw.clone(),
            )
        })?;
        Ok(Reply { value: typed, raw })
    }

    /// Decodes a tensor carried in a reply, reporting failures as protocol
    /// errors against this role.
    pub fn decode_tensor(&self, tensor: &TensorRef, raw: &str) -> Result<Container, BackendError> {
        tensor
            .decode()
            .map_err(|msg| self.protocol_error(None, msg, raw.to_owned()))
    }

    pub fn reject(&self, message: impl Into<String>, raw: &str) -> BackendError {
        self.protocol_error(None, message.into(), raw.to_owned())
    }
}

/// The set of bound backend roles plus the tensor wire codec.
#[derive(Clone, Debug, Default)]
pub struct Backends {
    clients: BTreeMap<BackendRole, RoleClient>,
    codec: WireCodec,
}

impl Backends {
    pub fn new(codec: WireCodec) -> Self {
        Self {
            clients: BTreeMap::new(),
            codec,
        }
    }

    pub fn bind(mut self, role: BackendRole, transport: Arc<dyn Transport>) -> Self {
        self.clients.insert(role, RoleClient::new(role, transport));
        self
    }

    /// Binds an HTTP transport for every configured endpoint.
    pub fn from_endpoints(
        endpoints: &BTreeMap<BackendRole, String>,
        opts: &HttpOptions,
        codec: WireCodec,
    ) -> Result<Self, BackendError> {
        let mut out = Self::new(codec);
        for (&role, url) in endpoints {
            out = out.bind(role, Arc::new(HttpTransport::new(role, url, opts)?));
        }
        Ok(out)
    }

    pub fn has(&self, role: BackendRole) -> bool {
        self.clients.contains_key(&role)
    }

    pub fn require(&self, roles: &[BackendRole]) -> Result<(), BackendError> {
        match roles.iter().find(|r| !self.has(**r)) {
            Some(&r) => Err(BackendError::Unbound(r)),
            None => Ok(()),
        }
    }

    pub fn client(&self, role: BackendRole) -> Result<&RoleClient, BackendError> {
        self.clients.get(&role).ok_or(BackendError::Unbound(role))
    }

    pub fn codec(&self) -> &WireCodec {
        &self.codec
    }

    pub fn encode(&self, container: &Container) -> Result<TensorRef, BackendError> {
        self.codec.encode(container).map_err(BackendError::Wire)
    }

    pub fn plan(&self, req: &PlanRequest) -> Result<Reply<PlanReply>, BackendError> {
        self.client(BackendRole::LlmPlanner)?.call(
            Endpoint::Plan,
            req,
            SchemaId::PlanRequest,
            SchemaId::PlanResponse,
        )
    }

    pub fn refine_prompt(
        &self,
        req: &RefinePromptRequest,
    ) -> Result<Reply<RefinePromptReply>, BackendError> {
        self.client(BackendRole::LlmPlanner)?.call(
            Endpoint::RefinePrompt,
            req,
            SchemaId::RefinePromptRequest,
            SchemaId::RefinePromptResponse,
        )
    }

    pub fn vqa_count(&self, req: &VqaRequest) -> Result<Reply<CountAnswer>, BackendError> {
        debug_assert!(matches!(req, VqaRequest::AnswerCount { .. }));
        self.client(BackendRole::Vqa)?.call(
            Endpoint::Vqa,
            req,
            SchemaId::VqaRequest,
            SchemaId::VqaCountResponse,
        )
    }

    pub fn vqa_attribute(&self, req: &VqaRequest) -> Result<Reply<AttributeAnswer>, BackendError> {
        debug_assert!(matches!(req, VqaRequest::AnswerAttribute { .. }));
        self.client(BackendRole::Vqa)?.call(
            Endpoint::Vqa,
            req,
            SchemaId::VqaRequest,
            SchemaId::VqaAttributeResponse,
        )
    }

    pub fn select_objects(&self, req: &VqaRequest) -> Result<Reply<ObjectSelection>, BackendError> {
        debug_assert!(matches!(req, VqaRequest::SelectObjects { .. }));
        self.client(BackendRole::Vqa)?.call(
            Endpoint::Vqa,
            req,
            SchemaId::VqaRequest,
            SchemaId::VqaSelectResponse,
        )
    }

    pub fn point(&self, req: &PointRequest) -> Result<Reply<PointReply>, BackendError> {
        self.client(BackendRole::Pointer)?.call(
            Endpoint::Point,
            req,
            SchemaId::PointRequest,
            SchemaId::PointResponse,
        )
    }

    pub fn segment(&self, req: &SegmentRequest) -> Result<Reply<SegmentReply>, BackendError> {
        self.client(BackendRole::Segmenter)?.call(
            Endpoint::Segment,
            req,
            SchemaId::SegmentRequest,
            SchemaId::SegmentResponse,
        )
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<Reply<GenerateReply>, BackendError> {
        self.client(BackendRole::T2v)?.call(
            Endpoint::Generate,
            req,
            SchemaId::GenerateRequest,
            SchemaId::GenerateResponse,
        )
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<Reply<ScoreReply>, BackendError> {
        self.client(BackendRole::Scorer)?.call(
            Endpoint::Score,
            req,
            SchemaId::ScoreRequest,
            SchemaId::ScoreResponse,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    /// Replays canned outcomes in order and counts calls.
    struct Canned {
        replies: Mutex<Vec<Result<String, BackendError>>>,
        calls: AtomicUsize,
    }

    impl Canned {
        fn new(replies: Vec<Result<String, BackendError>>) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                calls: AtomicUsize::new(0),
            })
        }
    }

    impl Transport for Canned {
        fn post(&self, _: Endpoint, _: &Value) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().pop().expect("scripted reply")
        }
        fn location(&self) -> String {
            "canned".into()
        }
    }

    fn timeout() -> BackendError {
        BackendError::Transport {
            role: BackendRole::Scorer,
            location: "canned".into(),
            message: "timed out".into(),
        }
    }

    fn score_req() -> ScoreRequest {
        ScoreRequest {
            video: TensorRef::Inline {
                inline: String::new(),
            },
            prompt: "a bear".into(),
        }
    }

    #[test]
    fn transport_errors_retry_once() {
        let t = Canned::new(vec![Err(timeout()), Ok(r#"{"blip_bleu": 0.5}"#.into())]);
        let b = Backends::default().bind(BackendRole::Scorer, t.clone());
        assert_eq!(b.score(&score_req()).unwrap().value.blip_bleu, 0.5);
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);

        let t = Canned::new(vec![Err(timeout()), Err(timeout())]);
        let b = Backends::default().bind(BackendRole::Scorer, t.clone());
        assert!(b.score(&score_req()).unwrap_err().is_transport());
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn protocol_errors_do_not_retry_and_keep_body() {
        let t = Canned::new(vec![Ok(r#"{"bleu": 1}"#.into())]);
        let b = Backends::default().bind(BackendRole::Scorer, t.clone());
        let err = b.score(&score_req()).unwrap_err();
        assert!(err.is_protocol());
        assert_eq!(err.raw_body(), Some(r#"{"bleu": 1}"#));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn non_json_reply_is_protocol_error() {
        let t = Canned::new(vec![Ok("the score is high".into())]);
        let b = Backends::default().bind(BackendRole::Scorer, t);
        assert!(b.score(&score_req()).unwrap_err().is_protocol());
    }

    #[test]
    fn invalid_request_never_leaves_the_client() {
        let t = Canned::new(vec![]);
        let b = Backends::default().bind(BackendRole::Scorer, t.clone());
        let bad = ScoreRequest {
            video: TensorRef::Inline {
                inline: String::new(),
            },
            prompt: String::new(),
        };
        assert!(b.score(&bad).unwrap_err().is_protocol());
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn unbound_role() {
        let b = Backends::default();
        assert!(matches!(
            b.score(&score_req()),
            Err(BackendError::Unbound(BackendRole::Scorer))
        ));
        assert!(matches!(
            b.require(&[BackendRole::T2v]),
            Err(BackendError::Unbound(BackendRole::T2v))
        ));
    }
}
