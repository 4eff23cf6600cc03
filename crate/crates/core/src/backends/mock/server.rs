use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::Router;
use tokio::runtime::Runtime;

use super::{MockState, RoleStats};
use crate::backends::{BackendRole, Endpoint};

const BODY_LIMIT: usize = 256 << 20;

/// One HTTP server per backend role, all sharing a [`MockState`].
pub struct MockSuite {
    state: Arc<MockState>,
    addrs: BTreeMap<BackendRole, SocketAddr>,
    runtime: Option<Runtime>,
}

fn json_reply(status: u16, body: String) -> axum::response::Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn router(state: Arc<MockState>, role: BackendRole) -> Router {
    let mut app = Router::new();
    for &endpoint in role.endpoints() {
        let st = state.clone();
        app = app.route(
            endpoint.path(),
            post(move |body: String| {
                let st = st.clone();
                async move {
                    let outcome =
                        tokio::task::spawn_blocking(move || st.handle_raw(endpoint, &body)).await;
                    match outcome {
                        Ok((status, text)) => json_reply(status, text),
                        Err(e) => {
                            json_reply(500, serde_json::json!({"error": e.to_string()}).to_string())
                        }
                    }
                }
            }),
        );
    }
    let st = state.clone();
    app.route(
        "/healthz",
        get(|| async { json_reply(200, r#"{"status":"ok"}"#.to_owned()) }),
    )
    .route(
        "/__stats",
        get(move || {
            let st = st.clone();
            async move {
                let body = serde_json::to_string(&st.role_stats(role)).expect("stats serialize");
                json_reply(200, body)
            }
        }),
    )
    .layer(DefaultBodyLimit::max(BODY_LIMIT))
}

impl MockSuite {
    /// Starts all six role servers on 127.0.0.1. With a base port, role `i`
    /// listens on `base_port + i`; otherwise the OS picks free ports.
    pub fn start(state: Arc<MockState>, base_port: Option<u16>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let mut addrs = BTreeMap::new();
        for (i, role) in BackendRole::ALL.into_iter().enumerate() {
            let port = base_port.map_or(0, |p| p + i as u16);
            let listener = TcpListener::bind(("127.0.0.1", port))?;
            listener.set_nonblocking(true)?;
            addrs.insert(role, listener.local_addr()?);
            let app = router(state.clone(), role);
            let _guard = runtime.enter();
            let listener = tokio::net::TcpListener::from_std(listener)?;
            runtime.spawn(async move {
                if let Err(e) = axum::serve(listener, app).await {
                    tracing::error!(%role, error = %e, "mock server stopped");
                }
            });
        }
        Ok(Self {
            state,
            addrs,
            runtime: Some(runtime),
        })
    }

    pub fn state(&self) -> &Arc<MockState> {
        &self.state
    }

    pub fn url(&self, role: BackendRole) -> String {
        format!("http://{}", self.addrs[&role])
    }

    pub fn endpoints(&self) -> BTreeMap<BackendRole, String> {
        self.addrs.keys().map(|&r| (r, self.url(r))).collect()
    }

    pub fn stats(&self) -> BTreeMap<BackendRole, RoleStats> {
        self.state.stats()
    }

    /// Endpoint paths served by `role`, for diagnostics.
    pub fn paths(role: BackendRole) -> Vec<&'static str> {
        role.endpoints()
            .iter()
            .map(|e: &Endpoint| e.path())
            .collect()
    }
}

impl Drop for MockSuite {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
