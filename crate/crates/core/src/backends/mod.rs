//! Versioned JSON-over-HTTP protocol to the model backends, typed clients for
//! each role, and the scripted mock servers used in tests.

mod client;
pub mod conformance;
mod grid;
pub mod mock;
pub mod protocol;
pub mod schema;
mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{Backends, HttpOptions, HttpTransport, Reply, RoleClient, Transport};
pub use grid::frame_grid;
pub use wire::{TensorRef, WireCodec, INLINE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    LlmPlanner,
    Vqa,
    Pointer,
    Segmenter,
    T2v,
    Scorer,
}

impl BackendRole {
    pub const ALL: [BackendRole; 6] = [
        BackendRole::LlmPlanner,
        BackendRole::Vqa,
        BackendRole::Pointer,
        BackendRole::Segmenter,
        BackendRole::T2v,
        BackendRole::Scorer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendRole::LlmPlanner => "llm_planner",
            BackendRole::Vqa => "vqa",
            BackendRole::Pointer => "pointer",
            BackendRole::Segmenter => "segmenter",
            BackendRole::T2v => "t2v",
            BackendRole::Scorer => "scorer",
        }
    }

    pub fn endpoints(self) -> &'static [Endpoint] {
        match self {
            BackendRole::LlmPlanner => &[Endpoint::Plan, Endpoint::RefinePrompt],
            BackendRole::Vqa => &[Endpoint::Vqa],
            BackendRole::Pointer => &[Endpoint::Point],
            BackendRole::Segmenter => &[Endpoint::Segment],
            BackendRole::T2v => &[Endpoint::Generate],
            BackendRole::Scorer => &[Endpoint::Score],
        }
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown backend role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Plan,
    RefinePrompt,
    Vqa,
    Point,
    Segment,
    Generate,
    Score,
}

impl Endpoint {
    pub const ALL: [Endpoint; 7] = [
        Endpoint::Plan,
        Endpoint::RefinePrompt,
        Endpoint::Vqa,
        Endpoint::Point,
        Endpoint::Segment,
        Endpoint::Generate,
        Endpoint::Score,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Plan => "/v1/plan",
            Endpoint::RefinePrompt => "/v1/refineprompt",
            Endpoint::Vqa => "/v1/vqa",
            Endpoint::Point => "/v1/point",
            Endpoint::Segment => "/v1/segment",
            Endpoint::Generate => "/v1/generate",
            Endpoint::Score => "/v1/score",
        }
    }

    /// Short name, used as the scenario-script key.
    pub fn name(self) -> &'static str {
        &self.path()[4..]
    }

    pub fn role(self) -> BackendRole {
        match self {
            Endpoint::Plan | Endpoint::RefinePrompt => BackendRole::LlmPlanner,
            Endpoint::Vqa => BackendRole::Vqa,
            Endpoint::Point => BackendRole::Pointer,
            Endpoint::Segment => BackendRole::Segmenter,
            Endpoint::Generate => BackendRole::T2v,
            Endpoint::Score => BackendRole::Scorer,
        }
    }

    pub fn from_path(path: &str) -> Option<Endpoint> {
        Endpoint::ALL.into_iter().find(|e| e.path() == path)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("role {0} unbound")]
    Unbound(BackendRole),
    #[error("{role} transport error at {location}: {message}")]
    Transport {
        role: BackendRole,
        location: String,
        message: String,
    },
    #[error("{role} returned HTTP {status} at {location}: {body}")]
    Status {
        role: BackendRole,
        location: String,
        status: u16,
        body: String,
    },
    #[error("{role} protocol error at {location}: {message}")]
    Protocol {
        role: BackendRole,
        location: String,
        message: String,
        /// Raw reply body, kept for diagnosis.
        body: String,
    },
    #[error("tensor wire encoding failed: {0}")]
    Wire(String),
}

impl BackendError {
    pub fn is_protocol(&self) -> bool {
        matches!(self, BackendError::Protocol { .. })
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }

    /// The error text without the backend location, stable across hosts.
    pub fn portable_message(&self) -> String {
        match self {
            BackendError::Transport { role, message, .. } => {
                format!("{role} transport error: {message}")
            }
            BackendError::Status {
                role, status, body, ..
            } => format!("{role} returned HTTP {status}: {body}"),
            BackendError::Protocol { role, message, .. } => {
                format!("{role} protocol error: {message}")
            }
            other => other.to_string(),
        }
    }

    /// Raw reply body when the backend answered at all.
    pub fn raw_body(&self) -> Option<&str> {
        match self {
            BackendError::Protocol { body, .. } | BackendError::Status { body, .. } => Some(body),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_names_round_trip() {
        for role in BackendRole::ALL {
            assert_eq!(role.as_str().parse::<BackendRole>().unwrap(), role);
            assert_eq!(serde_json::to_value(role).unwrap(), role.as_str());
        }
        assert!("gpu".parse::<BackendRole>().is_err());
    }

    #[test]
    fn every_endpoint_belongs_to_its_role() {
        for e in Endpoint::ALL {
            assert!(e.role().endpoints().contains(&e));
            assert_eq!(Endpoint::from_path(e.path()), Some(e));
        }
        assert_eq!(Endpoint::RefinePrompt.name(), "refineprompt");
    }

    #[test]
    fn unbound_message() {
        assert_eq!(
            BackendError::Unbound(BackendRole::T2v).to_string(),
            "role t2v unbound"
        );
    }
}
