//! The v1 JSON Schema documents, compiled once and shared by clients and mocks.

use std::sync::OnceLock;

use jsonschema::Validator;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemaId {
    PlanRequest,
    PlanResponse,
    RefinePromptRequest,
    RefinePromptResponse,
    VqaRequest,
    VqaCountResponse,
    VqaAttributeResponse,
    VqaSelectResponse,
    PointRequest,
    PointResponse,
    SegmentRequest,
    SegmentResponse,
    GenerateRequest,
    GenerateResponse,
    ScoreRequest,
    ScoreResponse,
}

const COUNT: usize = 16;

impl SchemaId {
    pub const ALL: [SchemaId; COUNT] = [
        SchemaId::PlanRequest,
        SchemaId::PlanResponse,
        SchemaId::RefinePromptRequest,
        SchemaId::RefinePromptResponse,
        SchemaId::VqaRequest,
        SchemaId::VqaCountResponse,
        SchemaId::VqaAttributeResponse,
        SchemaId::VqaSelectResponse,
        SchemaId::PointRequest,
        SchemaId::PointResponse,
        SchemaId::SegmentRequest,
        SchemaId::SegmentResponse,
        SchemaId::GenerateRequest,
        SchemaId::GenerateResponse,
        SchemaId::ScoreRequest,
        SchemaId::ScoreResponse,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            SchemaId::PlanRequest => "plan.request.json",
            SchemaId::PlanResponse => "plan.response.json",
            SchemaId::RefinePromptRequest => "refineprompt.request.json",
            SchemaId::RefinePromptResponse => "refineprompt.response.json",
            SchemaId::VqaRequest => "vqa.request.json",
            SchemaId::VqaCountResponse => "vqa.count.response.json",
            SchemaId::VqaAttributeResponse => "vqa.attribute.response.json",
            SchemaId::VqaSelectResponse => "vqa.select.response.json",
            SchemaId::PointRequest => "point.request.json",
            SchemaId::PointResponse => "point.response.json",
            SchemaId::SegmentRequest => "segment.request.json",
            SchemaId::SegmentResponse => "segment.response.json",
            SchemaId::GenerateRequest => "generate.request.json",
            SchemaId::GenerateResponse => "generate.response.json",
            SchemaId::ScoreRequest => "score.request.json",
            SchemaId::ScoreResponse => "score.response.json",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            SchemaId::PlanRequest => include_str!("../../schemas/v1/plan.request.json"),
            SchemaId::PlanResponse => include_str!("../../schemas/v1/plan.response.json"),
            SchemaId::RefinePromptRequest => {
                include_str!("../../schemas/v1/refineprompt.request.json")
            }
            SchemaId::RefinePromptResponse => {
                include_str!("../../schemas/v1/refineprompt.response.json")
            }
            SchemaId::VqaRequest => include_str!("../../schemas/v1/vqa.request.json"),
            SchemaId::VqaCountResponse => include_str!("../../schemas/v1/vqa.count.response.json"),
            SchemaId::VqaAttributeResponse => {
                include_str!("../../schemas/v1/vqa.attribute.response.json")
            }
            SchemaId::VqaSelectResponse => {
                include_str!("../../schemas/v1/vqa.select.response.json")
            }
            SchemaId::PointRequest => include_str!("../../schemas/v1/point.request.json"),
            SchemaId::PointResponse => include_str!("../../schemas/v1/point.response.json"),
            SchemaId::SegmentRequest => include_str!("../../schemas/v1/segment.request.json"),
            SchemaId::SegmentResponse => include_str!("../../schemas/v1/segment.response.json"),
            SchemaId::GenerateRequest => include_str!("../../schemas/v1/generate.request.json"),
            SchemaId::GenerateResponse => include_str!("../../schemas/v1/generate.response.json"),
            SchemaId::ScoreRequest => include_str!("../../schemas/v1/score.request.json"),
            SchemaId::ScoreResponse => include_str!("../../schemas/v1/score.response.json"),
        }
    }

    fn index(self) -> usize {
        SchemaId::ALL
            .iter()
            .position(|&s| s == self)
            .expect("listed")
    }

    fn validator(self) -> &'static Validator {
        static CACHE: [OnceLock<Validator>; COUNT] = [const { OnceLock::new() }; COUNT];
        CACHE[self.index()].get_or_init(|| {
            let doc: Value = serde_json::from_str(self.source())
                .unwrap_or_else(|e| panic!("schema {} is not JSON: {e}", self.file_name()));
            jsonschema::validator_for(&doc)
                .unwrap_or_else(|e| panic!("schema {} does not compile: {e}", self.file_name()))
        })
    }

    /// Validates `instance`, joining all violations into one message.
    pub fn validate(self, instance: &Value) -> Result<(), String> {
        let errors: Vec<String> = self
            .validator()
            .iter_errors(instance)
            .map(|e| format!("{} at {}", e, e.instance_path()))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(format!("{}: {}", self.file_name(), errors.join("; ")))
        }
    }
}
