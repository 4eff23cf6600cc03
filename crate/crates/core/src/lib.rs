pub mod backends;
pub mod config;
pub mod container;
pub mod latent;
pub mod pipeline;
pub mod planning;
pub mod rps;
pub mod templates;
pub mod tensor;

pub use backends::{BackendError, BackendRole, Backends, WireCodec};
pub use config::{PipelineConfig, VideoDims};
pub use container::{Container, ContainerError, DType};
pub use pipeline::{
    run_pipeline, run_pipeline_from, InitialVideo, PipelineError, PipelineResult, RoundReport,
    RunSummary,
};
pub use planning::{DsgScore, EvaluationReport, Question, QuestionSet, RefinementPlan};
pub use tensor::{FrameMask, Image, MaskVolume, VideoTensor};
