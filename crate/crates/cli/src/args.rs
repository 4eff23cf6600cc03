use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vrefine_core::backends::BackendRole;

#[derive(Debug, Parser)]
#[command(
    name = "vrefine",
    version,
    about = "Refine generated videos by asking questions about them"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON config file. Falls back to $VIDEOREPAIR_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print JSON lines instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Log more to stderr; repeat for debug output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(flatten)]
    pub backends: BackendFlags,
}

#[derive(Debug, Args, Default)]
pub struct BackendFlags {
    #[arg(long = "backend.llm_planner", value_name = "URL", global = true)]
    pub llm_planner: Option<String>,
    #[arg(long = "backend.vqa", value_name = "URL", global = true)]
    pub vqa: Option<String>,
    #[arg(long = "backend.pointer", value_name = "URL", global = true)]
    pub pointer: Option<String>,
    #[arg(long = "backend.segmenter", value_name = "URL", global = true)]
    pub segmenter: Option<String>,
    #[arg(long = "backend.t2v", value_name = "URL", global = true)]
    pub t2v: Option<String>,
    #[arg(long = "backend.scorer", value_name = "URL", global = true)]
    pub scorer: Option<String>,
}

impl BackendFlags {
    pub fn bound(&self) -> BTreeMap<BackendRole, String> {
        [
            (BackendRole::LlmPlanner, &self.llm_planner),
            (BackendRole::Vqa, &self.vqa),
            (BackendRole::Pointer, &self.pointer),
            (BackendRole::Segmenter, &self.segmenter),
            (BackendRole::T2v, &self.t2v),
            (BackendRole::Scorer, &self.scorer),
        ]
        .into_iter()
        .filter_map(|(r, u)| u.clone().map(|u| (r, u)))
        .collect()
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a video for a prompt and refine it.
    Run(RunArgs),
    /// Score a stored video against a prompt's questions.
    Evaluate(EvaluateArgs),
    /// Build the preservation mask for a stored plan and video.
    Mask(MaskArgs),
    /// Re-rank a stored round and print the winner.
    Rank(RoundDirArgs),
    /// Re-rank a stored round and check the report is reproduced exactly.
    Replay(RoundDirArgs),
    /// Run the protocol conformance checks against the bound backends.
    Conformance,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompt: String,
    /// Candidates per round.
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum number of refinement rounds.
    #[arg(long)]
    pub iterations: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Refine this video instead of generating one.
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Noise the given video was generated from.
    #[arg(long, requires = "video")]
    pub noise: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub video: PathBuf,
    /// Reuse a stored question set instead of asking the planner.
    #[arg(long)]
    pub question_set: Option<PathBuf>,
    /// Also write the evaluation report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// A round's plan.json.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    /// Where to write the mask container.
    #[arg(long, default_value = "mask.vrtc")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RoundDirArgs {
    #[arg(long)]
    pub round_dir: PathBuf,
}
