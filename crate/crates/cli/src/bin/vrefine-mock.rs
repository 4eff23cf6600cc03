//! Serves scripted mock backends until interrupted.
//!
//! Prints one JSON line mapping each role to its base URL, then blocks.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vrefine_core::backends::mock::demo;
use vrefine_core::backends::mock::{MockState, MockSuite, Scenario, VideoEntry};
use vrefine_core::backends::WireCodec;

#[derive(Debug, Parser)]
#[command(name = "vrefine-mock", version, about = "Scripted mock model backends")]
struct Args {
    /// Scenario file, or one of the built-in demo names.
    #[arg(long)]
    scenario: String,
    /// Serve role `i` on `base_port + i` instead of ephemeral ports.
    #[arg(long)]
    base_port: Option<u16>,
    /// Directory for tensors too large to send inline.
    #[arg(long)]
    spill_dir: Option<PathBuf>,
    /// Register a video under a label, as `label=path`.
    #[arg(long = "video", value_name = "LABEL=PATH")]
    videos: Vec<String>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn load(args: &Args) -> Result<Scenario, String> {
    let mut scenario = match demo::by_name(&args.scenario) {
        Some(d) => d.scenario,
        None => Scenario::load(&PathBuf::from(&args.scenario))
            .map_err(|e| format!("{e} (built-in scenarios: {})", demo::NAMES.join(", ")))?,
    };
    for v in &args.videos {
        let (label, path) = v
            .split_once('=')
            .ok_or_else(|| format!("--video {v}: expected label=path"))?;
        scenario.videos.push(VideoEntry {
            label: label.to_owned(),
            path: PathBuf::from(path),
        });
    }
    Ok(scenario)
}

fn main() -> ExitCode {
    let args = Args::parse();
    vrefine_cli::init_logging(args.verbose.max(1));
    let scenario = match load(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ConfigError: {e}");
            return ExitCode::from(vrefine_cli::EXIT_CONFIG);
        }
    };
    let codec = args
        .spill_dir
        .as_ref()
        .map_or_else(WireCodec::default, WireCodec::new);
    let suite = match MockState::new(scenario, codec)
        .and_then(|state| MockSuite::start(state, args.base_port).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("Error: {e}");
            return ExitCode::from(vrefine_cli::EXIT_FAILURE);
        }
    };
    let endpoints: serde_json::Map<String, serde_json::Value> = suite
        .endpoints()
        .into_iter()
        .map(|(role, url)| (role.as_str().to_owned(), url.into()))
        .collect();
    println!("{}", serde_json::Value::Object(endpoints));
    let _ = std::io::stdout().flush();
    loop {
        std::thread::park();
    }
}
