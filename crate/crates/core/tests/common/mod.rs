#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tempfile::TempDir;
use vrefine_core::backends::mock::demo::DemoScenario;
use vrefine_core::backends::mock::{in_process_backends, MockState, MockSuite};
use vrefine_core::backends::{Backends, HttpOptions, WireCodec};
use vrefine_core::config::PipelineConfig;
use vrefine_core::tensor::MaskVolume;

pub struct Harness {
    pub suite: Option<MockSuite>,
    pub state: Arc<MockState>,
    pub backends: Backends,
    pub config: PipelineConfig,
    pub dir: TempDir,
}

impl Harness {
    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }
}

fn prepare(demo: &DemoScenario) -> (TempDir, PipelineConfig, WireCodec, Arc<MockState>) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = demo.config.clone();
    config.output_dir = dir.path().join("out");
    config.spill_dir = Some(dir.path().join("wire"));
    let codec = config.wire_codec();
    let state = MockState::new(demo.scenario.clone(), codec.clone()).unwrap();
    (dir, config, codec, state)
}

/// Mocks served over HTTP on ephemeral ports.
pub fn http(demo: &DemoScenario) -> Harness {
    let (dir, mut config, codec, state) = prepare(demo);
    let suite = MockSuite::start(state.clone(), None).unwrap();
    config.backends = suite.endpoints();
    let backends =
        Backends::from_endpoints(&config.backends, &HttpOptions::default(), codec).unwrap();
    Harness {
        suite: Some(suite),
        state,
        backends,
        config,
        dir,
    }
}

/// Mocks called in-process.
pub fn in_process(demo: &DemoScenario) -> Harness {
    let (dir, config, codec, state) = prepare(demo);
    let backends = in_process_backends(&state, codec);
    Harness {
        suite: None,
        state,
        backends,
        config,
        dir,
    }
}

/// Expected preservation mask: every frame takes the rectangle of the latest
/// keyframe at or before it. Computed pixel by pixel.
pub fn forward_filled_rects(
    frames: usize,
    height: usize,
    width: usize,
    rects: &[(usize, [usize; 4])],
) -> MaskVolume {
    let mut data = Vec::with_capacity(frames * height * width);
    for t in 0..frames {
        let (_, [x0, y0, x1, y1]) = rects
            .iter()
            .rev()
            .find(|(k, _)| *k <= t)
            .copied()
            .expect("a keyframe at 0");
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(x0 <= x && x < x1 && y0 <= y && y < y1));
            }
        }
    }
    MaskVolume::new(frames, height, width, data).unwrap()
}

/// Relative path -> bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}
