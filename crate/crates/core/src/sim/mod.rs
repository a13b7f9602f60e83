//! Scripted synthetic scenes with exact ground truth, and a harness that runs
//! the full pipeline over them and scores the warnings.

mod noise;
mod render;
mod scenario;
mod script;

use thiserror::Error;

pub use noise::ValueNoise;
pub use render::{render, DenseFlow, Renderer, Rendered};
pub use scenario::{
    approach_events, bundled_bench, bundled_suite, run_scenario, ApproachEvent, Outcome, ScenarioReport, WarningOutcome,
    MATCH_SLACK,
};
pub use script::{Background, Keyframe, SceneScript, Sprite, SpriteState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scene script: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("frame {frame} is beyond the script's {duration} frames")]
    FrameOutOfRange { frame: u64, duration: u64 },
}
