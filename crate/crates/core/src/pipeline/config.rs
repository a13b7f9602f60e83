use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CornerParams;
use crate::flow::FlowConfig;
use crate::guidance::{ApproachParams, SinkConfig, ZoneConfig};
use crate::perception::{perturb_backend, BackendSpec, NoiseSpec};
use crate::sim::SceneScript;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("invalid {param}: {message}")]
    Validation { param: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid(param: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { param: param.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// Directory of numbered PNG/PGM/PPM images.
    #[default]
    Images,
    /// Packed grayscale stream with a `GFRM` header.
    Packed,
    /// Scene script rendered on the fly.
    Scenario,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Oracle for scenario input, constant otherwise.
    #[default]
    Auto,
    /// Ground truth from the scenario script; needs scenario input.
    Oracle,
    Replay,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub path: Option<PathBuf>,
    pub value: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub max_corners: usize,
    pub quality_level: f64,
    pub min_distance: f64,
    pub block_side: usize,
    /// Corners are re-detected when fewer tracks than this remain active.
    pub reseed_floor: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let c = CornerParams::default();
        Self {
            max_corners: c.max_corners,
            quality_level: c.quality_level,
            min_distance: c.min_distance,
            block_side: c.block_side,
            reseed_floor: 50,
        }
    }
}

impl FeatureConfig {
    pub fn corner_params(&self) -> CornerParams {
        CornerParams {
            max_corners: self.max_corners,
            quality_level: self.quality_level,
            min_distance: self.min_distance,
            block_side: self.block_side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Frames during which a zone stays silent after warning.
    pub cooldown: u64,
    pub min_iou: f64,
    pub max_missed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { cooldown: 30, min_iou: 0.3, max_missed: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    /// Variance weight of the scale-invariant depth loss.
    pub loss_lambda: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self { loss_lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Event log destination; none means the log is kept in memory only.
    pub events: Option<PathBuf>,
    /// Directory for annotated PNG frames.
    pub annotate_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Skip frames whose backend answer is missing instead of failing.
    pub lenient: bool,
    pub input: InputConfig,
    pub detector: BackendConfig,
    pub depth: BackendConfig,
    pub noise: NoiseSpec,
    pub flow: FlowConfig,
    pub features: FeatureConfig,
    /// `frame_width` is replaced by the width of the input frames.
    pub zones: ZoneConfig,
    pub approach: ApproachParams,
    pub guidance: GuidanceConfig,
    pub perception: PerceptionConfig,
    pub sink: SinkConfig,
    pub output: OutputConfig,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Reads, parses and validates a config file. Relative paths are resolved
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let cfg = read_unvalidated(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Like [`load_config`], but the input section is neither required nor
/// checked. For callers that supply their own frames.
pub fn load_settings(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let cfg = read_unvalidated(path)?;
    cfg.validate_parameters()?;
    Ok(cfg)
}

fn read_unvalidated(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_unvalidated(&text, &path.display().to_string(), base)
}

pub fn parse_config(text: &str, origin: &str, base_dir: &Path) -> Result<PipelineConfig, ConfigError> {
    let cfg = parse_unvalidated(text, origin, base_dir)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_unvalidated(text: &str, origin: &str, base_dir: &Path) -> Result<PipelineConfig, ConfigError> {
    let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse { path: origin.into(), line, column, message: e.message().to_string() }
    })?;
    cfg.resolve_paths(base_dir);
    Ok(cfg)
}

impl PipelineConfig {
    /// Config reading `input` with every other setting at its default.
    pub fn for_input(kind: InputKind, path: impl Into<PathBuf>) -> Self {
        Self { input: InputConfig { kind, path: path.into() }, ..Self::default() }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.path);
        for b in [&mut self.detector, &mut self.depth] {
            if let Some(p) = b.path.as_mut() {
                fix(p);
            }
        }
        if let Some(p) = self.output.events.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output.annotate_dir.as_mut() {
            fix(p);
        }
        if let SinkConfig::File { path } = &mut self.sink {
            fix(path);
        }
    }

    fn backend_kind(&self, b: &BackendConfig) -> BackendKind {
        match (b.kind, self.input.kind) {
            (BackendKind::Auto, InputKind::Scenario) => BackendKind::Oracle,
            (BackendKind::Auto, _) => BackendKind::Constant,
            (kind, _) => kind,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.input.path.as_os_str().is_empty() {
            return Err(invalid("input.path", "missing"));
        }
        if !self.input.path.exists() {
            return Err(invalid("input.path", format!("{} does not exist", self.input.path.display())));
        }
        self.validate_parameters()
    }

    /// Everything except the input path.
    pub fn validate_parameters(&self) -> Result<(), ConfigError> {
        for (name, b) in [("detector", &self.detector), ("depth", &self.depth)] {
            match self.backend_kind(b) {
                BackendKind::Oracle if self.input.kind != InputKind::Scenario => {
                    return Err(invalid(&format!("{name}.kind"), "oracle backends need scenario input"));
                }
                BackendKind::Replay => match &b.path {
                    None => return Err(invalid(&format!("{name}.path"), "replay backends need a path")),
                    Some(p) if !p.exists() => {
                        return Err(invalid(&format!("{name}.path"), format!("{} does not exist", p.display())))
                    }
                    Some(_) => {}
                },
                BackendKind::Constant => {
                    if let Some(v) = b.value {
                        if !(0.0..=255.0).contains(&v) {
                            return Err(invalid(&format!("{name}.value"), format!("{v} outside [0, 255]")));
                        }
                    }
                }
                _ => {}
            }
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.dropout) {
            return Err(invalid("noise.dropout", format!("{} outside [0, 1]", n.dropout)));
        }
        if !(n.jitter >= 0.0 && n.jitter.is_finite()) {
            return Err(invalid("noise.jitter", "must be non-negative"));
        }
        if !(n.depth_sigma >= 0.0 && n.depth_sigma.is_finite()) {
            return Err(invalid("noise.depth_sigma", "must be non-negative"));
        }
        self.flow.validate().map_err(|e| invalid("flow", e.to_string()))?;
        let f = &self.features;
        if !(f.quality_level > 0.0 && f.quality_level <= 1.0) {
            return Err(invalid("features.quality_level", format!("{} outside (0, 1]", f.quality_level)));
        }
        if f.max_corners == 0 {
            return Err(invalid("features.max_corners", "must be at least 1"));
        }
        if !(f.min_distance >= 0.0 && f.min_distance.is_finite()) {
            return Err(invalid("features.min_distance", "must be non-negative"));
        }
        if f.block_side < 2 {
            return Err(invalid("features.block_side", "must be at least 2"));
        }
        if f.reseed_floor > f.max_corners {
            return Err(invalid("features.reseed_floor", "must not exceed max_corners"));
        }
        self.zones.validate().map_err(|e| invalid("zones", e.to_string()))?;
        self.approach.validate().map_err(|e| invalid("approach", e.to_string()))?;
        let g = &self.guidance;
        if !(0.0..=1.0).contains(&g.min_iou) || g.min_iou == 0.0 {
            return Err(invalid("guidance.min_iou", format!("{} outside (0, 1]", g.min_iou)));
        }
        let lambda = self.perception.loss_lambda;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid("perception.loss_lambda", format!("{lambda} outside [0, 1]")));
        }
        if let SinkConfig::Command { template, .. } = &self.sink {
            if template.split_whitespace().next().is_none() {
                return Err(invalid("sink.template", "empty command"));
            }
        }
        Ok(())
    }

    /// Backend specs for detection and depth, with noise layered on when set.
    /// `script` feeds oracle backends.
    pub fn backend_specs(&self, script: Option<&Arc<SceneScript>>, seed: u64) -> Result<(BackendSpec, BackendSpec), ConfigError> {
        let make = |name: &str, b: &BackendConfig, fallback: f32| -> Result<BackendSpec, ConfigError> {
            Ok(match self.backend_kind(b) {
                BackendKind::Auto => unreachable!("resolved above"),
                BackendKind::Oracle => BackendSpec::Oracle(
                    script.cloned().ok_or_else(|| invalid(&format!("{name}.kind"), "oracle backends need scenario input"))?,
                ),
                BackendKind::Replay => BackendSpec::Replay(
                    b.path.clone().ok_or_else(|| invalid(&format!("{name}.path"), "replay backends need a path"))?,
                ),
                BackendKind::Constant => BackendSpec::Constant(b.value.unwrap_or(fallback)),
            })
        };
        let mut det = make("detector", &self.detector, 255.0)?;
        let mut depth = make("depth", &self.depth, 255.0)?;
        if !self.noise.is_identity() {
            det = perturb_backend(det, self.noise, seed);
            depth = perturb_backend(depth, self.noise, seed);
        }
        Ok((det, depth))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_with_input() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("frames")).unwrap();
        dir
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = dir_with_input();
        let text = "[input]\npath = \"frames\"\n";
        let cfg = parse_config(text, "mem", dir.path()).unwrap();
        assert_eq!(cfg.input.path, dir.path().join("frames"));
        assert_eq!(cfg.flow.window_side, 15);
        assert_eq!(cfg.flow.num_levels, 5);
        assert_eq!(cfg.features.max_corners, 200);
        assert_eq!(cfg.features.quality_level, 0.03);
        assert_eq!(cfg.features.min_distance, 10.0);
        assert_eq!((cfg.zones.left_boundary_ratio, cfg.zones.center_boundary_ratio), (0.35, 0.65));
        assert_eq!((cfg.zones.thresholds.left, cfg.zones.thresholds.center, cfg.zones.thresholds.right), (210.0, 220.0, 210.0));
        assert_eq!(cfg.perception.loss_lambda, 0.5);
        assert_eq!(cfg.guidance.cooldown, 30);
        assert_eq!(cfg.features.reseed_floor, 50);
    }

    #[test]
    fn quality_level_out_of_range() {
        let dir = dir_with_input();
        let text = "[input]\npath = \"frames\"\n[detector]\nkind = \"constant\"\n[depth]\nkind = \"constant\"\n[features]\nquality_level = 1.5\n";
        match parse_config(text, "mem", dir.path()) {
            Err(ConfigError::Validation { param, .. }) => assert_eq!(param, "features.quality_level"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_input_path() {
        let dir = dir_with_input();
        let err = parse_config("[input]\npath = \"nowhere\"\n", "mem", dir.path()).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref param, .. } if param == "input.path"), "{err}");
        let err = parse_config("seed = 1\n", "mem", dir.path()).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref param, .. } if param == "input.path"), "{err}");
    }

    #[test]
    fn parse_error_has_line() {
        let dir = dir_with_input();
        let err = parse_config("seed = 1\n[flow]\nwindow_side = \"big\"\n", "cfg.toml", dir.path()).unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let err = parse_config("[flow]\nwindow = 3\n", "cfg.toml", dir.path()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn oracle_needs_scenario() {
        let dir = dir_with_input();
        let text = "[input]\npath = \"frames\"\n[depth]\nkind = \"oracle\"\n";
        let err = parse_config(text, "mem", dir.path()).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref param, .. } if param == "depth.kind"), "{err}");
    }
}
