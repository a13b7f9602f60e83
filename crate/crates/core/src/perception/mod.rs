//! Detection and depth backends, plus the scale-invariant depth loss used to
//! score a depth backend against ground truth.
//!
//! The backends here are the integration seam for neural detectors and depth
//! networks. The bundled implementations are deterministic: an oracle that
//! reads a [`SceneScript`](crate::sim::SceneScript), replay from recorded
//! files, and constants.

pub mod coco;
mod loss;
mod perturb;
mod replay;

use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::imgproc::RgbFrame;
use crate::sim::SceneScript;

pub use loss::scale_invariant_loss;
pub use perturb::{perturb_backend, NoiseSpec};
pub use replay::{
    parse_detection_replay, read_packed_depth, write_detection_replay, write_packed_depth, DepthReplay,
    DetectionReplay, DEPTH_MAGIC,
};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("no replay entry for frame {0}")]
    ReplayGap(u64),
    #[error("depth map is {actual_w}x{actual_h}, frame is {expected_w}x{expected_h}")]
    DimensionMismatch { expected_w: usize, expected_h: usize, actual_w: usize, actual_h: usize },
    #[error("depth value {value} at pixel {index} is not positive")]
    NonPositiveDepth { index: usize, value: f32 },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid backend: {0}")]
    InvalidBackend(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PerceptionError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into().display().to_string(), source }
    }
}

/// Axis-aligned box in pixel coordinates; covers `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center_x(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    pub fn center_y(&self) -> f64 {
        0.5 * (self.y_min + self.y_max)
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width as f64 && self.y_max <= height as f64
    }

    /// Clamped copy, `None` if nothing remains.
    pub fn clamped(&self, width: usize, height: usize) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.clamp(0.0, width as f64),
            self.y_min.clamp(0.0, height as f64),
            self.x_max.clamp(0.0, width as f64),
            self.y_max.clamp(0.0, height as f64),
        );
        b.is_well_formed().then_some(b)
    }

    /// Integer pixel coordinates `px` with `x_min <= px < x_max`, clamped to `[0, width)`.
    pub fn columns(&self, width: usize) -> Range<usize> {
        pixel_span(self.x_min, self.x_max, width)
    }

    pub fn rows(&self, height: usize) -> Range<usize> {
        pixel_span(self.y_min, self.y_max, height)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let iy = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

fn pixel_span(min: f64, max: f64, limit: usize) -> Range<usize> {
    let lo = min.ceil().clamp(0.0, limit as f64) as usize;
    let hi = max.ceil().clamp(0.0, limit as f64) as usize;
    lo..hi.max(lo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u8,
    pub score: f32,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u8, score: f32) -> Result<Self, PerceptionError> {
        if class_id as usize >= coco::NUM_CLASSES {
            return Err(PerceptionError::InvalidDetection(format!("class id {class_id} outside 0..80")));
        }
        if !bbox.is_well_formed() {
            return Err(PerceptionError::InvalidDetection(format!("degenerate box {bbox:?}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(PerceptionError::InvalidDetection(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, class_id, score })
    }

    pub fn class_label(&self) -> &'static str {
        coco::COCO_CLASSES[self.class_id as usize]
    }
}

pub(crate) fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Per-pixel depth on a 0-255 scale, smaller is nearer.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

/// Depth assigned to pixels not covered by any object.
pub const FAR_DEPTH: f32 = 255.0;

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, PerceptionError> {
        if values.len() != width * height {
            return Err(PerceptionError::DimensionMismatch {
                expected_w: width,
                expected_h: height,
                actual_w: values.len(),
                actual_h: 1,
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=255.0).contains(*v)) {
            return Err(PerceptionError::InvalidBackend(format!("depth {v} at pixel {i} outside [0, 255]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, values: vec![value.clamp(0.0, 255.0); width * height] }
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, PerceptionError> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Rounded 8-bit export.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    /// Writes `depth` over `bbox`, keeping whichever value is nearer.
    pub fn paint_min(&mut self, bbox: &BBox, depth: f32) {
        let cols = bbox.columns(self.width);
        for y in bbox.rows(self.height) {
            let row = &mut self.values[y * self.width..(y + 1) * self.width];
            for v in &mut row[cols.clone()] {
                *v = v.min(depth);
            }
        }
    }

    fn check_size(&self, frame: &RgbFrame) -> Result<(), PerceptionError> {
        if self.width != frame.width() || self.height != frame.height() {
            return Err(PerceptionError::DimensionMismatch {
                expected_w: frame.width(),
                expected_h: frame.height(),
                actual_w: self.width,
                actual_h: self.height,
            });
        }
        Ok(())
    }
}

/// Where a backend gets its answers.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    /// Ground truth read from a scene script.
    Oracle(Arc<SceneScript>),
    /// Detection replay file, or depth replay (packed file or image directory).
    Replay(PathBuf),
    /// No detections; uniform depth of the given value.
    Constant(f32),
    /// Seeded imperfections layered over another backend.
    Perturbed { inner: Box<BackendSpec>, noise: NoiseSpec, seed: u64 },
}

pub trait DetectionBackend: Send + Sync {
    /// Detections for `frame_index`, sorted by descending score.
    fn detect(&self, frame_index: u64, frame: &RgbFrame) -> Result<Vec<Detection>, PerceptionError>;
}

pub trait DepthBackend: Send + Sync {
    fn estimate_depth(&self, frame_index: u64, frame: &RgbFrame) -> Result<DepthMap, PerceptionError>;
}

struct OracleBackend(Arc<SceneScript>);

impl DetectionBackend for OracleBackend {
    fn detect(&self, frame_index: u64, _frame: &RgbFrame) -> Result<Vec<Detection>, PerceptionError> {
        let mut dets = self.0.ground_truth_detections(frame_index);
        sort_by_score(&mut dets);
        Ok(dets)
    }
}

impl DepthBackend for OracleBackend {
    fn estimate_depth(&self, frame_index: u64, _frame: &RgbFrame) -> Result<DepthMap, PerceptionError> {
        Ok(self.0.ground_truth_depth(frame_index))
    }
}

struct ConstantBackend(f32);

impl DetectionBackend for ConstantBackend {
    fn detect(&self, _: u64, _: &RgbFrame) -> Result<Vec<Detection>, PerceptionError> {
        Ok(Vec::new())
    }
}

impl DepthBackend for ConstantBackend {
    fn estimate_depth(&self, _: u64, frame: &RgbFrame) -> Result<DepthMap, PerceptionError> {
        Ok(DepthMap::filled(frame.width(), frame.height(), self.0))
    }
}

impl DetectionBackend for DetectionReplay {
    fn detect(&self, frame_index: u64, frame: &RgbFrame) -> Result<Vec<Detection>, PerceptionError> {
        let records = self.frame(frame_index).ok_or(PerceptionError::ReplayGap(frame_index))?;
        let mut dets: Vec<Detection> = records
            .iter()
            .filter_map(|d| {
                let bbox = d.bbox.clamped(frame.width(), frame.height())?;
                Some(Detection { bbox, ..*d })
            })
            .collect();
        sort_by_score(&mut dets);
        Ok(dets)
    }
}

impl DepthBackend for DepthReplay {
    fn estimate_depth(&self, frame_index: u64, frame: &RgbFrame) -> Result<DepthMap, PerceptionError> {
        let map = self.load(frame_index)?;
        map.check_size(frame)?;
        Ok(map)
    }
}

fn check_constant(value: f32) -> Result<(), PerceptionError> {
    if !(0.0..=255.0).contains(&value) {
        return Err(PerceptionError::InvalidBackend(format!("constant depth {value} outside [0, 255]")));
    }
    Ok(())
}

/// Initializes a detection backend; replay files are parsed here.
pub fn open_detector(spec: &BackendSpec) -> Result<Box<dyn DetectionBackend>, PerceptionError> {
    Ok(match spec {
        BackendSpec::Oracle(script) => Box::new(OracleBackend(script.clone())),
        BackendSpec::Replay(path) => Box::new(DetectionReplay::load(path)?),
        BackendSpec::Constant(v) => {
            check_constant(*v)?;
            Box::new(ConstantBackend(*v))
        }
        BackendSpec::Perturbed { inner, noise, seed } => {
            noise.validate()?;
            Box::new(perturb::PerturbedDetector::new(open_detector(inner)?, *noise, *seed))
        }
    })
}

pub fn open_depth(spec: &BackendSpec) -> Result<Box<dyn DepthBackend>, PerceptionError> {
    Ok(match spec {
        BackendSpec::Oracle(script) => Box::new(OracleBackend(script.clone())),
        BackendSpec::Replay(path) => Box::new(DepthReplay::open(path)?),
        BackendSpec::Constant(v) => {
            check_constant(*v)?;
            Box::new(ConstantBackend(*v))
        }
        BackendSpec::Perturbed { inner, noise, seed } => {
            noise.validate()?;
            Box::new(perturb::PerturbedDepth::new(open_depth(inner)?, *noise, *seed))
        }
    })
}

/// One-shot detection through `backend`.
pub fn detect(frame_index: u64, frame: &RgbFrame, backend: &BackendSpec) -> Result<Vec<Detection>, PerceptionError> {
    open_detector(backend)?.detect(frame_index, frame)
}

/// One-shot depth estimation through `backend`.
pub fn estimate_depth(frame_index: u64, frame: &RgbFrame, backend: &BackendSpec) -> Result<DepthMap, PerceptionError> {
    open_depth(backend)?.estimate_depth(frame_index, frame)
}
