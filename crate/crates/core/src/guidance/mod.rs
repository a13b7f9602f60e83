//! Warning decisions: which third of the frame an object is in, how near it
//! is, whether it is approaching, and which sentence to speak.

mod debounce;
mod objects;
mod speech;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::Track;
use crate::imgproc::Point2;
use crate::perception::{BBox, DepthMap, Detection};

pub use debounce::Debouncer;
pub use objects::{ObjectTracker, TrackedObject};
pub use speech::{deliver, SinkConfig, SinkError, Speaker, SpeechSink};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("x = {x} is outside [0, {width})")]
    OutOfRange { x: f64, width: usize },
    #[error("bounding box covers no depth pixels")]
    EmptyBox,
    #[error("need at least 3 tracks or 2 depth samples to judge approach")]
    InsufficientEvidence,
    #[error("invalid zone configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Zone {
    Left,
    Center,
    Right,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Left, Zone::Center, Zone::Right];

    pub fn name(self) -> &'static str {
        match self {
            Zone::Left => "left",
            Zone::Center => "center",
            Zone::Right => "right",
        }
    }

    /// The spoken warning for this zone.
    pub fn warning_text(self) -> &'static str {
        match self {
            Zone::Left => "The object is approaching from the left.",
            Zone::Center => "The object is approaching from the center.",
            Zone::Right => "The object is approaching from the right.",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Zone {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Zone::ALL.into_iter().find(|z| z.name() == s).ok_or_else(|| format!("unknown zone {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneThresholds {
    pub left: f64,
    pub center: f64,
    pub right: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self { left: 210.0, center: 220.0, right: 210.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneConfig {
    pub frame_width: usize,
    pub left_boundary_ratio: f64,
    pub center_boundary_ratio: f64,
    pub thresholds: ZoneThresholds,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        Self {
            frame_width: 1280,
            left_boundary_ratio: 0.35,
            center_boundary_ratio: 0.65,
            thresholds: ZoneThresholds::default(),
        }
    }
}

impl ZoneConfig {
    pub fn with_width(self, frame_width: usize) -> Self {
        Self { frame_width, ..self }
    }

    fn boundary(&self, ratio: f64) -> f64 {
        // Guard against ratios like 0.35 landing a hair under the integer.
        (ratio * self.frame_width as f64 + 1e-9).floor()
    }

    /// First pixel column of the center zone.
    pub fn left_boundary(&self) -> f64 {
        self.boundary(self.left_boundary_ratio)
    }

    /// First pixel column of the right zone.
    pub fn center_boundary(&self) -> f64 {
        self.boundary(self.center_boundary_ratio)
    }

    pub fn threshold(&self, zone: Zone) -> f64 {
        match zone {
            Zone::Left => self.thresholds.left,
            Zone::Center => self.thresholds.center,
            Zone::Right => self.thresholds.right,
        }
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        let (l, c) = (self.left_boundary_ratio, self.center_boundary_ratio);
        if !(0.0 < l && l < c && c < 1.0) {
            return Err(GuidanceError::Config(format!("need 0 < left_boundary_ratio ({l}) < center_boundary_ratio ({c}) < 1")));
        }
        for (name, t) in [("left", self.thresholds.left), ("center", self.thresholds.center), ("right", self.thresholds.right)] {
            if !(t > 0.0 && t <= 255.0) {
                return Err(GuidanceError::Config(format!("thresholds.{name} = {t} outside (0, 255]")));
            }
        }
        if self.frame_width == 0 {
            return Err(GuidanceError::Config("frame_width must be positive".into()));
        }
        Ok(())
    }
}

/// Zone of a horizontal position; each boundary column belongs to the zone on its right.
pub fn zone_of(x_center: f64, cfg: &ZoneConfig) -> Result<Zone, GuidanceError> {
    if !(x_center >= 0.0 && x_center < cfg.frame_width as f64) {
        return Err(GuidanceError::OutOfRange { x: x_center, width: cfg.frame_width });
    }
    Ok(if x_center < cfg.left_boundary() {
        Zone::Left
    } else if x_center < cfg.center_boundary() {
        Zone::Center
    } else {
        Zone::Right
    })
}

/// Fraction used for the nearness statistic inside a box.
pub const DEPTH_PERCENTILE: f64 = 0.1;

/// 10th percentile (nearest rank) of the depth values inside `bbox`.
pub fn object_depth(depth: &DepthMap, bbox: &BBox) -> Result<f32, GuidanceError> {
    percentile_in_box(depth, bbox, DEPTH_PERCENTILE)
}

pub fn percentile_in_box(depth: &DepthMap, bbox: &BBox, p: f64) -> Result<f32, GuidanceError> {
    let cols = bbox.columns(depth.width());
    let rows = bbox.rows(depth.height());
    if cols.is_empty() || rows.is_empty() {
        return Err(GuidanceError::EmptyBox);
    }
    let mut vals = Vec::with_capacity(cols.len() * rows.len());
    for y in rows {
        let row = &depth.values()[y * depth.width()..(y + 1) * depth.width()];
        vals.extend_from_slice(&row[cols.clone()]);
    }
    let rank = ((p * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
    let (_, v, _) = vals.select_nth_unstable_by(rank - 1, f32::total_cmp);
    Ok(*v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproachParams {
    /// Weight of the radial-expansion term.
    pub alpha: f64,
    /// Weight of the depth-decrease term.
    pub beta: f64,
    /// Scores above this classify as approaching.
    pub threshold: f64,
    /// Frames of track and depth history considered.
    pub history_frames: usize,
}

impl Default for ApproachParams {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5, threshold: 0.01, history_frames: 5 }
    }
}

impl ApproachParams {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(GuidanceError::Config("alpha and beta must be non-negative and not both zero".into()));
        }
        if self.history_frames < 2 {
            return Err(GuidanceError::Config("history_frames must be at least 2".into()));
        }
        if !self.threshold.is_finite() {
            return Err(GuidanceError::Config("approach threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Mean outward radial velocity of the tracks, relative to their centroid and
/// divided by the box diagonal. `None` with fewer than three usable tracks.
pub fn radial_expansion(tracks: &[&Track], bbox: &BBox, history_frames: usize) -> Option<f64> {
    let samples: Vec<(Point2, Point2)> = tracks
        .iter()
        .filter_map(|t| {
            let pts = t.recent(history_frames);
            if pts.len() < 2 {
                return None;
            }
            let (first, last) = (pts[0], pts[pts.len() - 1]);
            let steps = (pts.len() - 1) as f64;
            Some((last, Point2::new((last.x - first.x) / steps, (last.y - first.y) / steps)))
        })
        .collect();
    if samples.len() < 3 || bbox.diagonal() <= 0.0 {
        return None;
    }
    let n = samples.len() as f64;
    let cx = samples.iter().map(|s| s.0.x).sum::<f64>() / n;
    let cy = samples.iter().map(|s| s.0.y).sum::<f64>() / n;
    let radial: f64 = samples
        .iter()
        .map(|(p, v)| {
            let (rx, ry) = (p.x - cx, p.y - cy);
            let r = rx.hypot(ry);
            if r < 1e-9 {
                0.0
            } else {
                (v.x * rx + v.y * ry) / r
            }
        })
        .sum();
    Some(radial / n / bbox.diagonal())
}

/// Per-frame decrease of the depth statistic over the trailing window, on a
/// 0-1 scale. `None` with fewer than two samples.
pub fn depth_decrease(depth_history: &[(u64, f32)], history_frames: usize) -> Option<f64> {
    let start = depth_history.len().saturating_sub(history_frames);
    let recent = &depth_history[start..];
    if recent.len() < 2 {
        return None;
    }
    let (f0, d0) = recent[0];
    let (f1, d1) = recent[recent.len() - 1];
    let frames = f1.checked_sub(f0).filter(|&d| d > 0)? as f64;
    Some((d0 as f64 - d1 as f64) / frames / 255.0)
}

/// Blend of radial flow expansion and depth decrease. When only one kind of
/// evidence is available its weight is renormalized to one.
pub fn approach_score(
    tracks_in_box: &[&Track],
    depth_history: &[(u64, f32)],
    bbox: &BBox,
    params: &ApproachParams,
) -> Result<f64, GuidanceError> {
    let flow = radial_expansion(tracks_in_box, bbox, params.history_frames);
    let depth = depth_decrease(depth_history, params.history_frames);
    let mut num = 0.0;
    let mut den = 0.0;
    if let Some(f) = flow {
        num += params.alpha * f;
        den += params.alpha;
    }
    if let Some(d) = depth {
        num += params.beta * d;
        den += params.beta;
    }
    if flow.is_none() && depth.is_none() || den == 0.0 {
        return Err(GuidanceError::InsufficientEvidence);
    }
    Ok(num / den)
}

/// Everything known about one detected object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub frame_index: u64,
    pub object_id: u64,
    pub detection: Detection,
    pub zone: Zone,
    pub depth_stat: f32,
    /// `None` when there was not enough evidence to judge.
    pub approach_score: Option<f64>,
    pub track_ids: Vec<u64>,
}

impl ObjectState {
    pub fn is_approaching(&self, threshold: f64) -> bool {
        self.approach_score.is_some_and(|s| s > threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarningEvent {
    pub frame_index: u64,
    pub zone: Zone,
    pub class_label: &'static str,
    pub depth_stat: f32,
    pub text: &'static str,
}

impl WarningEvent {
    pub fn new(frame_index: u64, zone: Zone, class_label: &'static str, depth_stat: f32) -> Self {
        Self { frame_index, zone, class_label, depth_stat, text: zone.warning_text() }
    }
}

/// Warns when the object is approaching and nearer than its zone's gate.
pub fn evaluate_object(state: &ObjectState, cfg: &ZoneConfig, approach_threshold: f64) -> Option<WarningEvent> {
    let near = (state.depth_stat as f64) < cfg.threshold(state.zone);
    (near && state.is_approaching(approach_threshold))
        .then(|| WarningEvent::new(state.frame_index, state.zone, state.detection.class_label(), state.depth_stat))
}
