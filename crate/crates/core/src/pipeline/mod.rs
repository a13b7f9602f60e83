//! The per-frame loop: grayscale, pyramid, tracks, perception, guidance.

mod annotate;
mod bench;
mod config;
mod eventlog;
mod source;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::features::{detect_corners, CornerParams, SpacingGrid};
use crate::flow::{FlowConfig, Track, TrackSet};
use crate::guidance::{
    approach_score, evaluate_object, object_depth, zone_of, ApproachParams, Debouncer, ObjectState, ObjectTracker,
    Speaker, WarningEvent, ZoneConfig,
};
use crate::imgproc::{to_grayscale, ImageError, Pyramid, RgbFrame};
use crate::perception::{open_depth, open_detector, BackendSpec, DepthBackend, DetectionBackend, PerceptionError};
use crate::sim::SceneScript;

pub use annotate::annotate_frame;
pub use bench::{bench, BenchReport, StageStats};
pub use config::{
    load_config, load_settings, parse_config, BackendConfig, BackendKind, ConfigError, FeatureConfig, GuidanceConfig, InputConfig,
    InputKind, OutputConfig, PerceptionConfig, PipelineConfig,
};
pub use eventlog::{format_event, parse_event, parse_event_log, write_event, EventLogError};
pub use source::{write_packed_frames, FrameSource, FRAME_MAGIC};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ingestion failed: {0}")]
    Ingest(String),
    #[error("backend failed: {0}")]
    Backend(#[from] PerceptionError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl PipelineError {
    /// Process exit status: 1 configuration, 2 ingestion or output, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Ingest(_) | Self::Image(_) | Self::Output { .. } => 2,
            Self::Backend(_) => 3,
        }
    }
}

/// Microseconds spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub grayscale: u64,
    pub pyramid: u64,
    pub corners: u64,
    pub flow: u64,
    pub perception: u64,
    pub guidance: u64,
}

impl StageTimings {
    pub const NAMES: [&'static str; 6] = ["grayscale", "pyramid", "corners", "flow", "perception", "guidance"];

    pub fn as_array(&self) -> [u64; 6] {
        [self.grayscale, self.pyramid, self.corners, self.flow, self.perception, self.guidance]
    }

    pub fn total(&self) -> u64 {
        self.as_array().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: u64,
    pub objects: Vec<ObjectState>,
    pub events: Vec<WarningEvent>,
    pub timings: StageTimings,
    /// Wall time of the whole frame, microseconds.
    pub elapsed_us: u64,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

/// Stateful per-frame processor.
pub struct Pipeline {
    flow: FlowConfig,
    corners: CornerParams,
    reseed_floor: usize,
    zones: ZoneConfig,
    approach: ApproachParams,
    lenient: bool,
    detector: Box<dyn DetectionBackend>,
    depth: Box<dyn DepthBackend>,
    tracks: TrackSet,
    objects: ObjectTracker,
    debouncer: Debouncer,
    speaker: Speaker,
    prev: Option<Pyramid>,
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig, detector: &BackendSpec, depth: &BackendSpec, frame_width: usize) -> Result<Self, PipelineError> {
        Ok(Self {
            flow: cfg.flow,
            corners: cfg.features.corner_params(),
            reseed_floor: cfg.features.reseed_floor,
            zones: cfg.zones.with_width(frame_width),
            approach: cfg.approach,
            lenient: cfg.lenient,
            detector: open_detector(detector)?,
            depth: open_depth(depth)?,
            tracks: TrackSet::with_history_limit(cfg.approach.history_frames.max(16)),
            objects: ObjectTracker::new(cfg.guidance.min_iou, cfg.guidance.max_missed, 16),
            debouncer: Debouncer::new(cfg.guidance.cooldown),
            speaker: Speaker::from_config(&cfg.sink),
            prev: None,
        })
    }

    pub fn tracks(&self) -> &TrackSet {
        &self.tracks
    }

    pub fn zones(&self) -> &ZoneConfig {
        &self.zones
    }

    /// Waits for queued speech to finish.
    pub fn finish(&mut self) {
        self.speaker.finish();
    }

    pub fn process(&mut self, frame: &RgbFrame) -> Result<FrameResult, PipelineError> {
        let start = Instant::now();
        let index = frame.frame_index();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let gray = to_grayscale(frame);
        timings.grayscale = micros(t);

        let t = Instant::now();
        let pyramid = Pyramid::build(gray, self.flow.num_levels)?;
        timings.pyramid = micros(t);

        let t = Instant::now();
        if let Some(prev) = &self.prev {
            self.tracks.advance(prev, &pyramid, &self.flow);
        }
        self.tracks.prune_lost();
        timings.flow = micros(t);

        let t = Instant::now();
        if self.tracks.active_count() < self.reseed_floor {
            self.reseed(index, &pyramid);
        }
        timings.corners = micros(t);

        let t = Instant::now();
        let (detector, depth) = (&self.detector, &self.depth);
        let (dets, depth_map) = std::thread::scope(|s| {
            let det = s.spawn(|| detector.detect(index, frame));
            let depth_map = depth.estimate_depth(index, frame);
            (det.join().expect("detector thread panicked"), depth_map)
        });
        timings.perception = micros(t);

        let t = Instant::now();
        let (objects, events) = match (dets, depth_map) {
            (Ok(dets), Ok(depth_map)) => self.guide(index, &dets, &depth_map),
            (Err(e), _) | (_, Err(e)) => {
                if !self.lenient {
                    return Err(e.into());
                }
                log::warn!("frame {index}: {e}; skipped");
                (Vec::new(), Vec::new())
            }
        };
        timings.guidance = micros(t);

        self.prev = Some(pyramid);
        Ok(FrameResult { frame_index: index, objects, events, timings, elapsed_us: micros(start) })
    }

    /// Tops the track set back up to `max_corners` with fresh corners that keep
    /// their distance from surviving tracks.
    fn reseed(&mut self, index: u64, pyramid: &Pyramid) {
        let base = pyramid.base();
        let corners = detect_corners(base, &self.corners);
        let mut grid = SpacingGrid::new(base.width(), base.height(), self.corners.min_distance);
        let mut active = 0;
        for t in self.tracks.active() {
            grid.insert(t.last_point());
            active += 1;
        }
        for p in corners.positions() {
            if active >= self.corners.max_corners {
                break;
            }
            if grid.is_clear(p) {
                grid.insert(p);
                self.tracks.spawn(index, p);
                active += 1;
            }
        }
    }

    fn guide(
        &mut self,
        index: u64,
        dets: &[crate::perception::Detection],
        depth_map: &crate::perception::DepthMap,
    ) -> (Vec<ObjectState>, Vec<WarningEvent>) {
        let mut kept = Vec::with_capacity(dets.len());
        let mut stats = Vec::with_capacity(dets.len());
        for d in dets {
            if let Ok(stat) = object_depth(depth_map, &d.bbox) {
                kept.push(*d);
                stats.push(stat);
            }
        }
        let ids = self.objects.observe(index, &kept, &stats);
        let mut states = Vec::with_capacity(kept.len());
        let mut events = Vec::new();
        for ((det, id), stat) in kept.iter().zip(ids).zip(stats) {
            let Ok(zone) = zone_of(det.bbox.center_x(), &self.zones) else {
                continue;
            };
            let object = self.objects.get(id).expect("observed objects are retained");
            // Tracks that were already inside the object's previous box; on a
            // first sighting the tracks under the box belong to whatever it covered.
            let inside: Vec<&Track> = match object.previous {
                Some((frame, before)) => self
                    .tracks
                    .active()
                    .filter(|t| {
                        let now = t.last_point();
                        let then = frame.checked_sub(t.first_frame).and_then(|k| t.points.get(k as usize));
                        t.last_frame() == index
                            && det.bbox.contains(now.x, now.y)
                            && then.is_some_and(|p| before.contains(p.x, p.y))
                    })
                    .collect(),
                None => Vec::new(),
            };
            let history = object.depth_history.as_slice();
            let score = approach_score(&inside, history, &det.bbox, &self.approach).ok();
            let state = ObjectState {
                frame_index: index,
                object_id: id,
                detection: *det,
                zone,
                depth_stat: stat,
                approach_score: score,
                track_ids: inside.iter().map(|t| t.id).collect(),
            };
            if let Some(event) = evaluate_object(&state, &self.zones, self.approach.threshold) {
                if let Some(event) = self.debouncer.admit(event) {
                    self.speaker.speak(&event);
                    events.push(event);
                }
            }
            states.push(state);
        }
        (states, events)
    }
}

/// Opened input, ready to run.
pub struct Session {
    pub source: FrameSource,
    pub pipeline: Pipeline,
}

impl Session {
    /// Opens the input and backends named by `cfg`.
    pub fn open(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let (source, script) = match cfg.input.kind {
            InputKind::Images => (FrameSource::open_images(&cfg.input.path)?, None),
            InputKind::Packed => (FrameSource::open_packed(&cfg.input.path)?, None),
            InputKind::Scenario => {
                let script = Arc::new(SceneScript::load(&cfg.input.path).map_err(|e| {
                    ConfigError::Validation { param: "input.path".into(), message: e.to_string() }
                })?);
                (FrameSource::scenario(script.clone(), cfg.seed), Some(script))
            }
        };
        Self::with_source(cfg, source, script.as_ref(), cfg.seed)
    }

    /// Builds a session over an existing source. `script` feeds oracle backends.
    pub fn with_source(
        cfg: &PipelineConfig,
        source: FrameSource,
        script: Option<&Arc<SceneScript>>,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        let (det, depth) = cfg.backend_specs(script, seed)?;
        let pipeline = Pipeline::new(cfg, &det, &depth, source.dims().0)?;
        Ok(Self { source, pipeline })
    }

    /// Processes up to `limit` frames, calling `each` after every frame.
    pub fn drive(
        &mut self,
        limit: Option<u64>,
        mut each: impl FnMut(&RgbFrame, &FrameResult, &Pipeline) -> Result<(), PipelineError>,
    ) -> Result<u64, PipelineError> {
        let n = limit.map_or(self.source.len(), |l| l.min(self.source.len()));
        for i in 0..n {
            let frame = self.source.frame(i)?;
            let result = self.pipeline.process(&frame)?;
            each(&frame, &result, &self.pipeline)?;
        }
        self.pipeline.finish();
        Ok(n)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub frames: u64,
    pub events: Vec<WarningEvent>,
    pub timings: Vec<StageTimings>,
}

fn output_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Output { path: path.display().to_string(), source }
}

/// Runs the configured input to the end, writing the event log and any
/// annotated frames.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let mut session = Session::open(cfg)?;
    let mut log: Option<BufWriter<File>> = match &cfg.output.events {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(output_err(p))?)),
        None => None,
    };
    if let Some(dir) = &cfg.output.annotate_dir {
        std::fs::create_dir_all(dir).map_err(output_err(dir))?;
    }
    let mut events = Vec::new();
    let mut timings = Vec::new();
    let frames = session.drive(None, |frame, result, pipeline| {
        for e in &result.events {
            if let (Some(w), Some(p)) = (log.as_mut(), cfg.output.events.as_ref()) {
                write_event(&mut *w, e).map_err(output_err(p))?;
            }
            log::info!("{}", format_event(e));
        }
        if let Some(dir) = &cfg.output.annotate_dir {
            let path = dir.join(format!("{:06}.png", result.frame_index));
            annotate_frame(frame, result, pipeline.tracks(), pipeline.zones())
                .save(&path)
                .map_err(|e| PipelineError::Output { path: path.display().to_string(), source: std::io::Error::other(e) })?;
        }
        events.extend(result.events.iter().cloned());
        timings.push(result.timings);
        Ok(())
    })?;
    if let (Some(mut w), Some(p)) = (log, cfg.output.events.as_ref()) {
        w.flush().map_err(output_err(p))?;
    }
    Ok(RunSummary { frames, events, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_image_sequence_has_no_events() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            let img = image::GrayImage::from_fn(64, 48, |x, y| image::Luma([((x * 37 + y * 91) % 251) as u8]));
            img.save(dir.path().join(format!("{i:03}.png"))).unwrap();
        }
        let cfg = PipelineConfig::for_input(InputKind::Images, dir.path());
        let summary = run(&cfg).unwrap();
        assert_eq!(summary.frames, 4);
        assert!(summary.events.is_empty());
        assert_eq!(summary.timings.len(), 4);
    }

    #[test]
    fn replay_gap_fails_unless_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Vec<u8>> = (0..3).map(|_| (0..32 * 32).map(|i| (i % 200) as u8).collect()).collect();
        let stream = dir.path().join("in.gfrm");
        write_packed_frames(File::create(&stream).unwrap(), 32, 32, &frames).unwrap();
        let dets = dir.path().join("dets.txt");
        std::fs::write(&dets, "0 0 0.9 1 1 10 10\n2 0 0.9 1 1 10 10\n").unwrap();
        let mut cfg = PipelineConfig::for_input(InputKind::Packed, &stream);
        cfg.flow.num_levels = 2;
        cfg.detector = BackendConfig { kind: BackendKind::Replay, path: Some(dets), value: None };
        let err = run(&cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Backend(PerceptionError::ReplayGap(1))), "{err}");
        assert_eq!(err.exit_code(), 3);
        cfg.lenient = true;
        assert_eq!(run(&cfg).unwrap().frames, 3);
    }
}
