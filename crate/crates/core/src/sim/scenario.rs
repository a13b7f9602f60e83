use std::sync::Arc;

use super::SceneScript;
use crate::guidance::{zone_of, WarningEvent, Zone, ZoneConfig};
use crate::pipeline::{ConfigError, FrameSource, InputKind, PipelineConfig, PipelineError, Session};

/// Frames of slack on either side of an approach interval when matching warnings.
pub const MATCH_SLACK: u64 = 5;

/// A maximal run of frames in which one sprite gets nearer while below its
/// zone's depth gate, without changing zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproachEvent {
    pub sprite: usize,
    pub zone: Zone,
    pub start: u64,
    pub end: u64,
}

impl ApproachEvent {
    pub fn accepts(&self, w: &WarningEvent) -> bool {
        w.zone == self.zone && w.frame_index + MATCH_SLACK >= self.start && w.frame_index <= self.end + MATCH_SLACK
    }
}

pub fn approach_events(script: &SceneScript, zones: &ZoneConfig) -> Vec<ApproachEvent> {
    let zones = zones.with_width(script.width);
    let mut events = Vec::new();
    for (i, sprite) in script.sprites.iter().enumerate() {
        let mut open: Option<ApproachEvent> = None;
        for t in sprite.first_frame()..=sprite.last_frame() {
            let qualifying = match (sprite.at(t), t.checked_sub(1).and_then(|p| sprite.at(p))) {
                (Some((bbox, depth)), Some((_, before))) => zone_of(bbox.center_x(), &zones)
                    .ok()
                    .filter(|&z| depth < before && (depth as f64) < zones.threshold(z)),
                _ => None,
            };
            match (qualifying, open.as_mut()) {
                (Some(z), Some(e)) if e.zone == z => e.end = t,
                (Some(z), _) => {
                    events.extend(open.take());
                    open = Some(ApproachEvent { sprite: i, zone: z, start: t, end: t });
                }
                (None, _) => events.extend(open.take()),
            }
        }
        events.extend(open);
    }
    events.sort_by_key(|e| (e.start, e.sprite));
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// First warning matched to the event at this index.
    Correct(usize),
    /// A further warning inside an already matched event's interval.
    Repeat(usize),
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarningOutcome {
    pub warning: WarningEvent,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub expected_approaches: usize,
    pub warnings_emitted: usize,
    pub correct: usize,
    pub false_positives: usize,
    pub repeats: usize,
    pub events: Vec<ApproachEvent>,
    pub log: Vec<WarningOutcome>,
}

impl ScenarioReport {
    pub fn score(name: &str, events: Vec<ApproachEvent>, warnings: &[WarningEvent]) -> Self {
        let mut matched = vec![false; events.len()];
        let mut log = Vec::with_capacity(warnings.len());
        for w in warnings {
            let fresh = (0..events.len()).find(|&k| !matched[k] && events[k].accepts(w));
            let outcome = match fresh {
                Some(k) => {
                    matched[k] = true;
                    Outcome::Correct(k)
                }
                None => match (0..events.len()).find(|&k| events[k].accepts(w)) {
                    Some(k) => Outcome::Repeat(k),
                    None => Outcome::FalsePositive,
                },
            };
            log.push(WarningOutcome { warning: w.clone(), outcome });
        }
        let count = |f: fn(&Outcome) -> bool| log.iter().filter(|o| f(&o.outcome)).count();
        Self {
            name: name.into(),
            expected_approaches: events.len(),
            warnings_emitted: warnings.len(),
            correct: count(|o| matches!(o, Outcome::Correct(_))),
            false_positives: count(|o| matches!(o, Outcome::FalsePositive)),
            repeats: count(|o| matches!(o, Outcome::Repeat(_))),
            events,
            log,
        }
    }

    pub fn missed(&self) -> Vec<ApproachEvent> {
        let hit: Vec<usize> =
            self.log.iter().filter_map(|o| if let Outcome::Correct(k) = o.outcome { Some(k) } else { None }).collect();
        (0..self.events.len()).filter(|k| !hit.contains(k)).map(|k| self.events[k]).collect()
    }

    pub fn recall(&self) -> f64 {
        if self.expected_approaches == 0 {
            1.0
        } else {
            self.correct as f64 / self.expected_approaches as f64
        }
    }
}

/// Runs the pipeline over every frame of `script` rendered with `seed` and
/// scores its warnings. The config's input section is ignored; `seed` also
/// seeds backend noise.
pub fn run_scenario(script: &SceneScript, cfg: &PipelineConfig, seed: u64) -> Result<ScenarioReport, PipelineError> {
    script
        .validate()
        .map_err(|e| ConfigError::Validation { param: "scenario".into(), message: e.to_string() })?;
    let mut cfg = cfg.clone();
    cfg.input.kind = InputKind::Scenario;
    cfg.validate_parameters()?;
    let script = Arc::new(script.clone());
    let source = FrameSource::scenario(script.clone(), seed);
    let mut session = Session::with_source(&cfg, source, Some(&script), seed)?;
    let mut warnings = Vec::new();
    session.drive(None, |_, result, _| {
        warnings.extend(result.events.iter().cloned());
        Ok(())
    })?;
    Ok(ScenarioReport::score(&script.name, approach_events(&script, &cfg.zones), &warnings))
}

const SUITE: [(&str, &str); 4] = [
    ("street_a", include_str!("../../scenarios/street_a.toml")),
    ("street_b", include_str!("../../scenarios/street_b.toml")),
    ("street_c", include_str!("../../scenarios/street_c.toml")),
    ("receding", include_str!("../../scenarios/receding.toml")),
];

/// The bundled evaluation scenes: three street-like scripts with 9, 10 and 8
/// approach events, and one where everything recedes.
pub fn bundled_suite() -> Vec<SceneScript> {
    SUITE
        .iter()
        .map(|(name, text)| SceneScript::from_toml_str(text, name).expect("bundled scenarios are valid"))
        .collect()
}

/// 300 frames at 1280x720 for timing runs.
pub fn bundled_bench() -> SceneScript {
    SceneScript::from_toml_str(include_str!("../../scenarios/bench.toml"), "bench").expect("bundled scenario is valid")
}
