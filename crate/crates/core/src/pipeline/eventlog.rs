//! Line-delimited warning log:
//! `frame_index<TAB>zone<TAB>class_label<TAB>depth_stat<TAB>text`.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::guidance::{WarningEvent, Zone};
use crate::perception::coco;

#[derive(Debug, Error, PartialEq)]
#[error("event log line {line}: {message}")]
pub struct EventLogError {
    pub line: usize,
    pub message: String,
}

/// One log line without the trailing newline. `depth_stat` is printed in the
/// shortest form that parses back to the same `f32`.
pub fn format_event(e: &WarningEvent) -> String {
    format!("{}\t{}\t{}\t{}\t{}", e.frame_index, e.zone, e.class_label, e.depth_stat, e.text)
}

pub fn write_event(mut out: impl Write, e: &WarningEvent) -> std::io::Result<()> {
    writeln!(out, "{}", format_event(e))
}

pub fn parse_event(line: &str) -> Result<WarningEvent, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [frame, zone, label, depth, text] = fields[..] else {
        return Err(format!("expected 5 tab-separated fields, found {}", fields.len()));
    };
    let frame_index: u64 = frame.parse().map_err(|_| format!("bad frame index {frame:?}"))?;
    let zone: Zone = zone.parse()?;
    let class_id = coco::class_id(label).ok_or_else(|| format!("unknown class label {label:?}"))?;
    let depth_stat: f32 = depth.parse().map_err(|_| format!("bad depth {depth:?}"))?;
    if text != zone.warning_text() {
        return Err(format!("text {text:?} does not match zone {zone}"));
    }
    Ok(WarningEvent::new(frame_index, zone, coco::COCO_CLASSES[class_id as usize], depth_stat))
}

pub fn parse_event_log(reader: impl BufRead) -> Result<Vec<WarningEvent>, EventLogError> {
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let err = |message| EventLogError { line: n + 1, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        events.push(parse_event(&line).map_err(err)?);
    }
    Ok(events)
}
