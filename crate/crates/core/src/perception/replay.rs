//! Recorded detector and depth outputs.
//!
//! Detection replay: one ASCII line per object per frame,
//! `frame_index class_id score x_min y_min x_max y_max`, space separated.
//! A line holding only `frame_index` records a frame without detections.
//! Blank lines and lines starting with `#` are ignored.
//!
//! Depth replay: either a directory of 8-bit grayscale images whose file stem
//! is the frame index, or a packed file: `DPTH`, then width, height and frame
//! count as little-endian `u32`, then `width * height` bytes per frame.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{BBox, DepthMap, Detection, PerceptionError};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionReplay {
    frames: BTreeMap<u64, Vec<Detection>>,
}

impl DetectionReplay {
    pub fn load(path: &Path) -> Result<Self, PerceptionError> {
        let file = File::open(path).map_err(|e| PerceptionError::io(path, e))?;
        parse_detection_replay(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_frames(frames: BTreeMap<u64, Vec<Detection>>) -> Self {
        Self { frames }
    }

    pub fn frame(&self, frame_index: u64) -> Option<&[Detection]> {
        self.frames.get(&frame_index).map(Vec::as_slice)
    }

    pub fn frames(&self) -> &BTreeMap<u64, Vec<Detection>> {
        &self.frames
    }
}

pub fn parse_detection_replay(reader: impl BufRead, origin: &str) -> Result<DetectionReplay, PerceptionError> {
    let mut frames: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let parse_err = |message: String| PerceptionError::Parse { path: origin.to_string(), line: line_no, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() != 7 && fields.len() != 1 {
            return Err(parse_err(format!("expected 7 fields, found {}", fields.len())));
        }
        let frame: u64 = fields[0].parse().map_err(|_| parse_err(format!("bad frame index {:?}", fields[0])))?;
        if fields.len() == 1 {
            frames.entry(frame).or_default();
            continue;
        }
        let class_id: u8 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad class id {:?}", fields[1])))?;
        let score: f32 = fields[2].parse().map_err(|_| parse_err(format!("bad score {:?}", fields[2])))?;
        let mut coords = [0f64; 4];
        for (slot, text) in coords.iter_mut().zip(&fields[3..]) {
            *slot = text.parse().map_err(|_| parse_err(format!("bad coordinate {text:?}")))?;
        }
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]);
        let det = Detection::new(bbox, class_id, score).map_err(|e| parse_err(e.to_string()))?;
        frames.entry(frame).or_default().push(det);
    }
    Ok(DetectionReplay { frames })
}

/// Writes records in the replay line format. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_detection_replay<'a>(
    mut out: impl Write,
    records: impl IntoIterator<Item = (u64, &'a Detection)>,
) -> std::io::Result<()> {
    for (frame, d) in records {
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            frame, d.class_id, d.score, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max
        )?;
    }
    Ok(())
}

pub fn write_packed_depth(mut out: impl Write, maps: &[DepthMap]) -> Result<(), PerceptionError> {
    let (w, h) = maps.first().map(|m| (m.width(), m.height())).unwrap_or((0, 0));
    if let Some(bad) = maps.iter().find(|m| m.width() != w || m.height() != h) {
        return Err(PerceptionError::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            actual_w: bad.width(),
            actual_h: bad.height(),
        });
    }
    let io = |e| PerceptionError::io("<packed depth>", e);
    out.write_all(DEPTH_MAGIC).map_err(io)?;
    for v in [w as u32, h as u32, maps.len() as u32] {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for m in maps {
        out.write_all(&m.to_bytes()).map_err(io)?;
    }
    Ok(())
}

fn read_header(mut input: impl Read, origin: &str) -> Result<(usize, usize, u64), PerceptionError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header).map_err(|e| PerceptionError::io(origin, e))?;
    if &header[..4] != DEPTH_MAGIC {
        return Err(PerceptionError::Parse { path: origin.into(), line: 0, message: "missing DPTH magic".into() });
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    Ok((word(4) as usize, word(8) as usize, word(12) as u64))
}

pub fn read_packed_depth(mut input: impl Read) -> Result<Vec<DepthMap>, PerceptionError> {
    let (w, h, count) = read_header(&mut input, "<packed depth>")?;
    let mut buf = vec![0u8; w * h];
    let mut maps = Vec::with_capacity(count as usize);
    for _ in 0..count {
        input.read_exact(&mut buf).map_err(|e| PerceptionError::io("<packed depth>", e))?;
        maps.push(DepthMap::from_bytes(w, h, &buf)?);
    }
    Ok(maps)
}

#[derive(Debug, Clone)]
pub enum DepthReplay {
    Packed { path: PathBuf, width: usize, height: usize, count: u64 },
    Directory { files: BTreeMap<u64, PathBuf> },
}

impl DepthReplay {
    pub fn open(path: &Path) -> Result<Self, PerceptionError> {
        if path.is_dir() {
            let mut files = BTreeMap::new();
            let entries = std::fs::read_dir(path).map_err(|e| PerceptionError::io(path, e))?;
            for entry in entries {
                let p = entry.map_err(|e| PerceptionError::io(path, e))?.path();
                if let Some(idx) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
                    files.insert(idx, p);
                }
            }
            return Ok(Self::Directory { files });
        }
        let file = File::open(path).map_err(|e| PerceptionError::io(path, e))?;
        let origin = path.display().to_string();
        let (width, height, count) = read_header(file, &origin)?;
        let expected = 16 + (width * height) as u64 * count;
        let actual = std::fs::metadata(path).map_err(|e| PerceptionError::io(path, e))?.len();
        if actual < expected {
            return Err(PerceptionError::Parse {
                path: origin,
                line: 0,
                message: format!("file holds {actual} bytes, header promises {expected}"),
            });
        }
        Ok(Self::Packed { path: path.to_path_buf(), width, height, count })
    }

    pub fn load(&self, frame_index: u64) -> Result<DepthMap, PerceptionError> {
        match self {
            Self::Packed { path, width, height, count } => {
                if frame_index >= *count {
                    return Err(PerceptionError::ReplayGap(frame_index));
                }
                let mut file = File::open(path).map_err(|e| PerceptionError::io(path, e))?;
                let stride = (width * height) as u64;
                file.seek(SeekFrom::Start(16 + stride * frame_index))
                    .map_err(|e| PerceptionError::io(path, e))?;
                let mut buf = vec![0u8; width * height];
                file.read_exact(&mut buf).map_err(|e| PerceptionError::io(path, e))?;
                DepthMap::from_bytes(*width, *height, &buf)
            }
            Self::Directory { files } => {
                let path = files.get(&frame_index).ok_or(PerceptionError::ReplayGap(frame_index))?;
                let img = image::open(path)
                    .map_err(|e| PerceptionError::Parse { path: path.display().to_string(), line: 0, message: e.to_string() })?
                    .into_luma8();
                DepthMap::from_bytes(img.width() as usize, img.height() as usize, img.as_raw())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_one_person() {
        let text = "# frame class score box\n7 0 0.93 10 20 110 220\n";
        let replay = parse_detection_replay(text.as_bytes(), "mem").unwrap();
        let dets = replay.frame(7).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_label(), "person");
        assert_eq!(dets[0].bbox, BBox::new(10.0, 20.0, 110.0, 220.0));
        assert!(replay.frame(6).is_none());
    }

    #[test]
    fn bare_frame_index_is_an_empty_frame() {
        let replay = parse_detection_replay("0 0 0.9 1 1 5 5\n1\n".as_bytes(), "mem").unwrap();
        assert_eq!(replay.frame(1), Some(&[][..]));
        assert!(replay.frame(2).is_none());
    }

    #[test]
    fn out_of_range_class_is_a_parse_error() {
        let err = parse_detection_replay("1 0 0.5 0 0 5 5\n2 85 0.5 0 0 5 5\n".as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, PerceptionError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_detection_replay("\n\n3 1 0.5 0 0 5\n".as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, PerceptionError::Parse { line: 3, .. }));
    }

    #[test]
    fn packed_depth_round_trip() {
        let maps = vec![
            DepthMap::from_bytes(4, 2, &[0, 1, 2, 3, 250, 251, 254, 255]).unwrap(),
            DepthMap::filled(4, 2, 9.0),
        ];
        let mut buf = Vec::new();
        write_packed_depth(&mut buf, &maps).unwrap();
        assert_eq!(&buf[..4], b"DPTH");
        assert_eq!(&buf[4..16], &[4, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(buf.len(), 16 + 16);
        assert_eq!(read_packed_depth(buf.as_slice()).unwrap(), maps);
    }

    #[test]
    fn packed_file_gap_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.bin");
        let maps = vec![DepthMap::filled(16, 16, 3.0), DepthMap::filled(16, 16, 200.0)];
        write_packed_depth(File::create(&path).unwrap(), &maps).unwrap();
        let replay = DepthReplay::open(&path).unwrap();
        assert_eq!(replay.load(1).unwrap(), maps[1]);
        assert!(matches!(replay.load(2), Err(PerceptionError::ReplayGap(2))));
    }

    proptest! {
        #[test]
        fn detection_replay_round_trip_is_bit_exact(
            recs in proptest::collection::vec(
                (0u64..500, 0u8..80, 0.0f32..=1.0, 0.0f64..600.0, 0.0f64..400.0, 0.5f64..300.0, 0.5f64..300.0),
                0..30,
            )
        ) {
            let dets: Vec<(u64, Detection)> = recs
                .iter()
                .map(|&(f, c, s, x, y, w, h)| (f, Detection::new(BBox::new(x, y, x + w, y + h), c, s).unwrap()))
                .collect();
            let mut buf = Vec::new();
            write_detection_replay(&mut buf, dets.iter().map(|(f, d)| (*f, d))).unwrap();
            let replay = parse_detection_replay(buf.as_slice(), "mem").unwrap();
            let mut expected: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
            for (f, d) in &dets {
                expected.entry(*f).or_default().push(*d);
            }
            prop_assert_eq!(replay.frames(), &expected);
        }
    }
}
