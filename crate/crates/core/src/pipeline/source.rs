//! Frame ingestion.
//!
//! Packed stream layout: magic `GFRM`, then width, height and frame count as
//! little-endian `u32`, then `width * height` grayscale bytes per frame.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::PipelineError;
use crate::imgproc::RgbFrame;
use crate::sim::{Renderer, SceneScript};

pub const FRAME_MAGIC: &[u8; 4] = b"GFRM";
pub const PACKED_HEADER_LEN: u64 = 16;

fn ingest(message: impl Into<String>) -> PipelineError {
    PipelineError::Ingest(message.into())
}

pub enum FrameSource {
    Images { files: Vec<PathBuf>, width: usize, height: usize },
    Packed { reader: BufReader<File>, path: PathBuf, width: usize, height: usize, count: u64, next: u64 },
    Scenario(Renderer),
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Images sort by the number in their file stem when every stem has one,
/// otherwise by name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| ingest(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| ingest(format!("{}: {e}", dir.display())))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    let number = |p: &PathBuf| -> Option<u64> {
        let stem = p.file_stem()?.to_str()?;
        let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect::<Vec<_>>().into_iter().rev().collect();
        digits.parse().ok()
    };
    if files.iter().all(|p| number(p).is_some()) {
        files.sort_by_key(|p| (number(p), p.clone()));
    } else {
        files.sort();
    }
    Ok(files)
}

fn read_image(path: &Path, index: u64) -> Result<RgbFrame, PipelineError> {
    let img = image::open(path).map_err(|e| ingest(format!("{}: {e}", path.display())))?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbFrame::new(w, h, img.into_raw(), index).map_err(|e| ingest(format!("{}: {e}", path.display())))
}

impl FrameSource {
    pub fn open_images(dir: &Path) -> Result<Self, PipelineError> {
        let files = list_images(dir)?;
        let first = files.first().ok_or_else(|| ingest(format!("{}: no images found", dir.display())))?;
        let probe = read_image(first, 0)?;
        Ok(Self::Images { width: probe.width(), height: probe.height(), files })
    }

    pub fn open_packed(path: &Path) -> Result<Self, PipelineError> {
        let file = File::open(path).map_err(|e| ingest(format!("{}: {e}", path.display())))?;
        let len = file.metadata().map_err(|e| ingest(format!("{}: {e}", path.display())))?.len();
        let mut reader = BufReader::new(file);
        let mut header = [0u8; 16];
        reader.read_exact(&mut header).map_err(|_| ingest(format!("{}: truncated header", path.display())))?;
        if &header[..4] != FRAME_MAGIC {
            return Err(ingest(format!("{}: missing GFRM magic", path.display())));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        let (width, height, count) = (word(4) as usize, word(8) as usize, word(12) as u64);
        let expected = PACKED_HEADER_LEN + (width * height) as u64 * count;
        if len < expected {
            return Err(ingest(format!("{}: {len} bytes, header promises {expected}", path.display())));
        }
        if count == 0 {
            return Err(ingest(format!("{}: stream holds no frames", path.display())));
        }
        Ok(Self::Packed { reader, path: path.into(), width, height, count, next: 0 })
    }

    pub fn scenario(script: Arc<SceneScript>, seed: u64) -> Self {
        Self::Scenario(Renderer::new(script, seed))
    }

    pub fn len(&self) -> u64 {
        match self {
            Self::Images { files, .. } => files.len() as u64,
            Self::Packed { count, .. } => *count,
            Self::Scenario(r) => r.script().duration,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Images { width, height, .. } | Self::Packed { width, height, .. } => (*width, *height),
            Self::Scenario(r) => (r.script().width, r.script().height),
        }
    }

    /// Frame `index`; all frames must share the first frame's size.
    pub fn frame(&mut self, index: u64) -> Result<RgbFrame, PipelineError> {
        if index >= self.len() {
            return Err(ingest(format!("frame {index} beyond the end of the input")));
        }
        let (w, h) = self.dims();
        let frame = match self {
            Self::Images { files, .. } => read_image(&files[index as usize], index)?,
            Self::Packed { reader, path, width, height, next, .. } => {
                let stride = (*width * *height) as u64;
                if *next != index {
                    reader
                        .seek(SeekFrom::Start(PACKED_HEADER_LEN + stride * index))
                        .map_err(|e| ingest(format!("{}: {e}", path.display())))?;
                }
                let mut buf = vec![0u8; stride as usize];
                reader.read_exact(&mut buf).map_err(|e| ingest(format!("{}: {e}", path.display())))?;
                *next = index + 1;
                RgbFrame::from_gray_bytes(*width, *height, &buf, index).map_err(|e| ingest(format!("{}: {e}", path.display())))?
            }
            Self::Scenario(r) => r.frame(index).map_err(|e| ingest(e.to_string()))?,
        };
        if (frame.width(), frame.height()) != (w, h) {
            return Err(ingest(format!(
                "frame {index} is {}x{}, expected {w}x{h}",
                frame.width(),
                frame.height()
            )));
        }
        Ok(frame)
    }
}

/// Writes grayscale frames as a packed stream.
pub fn write_packed_frames(mut out: impl Write, width: usize, height: usize, frames: &[Vec<u8>]) -> std::io::Result<()> {
    out.write_all(FRAME_MAGIC)?;
    for v in [width as u32, height as u32, frames.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        if f.len() != width * height {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame size does not match header"));
        }
        out.write_all(f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_header_is_bit_exact() {
        let mut buf = Vec::new();
        write_packed_frames(&mut buf, 16, 16, &[vec![7; 256], vec![9; 256]]).unwrap();
        assert_eq!(&buf[..16], b"GFRM\x10\0\0\0\x10\0\0\0\x02\0\0\0");
        assert_eq!(buf.len(), 16 + 512);
    }

    #[test]
    fn packed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.gfrm");
        let frames: Vec<Vec<u8>> = (0..3).map(|k| (0..16 * 20).map(|i| ((i * 7 + k * 13) % 256) as u8).collect()).collect();
        write_packed_frames(File::create(&path).unwrap(), 20, 16, &frames).unwrap();
        let mut src = FrameSource::open_packed(&path).unwrap();
        assert_eq!((src.len(), src.dims()), (3, (20, 16)));
        let f2 = src.frame(2).unwrap();
        assert_eq!(f2.pixel(3, 1), [frames[2][23]; 3]);
        let f0 = src.frame(0).unwrap();
        assert_eq!(f0.pixel(0, 0), [frames[0][0]; 3]);
        assert!(src.frame(3).is_err());
    }

    #[test]
    fn truncated_packed_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.gfrm");
        let mut buf = Vec::new();
        write_packed_frames(&mut buf, 16, 16, &[vec![1; 256]]).unwrap();
        buf.truncate(100);
        std::fs::write(&path, buf).unwrap();
        assert!(matches!(FrameSource::open_packed(&path), Err(PipelineError::Ingest(_))));
    }

    #[test]
    fn images_sort_numerically() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("f10.png", 10u8), ("f2.png", 2), ("f1.png", 1)] {
            image::GrayImage::from_pixel(16, 16, image::Luma([v])).save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let mut src = FrameSource::open_images(dir.path()).unwrap();
        assert_eq!(src.len(), 3);
        let seq: Vec<u8> = (0..3).map(|i| src.frame(i).unwrap().pixel(0, 0)[0]).collect();
        assert_eq!(seq, vec![1, 2, 10]);
    }

    #[test]
    fn empty_directory_is_an_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(FrameSource::open_images(dir.path()), Err(PipelineError::Ingest(_))));
    }
}
