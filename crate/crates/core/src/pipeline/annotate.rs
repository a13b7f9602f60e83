use image::{Rgb, RgbImage};

use super::FrameResult;
use crate::flow::TrackSet;
use crate::guidance::ZoneConfig;
use crate::imgproc::RgbFrame;

const ZONE_LINE: Rgb<u8> = Rgb([60, 140, 255]);
const TRACK: Rgb<u8> = Rgb([40, 220, 60]);
const BOX: Rgb<u8> = Rgb([255, 210, 0]);
const WARNED_BOX: Rgb<u8> = Rgb([255, 40, 40]);

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as i64;
    for s in 0..=steps {
        let k = s as f64 / steps as f64;
        put(img, (x0 + (x1 - x0) * k).round() as i64, (y0 + (y1 - y0) * k).round() as i64, c);
    }
}

/// Copy of `frame` with zone boundaries, track polylines and object boxes;
/// boxes of objects that triggered a warning are drawn red.
pub fn annotate_frame(frame: &RgbFrame, result: &FrameResult, tracks: &TrackSet, zones: &ZoneConfig) -> RgbImage {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let mut img = RgbImage::from_raw(w, h, frame.pixels().to_vec()).expect("frame buffer matches its size");
    let bottom = h as f64 - 1.0;
    for x in [zones.left_boundary(), zones.center_boundary()] {
        line(&mut img, (x, 0.0), (x, bottom), ZONE_LINE);
    }
    for t in tracks.active() {
        let pts = t.recent(8);
        for pair in pts.windows(2) {
            line(&mut img, (pair[0].x, pair[0].y), (pair[1].x, pair[1].y), TRACK);
        }
        let p = t.last_point();
        put(&mut img, p.x.round() as i64, p.y.round() as i64, TRACK);
    }
    for obj in &result.objects {
        let b = obj.detection.bbox;
        let warned = result.events.iter().any(|e| e.zone == obj.zone && e.depth_stat == obj.depth_stat);
        let c = if warned { WARNED_BOX } else { BOX };
        let (x0, y0, x1, y1) = (b.x_min, b.y_min, b.x_max - 1.0, b.y_max - 1.0);
        line(&mut img, (x0, y0), (x1, y0), c);
        line(&mut img, (x1, y0), (x1, y1), c);
        line(&mut img, (x1, y1), (x0, y1), c);
        line(&mut img, (x0, y1), (x0, y0), c);
    }
    img
}
