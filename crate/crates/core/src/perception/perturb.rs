use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BBox, BackendSpec, DepthBackend, DepthMap, Detection, DetectionBackend, PerceptionError};
use crate::imgproc::RgbFrame;

/// Detector and depth imperfections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability of dropping each detection.
    pub dropout: f64,
    /// Each box corner coordinate moves uniformly within `±jitter` pixels.
    pub jitter: f64,
    /// Standard deviation of additive Gaussian depth noise, clamped to `[0, 255]`.
    pub depth_sigma: f64,
}

impl NoiseSpec {
    pub fn is_identity(&self) -> bool {
        self.dropout == 0.0 && self.jitter == 0.0 && self.depth_sigma == 0.0
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(PerceptionError::InvalidBackend(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(PerceptionError::InvalidBackend(format!("jitter {} must be non-negative", self.jitter)));
        }
        if !(self.depth_sigma >= 0.0 && self.depth_sigma.is_finite()) {
            return Err(PerceptionError::InvalidBackend(format!("depth sigma {} must be non-negative", self.depth_sigma)));
        }
        Ok(())
    }
}

/// Wraps `backend` so its outputs carry `noise`, seeded by `seed`.
pub fn perturb_backend(backend: BackendSpec, noise: NoiseSpec, seed: u64) -> BackendSpec {
    BackendSpec::Perturbed { inner: Box::new(backend), noise, seed }
}

/// Independent stream per (seed, frame, purpose), so results do not depend on
/// call order.
fn frame_rng(seed: u64, frame_index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(frame_index);
    rng
}

const DETECTION_STREAM: u64 = 1;
const DEPTH_STREAM: u64 = 2;

pub(super) struct PerturbedDetector {
    inner: Box<dyn DetectionBackend>,
    noise: NoiseSpec,
    seed: u64,
}

impl PerturbedDetector {
    pub fn new(inner: Box<dyn DetectionBackend>, noise: NoiseSpec, seed: u64) -> Self {
        Self { inner, noise, seed }
    }
}

impl DetectionBackend for PerturbedDetector {
    fn detect(&self, frame_index: u64, frame: &RgbFrame) -> Result<Vec<Detection>, PerceptionError> {
        let dets = self.inner.detect(frame_index, frame)?;
        if self.noise.dropout == 0.0 && self.noise.jitter == 0.0 {
            return Ok(dets);
        }
        let mut rng = frame_rng(self.seed, frame_index, DETECTION_STREAM);
        let j = self.noise.jitter;
        let mut out = Vec::with_capacity(dets.len());
        for d in dets {
            // Variates are drawn for dropped detections too, keeping the others' noise fixed.
            let keep = rng.random::<f64>() >= self.noise.dropout;
            let mut offsets = [0f64; 4];
            if j > 0.0 {
                for o in &mut offsets {
                    *o = rng.random_range(-j..=j);
                }
            }
            if !keep {
                continue;
            }
            let b = d.bbox;
            let moved = BBox::new(b.x_min + offsets[0], b.y_min + offsets[1], b.x_max + offsets[2], b.y_max + offsets[3]);
            if let Some(bbox) = moved.clamped(frame.width(), frame.height()) {
                out.push(Detection { bbox, ..d });
            }
        }
        Ok(out)
    }
}

pub(super) struct PerturbedDepth {
    inner: Box<dyn DepthBackend>,
    noise: NoiseSpec,
    seed: u64,
}

impl PerturbedDepth {
    pub fn new(inner: Box<dyn DepthBackend>, noise: NoiseSpec, seed: u64) -> Self {
        Self { inner, noise, seed }
    }
}

impl DepthBackend for PerturbedDepth {
    fn estimate_depth(&self, frame_index: u64, frame: &RgbFrame) -> Result<DepthMap, PerceptionError> {
        let mut map = self.inner.estimate_depth(frame_index, frame)?;
        if self.noise.depth_sigma == 0.0 {
            return Ok(map);
        }
        let normal = Normal::new(0.0f32, self.noise.depth_sigma as f32)
            .map_err(|e| PerceptionError::InvalidBackend(e.to_string()))?;
        let mut rng = frame_rng(self.seed, frame_index, DEPTH_STREAM);
        for v in map.values_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 255.0);
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{open_depth, open_detector};

    /// Always reports the same fixed set of boxes.
    struct Fixed(Vec<Detection>);
    impl DetectionBackend for Fixed {
        fn detect(&self, _: u64, _: &RgbFrame) -> Result<Vec<Detection>, PerceptionError> {
            Ok(self.0.clone())
        }
    }

    fn boxes(n: usize) -> Vec<Detection> {
        (0..n)
            .map(|i| {
                let x = (i % 20) as f64 * 30.0;
                let y = (i / 20 % 10) as f64 * 30.0;
                Detection::new(BBox::new(x + 5.0, y + 5.0, x + 25.0, y + 25.0), (i % 80) as u8, 0.9).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_noise_is_transparent() {
        let frame = RgbFrame::filled(640, 360, [9, 9, 9], 0).unwrap();
        let det = PerturbedDetector::new(Box::new(Fixed(boxes(40))), NoiseSpec::default(), 3);
        assert_eq!(det.detect(4, &frame).unwrap(), boxes(40));
        let depth = open_depth(&perturb_backend(BackendSpec::Constant(77.0), NoiseSpec::default(), 3)).unwrap();
        assert!(depth.estimate_depth(0, &frame).unwrap().values().iter().all(|&v| v == 77.0));
    }

    #[test]
    fn full_dropout_removes_everything() {
        let frame = RgbFrame::filled(640, 360, [9, 9, 9], 0).unwrap();
        let noise = NoiseSpec { dropout: 1.0, ..NoiseSpec::default() };
        let det = PerturbedDetector::new(Box::new(Fixed(boxes(40))), noise, 3);
        for f in 0..20 {
            assert!(det.detect(f, &frame).unwrap().is_empty());
        }
    }

    #[test]
    fn dropout_count_is_binomial() {
        // Binomial(1000, 0.1): 0.5% and 99.5% quantiles are 76 and 125.
        let frame = RgbFrame::filled(640, 360, [9, 9, 9], 0).unwrap();
        let noise = NoiseSpec { dropout: 0.1, ..NoiseSpec::default() };
        let det = PerturbedDetector::new(Box::new(Fixed(boxes(100))), noise, 2024);
        let kept: usize = (0..10).map(|f| det.detect(f, &frame).unwrap().len()).sum();
        let dropped = 1000 - kept;
        assert!((76..=125).contains(&dropped), "dropped {dropped}");
    }

    #[test]
    fn jitter_bounded_and_deterministic() {
        let frame = RgbFrame::filled(640, 360, [9, 9, 9], 0).unwrap();
        let noise = NoiseSpec { jitter: 2.0, ..NoiseSpec::default() };
        let a = PerturbedDetector::new(Box::new(Fixed(boxes(30))), noise, 11);
        let b = PerturbedDetector::new(Box::new(Fixed(boxes(30))), noise, 11);
        let (da, db) = (a.detect(5, &frame).unwrap(), b.detect(5, &frame).unwrap());
        assert_eq!(da, db);
        for (orig, moved) in boxes(30).iter().zip(&da) {
            assert!((orig.bbox.x_min - moved.bbox.x_min).abs() <= 2.0);
            assert!((orig.bbox.y_max - moved.bbox.y_max).abs() <= 2.0);
        }
        assert_ne!(da, boxes(30));
    }

    #[test]
    fn depth_noise_is_clamped_and_seeded() {
        let frame = RgbFrame::filled(64, 48, [9, 9, 9], 0).unwrap();
        let noise = NoiseSpec { depth_sigma: 5.0, ..NoiseSpec::default() };
        let spec = perturb_backend(BackendSpec::Constant(253.0), noise, 5);
        let d1 = open_depth(&spec).unwrap().estimate_depth(3, &frame).unwrap();
        let d2 = open_depth(&spec).unwrap().estimate_depth(3, &frame).unwrap();
        assert_eq!(d1, d2);
        assert!(d1.values().iter().all(|v| (0.0..=255.0).contains(v)));
        let mean: f32 = d1.values().iter().sum::<f32>() / d1.values().len() as f32;
        assert!((mean - 251.5).abs() < 2.0, "{mean}");
        let _ = open_detector(&perturb_backend(BackendSpec::Constant(1.0), noise, 1)).unwrap();
    }
}
