use super::{DepthMap, PerceptionError};

/// Scale-invariant log loss between a predicted and a reference depth map:
/// `mean(d²) − λ·mean(d)²` with `d = ln(pred) − ln(truth)` per pixel.
///
/// At `λ = 1` a global multiplicative rescaling of `pred` costs nothing; at
/// `λ = 0` this is the plain mean squared log error.
pub fn scale_invariant_loss(pred: &DepthMap, truth: &DepthMap, lambda: f64) -> Result<f64, PerceptionError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(PerceptionError::DimensionMismatch {
            expected_w: truth.width(),
            expected_h: truth.height(),
            actual_w: pred.width(),
            actual_h: pred.height(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PerceptionError::InvalidBackend(format!("lambda {lambda} outside [0, 1]")));
    }
    for map in [pred, truth] {
        if let Some((index, &value)) = map.values().iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(PerceptionError::NonPositiveDepth { index, value });
        }
    }
    let n = pred.values().len() as f64;
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        let d = (p as f64).ln() - (t as f64).ln();
        sum += d;
        sum_sq += d * d;
    }
    Ok(sum_sq / n - lambda * sum * sum / (n * n))
}
