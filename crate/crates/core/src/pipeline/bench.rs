use std::fmt::Write as _;

use super::{PipelineConfig, PipelineError, Session, StageTimings};

#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub name: &'static str,
    pub mean_us: f64,
    pub p95_us: u64,
    pub p99_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub frames: u64,
    /// The six pipeline stages, then `total` (whole-frame wall time).
    pub stages: Vec<StageStats>,
    /// Frames per second of pipeline processing. Frame decoding and scene
    /// rendering are not counted.
    pub fps: f64,
}

fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn stats(name: &'static str, mut samples: Vec<u64>) -> StageStats {
    let mean_us = if samples.is_empty() { 0.0 } else { samples.iter().sum::<u64>() as f64 / samples.len() as f64 };
    samples.sort_unstable();
    StageStats { name, mean_us, p95_us: nearest_rank(&samples, 0.95), p99_us: nearest_rank(&samples, 0.99) }
}

impl BenchReport {
    pub fn from_samples(timings: &[StageTimings], elapsed_us: &[u64]) -> Self {
        let mut stages: Vec<StageStats> = StageTimings::NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| stats(name, timings.iter().map(|t| t.as_array()[k]).collect()))
            .collect();
        stages.push(stats("total", elapsed_us.to_vec()));
        let total_us: u64 = elapsed_us.iter().sum();
        let fps = if total_us == 0 { 0.0 } else { elapsed_us.len() as f64 * 1e6 / total_us as f64 };
        Self { frames: timings.len() as u64, stages, fps }
    }

    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Tab-separated table: a header, one row per stage, then `fps`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("stage\tmean_us\tp95_us\tp99_us\n");
        for s in &self.stages {
            let _ = writeln!(out, "{}\t{:.1}\t{}\t{}", s.name, s.mean_us, s.p95_us, s.p99_us);
        }
        let _ = writeln!(out, "fps\t{:.2}\t{}\t", self.fps, self.frames);
        out
    }
}

/// Runs `frames` frames of the configured input and summarizes stage latencies.
pub fn bench(cfg: &PipelineConfig, frames: u64) -> Result<BenchReport, PipelineError> {
    let mut session = Session::open(cfg)?;
    let mut timings = Vec::new();
    let mut elapsed = Vec::new();
    session.drive(Some(frames), |_, result, _| {
        timings.push(result.timings);
        elapsed.push(result.elapsed_us);
        Ok(())
    })?;
    Ok(BenchReport::from_samples(&timings, &elapsed))
}
