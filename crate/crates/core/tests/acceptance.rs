//! Release gate. Each criterion prints one PASS or FAIL line; the process
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use guidepost::features::{detect_corners, CornerParams};
use guidepost::flow::{gaussian_weights, pyramidal_flow_observed, FlowConfig, LkSystem};
use guidepost::guidance::{evaluate_object, zone_of, ObjectState, Zone, ZoneConfig};
use guidepost::imgproc::{GrayFrame, Point2, Pyramid};
use guidepost::perception::{
    open_depth, open_detector, parse_detection_replay, read_packed_depth, scale_invariant_loss, write_detection_replay,
    write_packed_depth, BBox, BackendSpec, DepthMap, Detection, NoiseSpec,
};
use guidepost::pipeline::{self, format_event, parse_event_log, InputKind, PipelineConfig};
use guidepost::sim::{self, run_scenario, Renderer, SceneScript, ValueNoise};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

/// Continuous value-noise texture translated by `(dx, dy)`.
fn textured(noise: &ValueNoise, w: usize, h: usize, dx: f64, dy: f64) -> GrayFrame {
    GrayFrame::from_fn(w, h, |x, y| {
        let n = noise.fractal((x as f64 - dx) / 10.0, (y as f64 - dy) / 10.0, 3);
        (128.0 + 200.0 * (n - 0.5)) as f32
    })
}

struct FlowStats {
    errors: Vec<f64>,
    lost: usize,
    solves: usize,
    worst_stationarity: f64,
    violations: usize,
}

/// Tracks Shi-Tomasi corners across `pairs` shifted texture pairs. Corners
/// whose true destination keeps the window inside the frame count; failed
/// tracks count against the criterion as lost.
fn flow_trial(pairs: u64, w: usize, h: usize, max_shift: f64, levels: usize, seed: u64, stats: &mut FlowStats) {
    let cfg = FlowConfig { num_levels: levels, ..FlowConfig::default() };
    let weights = gaussian_weights(cfg.window_side);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pair in 0..pairs {
        let noise = ValueNoise::new(seed * 1000 + pair);
        let (dx, dy) = loop {
            let (a, b) = (rng.random_range(-max_shift..=max_shift), rng.random_range(-max_shift..=max_shift));
            if a.hypot(b) <= max_shift {
                break (a, b);
            }
        };
        let prev = textured(&noise, w, h, 0.0, 0.0);
        let curr = textured(&noise, w, h, dx, dy);
        let corners = detect_corners(&prev, &CornerParams::default());
        let pyr_prev = Pyramid::build(prev.clone(), levels).unwrap();
        let pyr_curr = Pyramid::build(curr.clone(), levels).unwrap();
        for p in corners.positions() {
            let dest = Point2::new(p.x + dx, p.y + dy);
            if !curr.window_fits(dest, cfg.window_side) || !prev.window_fits(p, cfg.window_side) {
                continue;
            }
            let mut observer = |system: &LkSystem, v: guidepost::flow::FlowVector| {
                let (res, rhs) = system.stationarity(v);
                stats.solves += 1;
                let ratio = if rhs > 0.0 { res / rhs } else { res };
                stats.worst_stationarity = stats.worst_stationarity.max(ratio);
                if res > 1e-6 * rhs {
                    stats.violations += 1;
                }
            };
            match pyramidal_flow_observed(&pyr_prev, &pyr_curr, p, &cfg, &weights, &mut observer) {
                Ok(v) => stats.errors.push((v.vx - dx).hypot(v.vy - dy)),
                Err(_) => stats.lost += 1,
            }
        }
    }
}

fn flow_criteria() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut single = FlowStats { errors: vec![], lost: 0, solves: 0, worst_stationarity: 0.0, violations: 0 };
    flow_trial(100, 320, 240, 3.0, 1, 11, &mut single);
    let mut pyramid = FlowStats { errors: vec![], lost: 0, solves: 0, worst_stationarity: 0.0, violations: 0 };
    flow_trial(100, 640, 480, 12.0, 5, 12, &mut pyramid);
    let elapsed = start.elapsed().as_secs_f64();

    let summarize = |s: &FlowStats| {
        let total = s.errors.len() + s.lost;
        let good = s.errors.iter().filter(|&&e| e <= 0.5).count();
        let mut sorted = s.errors.clone();
        sorted.extend(std::iter::repeat_n(f64::INFINITY, s.lost));
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        (good as f64 / total as f64, median, total)
    };
    let (f1, m1, n1) = summarize(&single);
    let (f5, m5, n5) = summarize(&pyramid);
    let c1 = check(
        f1 >= 0.90 && m1 <= 0.25 && f5 >= 0.90 && m5 <= 0.25 && elapsed <= 60.0,
        format!(
            "1 level |d|<=3: {:.1}% <=0.5px, median {m1:.4} (n={n1}, lost {}); 5 levels |d|<=12: {:.1}% <=0.5px, median {m5:.4} (n={n5}, lost {}); {elapsed:.1}s",
            100.0 * f1,
            single.lost,
            100.0 * f5,
            pyramid.lost
        ),
    );
    let solves = single.solves + pyramid.solves;
    let violations = single.violations + pyramid.violations;
    let worst = single.worst_stationarity.max(pyramid.worst_stationarity);
    let c2 = check(violations == 0 && solves > 0, format!("{solves} solves, {violations} violations, worst ratio {worst:.2e}"));
    (c1, c2)
}

/// Brute-force Shi-Tomasi: direct 3x3 Sobel, direct block sums, exhaustive
/// suppression against every accepted corner.
fn corner_oracle(img: &GrayFrame, params: &CornerParams) -> Vec<(Point2, f64)> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let px = |x: i64, y: i64| img.get(x as usize, y as usize) as f64;
    let r = (params.block_side / 2) as i64;
    let margin = r + 1;
    let mut scores = vec![0f64; (w * h) as usize];
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for v in y - r..=y + r {
                for u in x - r..=x + r {
                    let gx = (px(u + 1, v - 1) + 2.0 * px(u + 1, v) + px(u + 1, v + 1)
                        - px(u - 1, v - 1)
                        - 2.0 * px(u - 1, v)
                        - px(u - 1, v + 1))
                        / 8.0;
                    let gy = (px(u - 1, v + 1) + 2.0 * px(u, v + 1) + px(u + 1, v + 1)
                        - px(u - 1, v - 1)
                        - 2.0 * px(u, v - 1)
                        - px(u + 1, v - 1))
                        / 8.0;
                    a += gx * gx;
                    b += gx * gy;
                    c += gy * gy;
                }
            }
            let half_trace = 0.5 * (a + c);
            let half_diff = 0.5 * (a - c);
            scores[(y * w + x) as usize] = (half_trace - (half_diff * half_diff + b * b).sqrt()).max(0.0);
        }
    }
    let best = scores.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > 0.0 && scores[i] >= params.quality_level * best).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut accepted: Vec<(Point2, f64)> = Vec::new();
    for i in order {
        let p = Point2::new((i as i64 % w) as f64, (i as i64 / w) as f64);
        if accepted.iter().all(|(q, _)| p.distance(*q) >= params.min_distance) {
            accepted.push((p, scores[i]));
            if accepted.len() == params.max_corners {
                break;
            }
        }
    }
    accepted
}

fn corner_criterion() -> Outcome {
    let params = CornerParams::default();
    let mut total = 0;
    for seed in 0..20u64 {
        let noise = ValueNoise::new(500 + seed);
        let img = GrayFrame::from_fn(128, 128, |x, y| {
            (128.0 + 220.0 * (noise.fractal(x as f64 / 9.0, y as f64 / 9.0, 3) - 0.5)).round().clamp(0.0, 255.0) as f32
        });
        let got: Vec<(Point2, f64)> = detect_corners(&img, &params).corners.iter().map(|c| (c.position, c.response)).collect();
        let want = corner_oracle(&img, &params);
        if got != want {
            let first = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!("frame {seed}: {} vs {} corners, first difference at {first}", got.len(), want.len()));
        }
        for (i, (p, _)) in got.iter().enumerate() {
            for (q, _) in &got[i + 1..] {
                if p.distance(*q) < 10.0 {
                    return Err(format!("frame {seed}: corners {p:?} and {q:?} closer than 10 px"));
                }
            }
        }
        total += got.len();
    }
    Ok(format!("20 frames, {total} corners identical in position and order; all pairs >= 10 px"))
}

fn loss_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (32, 24);
    let truth = DepthMap::new(w, h, (0..w * h).map(|_| rng.random_range(1.0f32..25.0)).collect()).unwrap();
    let pred = DepthMap::new(w, h, (0..w * h).map(|_| rng.random_range(1.0f32..25.0)).collect()).unwrap();
    let self_loss = scale_invariant_loss(&pred, &pred, 0.5).unwrap();
    let mut worst_scaled = 0.0f64;
    for c in [0.5f32, 2.0, 10.0] {
        let scaled = DepthMap::new(w, h, truth.values().iter().map(|v| v * c).collect()).unwrap();
        worst_scaled = worst_scaled.max(scale_invariant_loss(&scaled, &truth, 1.0).unwrap().abs());
    }
    let msle: f64 = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(&p, &t)| (p as f64).ln() - (t as f64).ln())
        .map(|d| d * d)
        .sum::<f64>()
        / (w * h) as f64;
    let lambda0 = scale_invariant_loss(&pred, &truth, 0.0).unwrap();
    let two_truth = DepthMap::new(2, 1, vec![1.0, 1.0]).unwrap();
    let two_pred = DepthMap::new(2, 1, vec![1.0, 2.0]).unwrap();
    let two = scale_invariant_loss(&two_pred, &two_truth, 0.5).unwrap();
    // d = (0, ln 2): mean(d^2) = (ln 2)^2 / 2, mean(d) = ln 2 / 2.
    let ln2 = std::f64::consts::LN_2;
    let derived = ln2 * ln2 / 2.0 - 0.5 * (ln2 / 2.0).powi(2);
    check(
        self_loss == 0.0 && worst_scaled <= 1e-12 && (lambda0 - msle).abs() <= 1e-12 && (two - derived).abs() <= 1e-5 && (two - 0.180170).abs() <= 1e-5,
        format!(
            "self {self_loss:e}, scaled max {worst_scaled:.1e}, lambda=0 vs MSLE {:.1e}, two-pixel {two:.7} (derived {derived:.7})",
            (lambda0 - msle).abs()
        ),
    )
}

fn zone_criterion() -> Outcome {
    let cfg = ZoneConfig::default();
    for step in 0..2560 {
        let x = step as f64 * 0.5;
        let expected = if x < 448.0 {
            Zone::Left
        } else if x < 832.0 {
            Zone::Center
        } else {
            Zone::Right
        };
        if zone_of(x, &cfg) != Ok(expected) {
            return Err(format!("x = {x}: {:?}", zone_of(x, &cfg)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut warned = 0;
    for n in 0..10_000u64 {
        let zone = Zone::ALL[rng.random_range(0..3)];
        let depth: f32 = rng.random_range(0.0..=255.0);
        let score = if rng.random_bool(0.1) { None } else { Some(rng.random_range(-0.05..0.08)) };
        let cx = match zone {
            Zone::Left => 200.0,
            Zone::Center => 640.0,
            Zone::Right => 1000.0,
        };
        let state = ObjectState {
            frame_index: n,
            object_id: n,
            detection: Detection::new(BBox::new(cx - 20.0, 100.0, cx + 20.0, 200.0), rng.random_range(0..80), 0.9).unwrap(),
            zone,
            depth_stat: depth,
            approach_score: score,
            track_ids: vec![],
        };
        if evaluate_object(&state, &cfg, 0.01).is_some() {
            warned += 1;
            for _ in 0..5 {
                let nearer = ObjectState { depth_stat: depth * rng.random_range(0.0f32..1.0), ..state.clone() };
                if evaluate_object(&nearer, &cfg, 0.01).is_none() {
                    return Err(format!("warned at {depth} but not at {}", nearer.depth_stat));
                }
            }
        }
    }
    Ok(format!("x in [0, 1280) at 0.5 px steps partitions at 448/832; 10000 states ({warned} warning) monotone in depth"))
}

fn clean_config() -> PipelineConfig {
    PipelineConfig::default()
}

fn suite_criterion() -> Outcome {
    let start = Instant::now();
    let suite = sim::bundled_suite();
    let mut lines = Vec::new();
    let mut ok = true;
    for script in &suite {
        let first = run_scenario(script, &clean_config(), 1).map_err(|e| e.to_string())?;
        for _ in 0..2 {
            let again = run_scenario(script, &clean_config(), 1).map_err(|e| e.to_string())?;
            if again != first {
                ok = false;
                lines.push(format!("{} not deterministic", script.name));
            }
        }
        ok &= first.correct == first.expected_approaches && first.false_positives == 0;
        lines.push(format!("{} {}/{} fp {}", first.name, first.correct, first.expected_approaches, first.false_positives));
    }
    let expected: Vec<usize> = suite.iter().map(|s| sim::approach_events(s, &ZoneConfig::default()).len()).collect();
    ok &= expected == [9, 10, 8, 0];
    let elapsed = start.elapsed().as_secs_f64();
    check(ok && elapsed <= 120.0, format!("{}; 3 runs each identical; {elapsed:.1}s", lines.join(", ")))
}

fn noisy_criterion() -> Outcome {
    let mut cfg = clean_config();
    cfg.noise = NoiseSpec { dropout: 0.1, jitter: 2.0, depth_sigma: 5.0 };
    let mut correct = 0;
    let mut expected = 0;
    let mut lines = Vec::new();
    for script in sim::bundled_suite().iter().filter(|s| s.name.starts_with("street")) {
        let r = run_scenario(script, &cfg, 2024).map_err(|e| e.to_string())?;
        correct += r.correct;
        expected += r.expected_approaches;
        lines.push(format!("{} {}/{} fp {}", r.name, r.correct, r.expected_approaches, r.false_positives));
    }
    check(correct >= 24 && expected == 27, format!("{correct}/{expected} correct ({})", lines.join(", ")))
}

fn bench_criterion() -> Outcome {
    let cfg = PipelineConfig::for_input(InputKind::Scenario, scenario_path("bench"));
    cfg.validate().map_err(|e| e.to_string())?;
    let report = pipeline::bench(&cfg, 300).map_err(|e| e.to_string())?;
    let p95: Vec<String> = report.stages.iter().map(|s| format!("{} {}", s.name, s.p95_us)).collect();
    check(
        report.frames == 300 && report.fps >= 25.0,
        format!("{:.1} fps over {} frames at 1280x720; p95 us: {}", report.fps, report.frames, p95.join(", ")),
    )
}

fn determinism_criterion() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_to = |name: &str, annotate: bool| -> Result<Vec<u8>, String> {
        let mut cfg = PipelineConfig::for_input(InputKind::Scenario, scenario_path("street_b"));
        cfg.seed = 3;
        cfg.noise = NoiseSpec { dropout: 0.1, jitter: 2.0, depth_sigma: 5.0 };
        let path = dir.path().join(name);
        cfg.output.events = Some(path.clone());
        if annotate {
            cfg.output.annotate_dir = Some(dir.path().join("frames"));
        }
        pipeline::run(&cfg).map_err(|e| e.to_string())?;
        std::fs::read(path).map_err(|e| e.to_string())
    };
    let a = run_to("a.tsv", false)?;
    let b = run_to("b.tsv", false)?;
    let c = run_to("c.tsv", true)?;
    if a != b || a != c || a.is_empty() {
        return Err(format!("event logs differ or are empty ({} / {} / {} bytes)", a.len(), b.len(), c.len()));
    }
    let events = parse_event_log(a.as_slice()).map_err(|e| e.to_string())?;
    let reformatted: String = events.iter().map(|e| format_event(e) + "\n").collect();
    if reformatted.as_bytes() != a.as_slice() {
        return Err("event log does not round-trip".into());
    }

    // Replay files written from perturbed oracle outputs read back bit-exactly.
    let script = Arc::new(SceneScript::load(&scenario_path("street_a")).map_err(|e| e.to_string())?);
    let noise = NoiseSpec { dropout: 0.0, jitter: 2.0, depth_sigma: 5.0 };
    let spec = BackendSpec::Perturbed { inner: Box::new(BackendSpec::Oracle(script.clone())), noise, seed: 9 };
    let (det, depth) = (open_detector(&spec).unwrap(), open_depth(&spec).unwrap());
    let renderer = Renderer::new(script.clone(), 0);
    let mut records: Vec<(u64, Detection)> = Vec::new();
    let mut maps = Vec::new();
    for t in 0..40 {
        let frame = renderer.frame(t).map_err(|e| e.to_string())?;
        records.extend(det.detect(t, &frame).unwrap().into_iter().map(|d| (t, d)));
        let m = depth.estimate_depth(t, &frame).unwrap();
        maps.push(DepthMap::from_bytes(m.width(), m.height(), &m.to_bytes()).unwrap());
    }
    let mut text = Vec::new();
    write_detection_replay(&mut text, records.iter().map(|(t, d)| (*t, d))).unwrap();
    let replay = parse_detection_replay(text.as_slice(), "mem").map_err(|e| e.to_string())?;
    let back: Vec<(u64, Detection)> = replay.frames().iter().flat_map(|(t, ds)| ds.iter().map(|d| (*t, *d))).collect();
    let bit_exact = back.len() == records.len()
        && back.iter().zip(&records).all(|(a, b)| {
            a.0 == b.0
                && a.1.class_id == b.1.class_id
                && a.1.score.to_bits() == b.1.score.to_bits()
                && [a.1.bbox.x_min, a.1.bbox.y_min, a.1.bbox.x_max, a.1.bbox.y_max].map(f64::to_bits)
                    == [b.1.bbox.x_min, b.1.bbox.y_min, b.1.bbox.x_max, b.1.bbox.y_max].map(f64::to_bits)
        });
    let mut packed = Vec::new();
    write_packed_depth(&mut packed, &maps).unwrap();
    let depth_back = read_packed_depth(packed.as_slice()).map_err(|e| e.to_string())?;
    check(
        bit_exact && depth_back == maps,
        format!(
            "3 runs byte-identical ({} events, annotation on/off), log round-trips; {} detections and {} depth frames replay bit-exactly",
            events.len(),
            records.len(),
            maps.len()
        ),
    )
}

fn main() {
    let (c1, c2) = flow_criteria();
    let results: Vec<(&str, Outcome)> = vec![
        ("weighted LK endpoint error", c1),
        ("normal-equation stationarity", c2),
        ("Shi-Tomasi oracle equivalence", corner_criterion()),
        ("scale-invariant loss properties", loss_criterion()),
        ("zone partition and gate monotonicity", zone_criterion()),
        ("clean scenario completeness", suite_criterion()),
        ("noisy scenario plausibility", noisy_criterion()),
        ("real-time budget", bench_criterion()),
        ("determinism and round-trips", determinism_criterion()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
