//! Weighted Lucas-Kanade flow, coarse-to-fine pyramidal refinement, and
//! multi-frame point tracks.

use thiserror::Error;

use crate::imgproc::{check_window_side, GradientWindow, GrayFrame, ImageError, Point2, Pyramid, Reach, TemplatePatch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("aperture problem: smaller eigenvalue {min_eigen:.3e} below threshold {threshold:.3e}")]
    ApertureDegenerate { min_eigen: f64, threshold: f64 },
    #[error("estimate left the frame at ({x:.2}, {y:.2})")]
    Diverged { x: f64, y: f64 },
    #[error("track lost at pyramid level {level}: {cause}")]
    TrackLost { level: usize, cause: Box<FlowError> },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid flow configuration: {0}")]
    Config(String),
}

/// Displacement in pixels per frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowVector {
    pub vx: f64,
    pub vy: f64,
}

impl FlowVector {
    pub const ZERO: FlowVector = FlowVector { vx: 0.0, vy: 0.0 };

    pub const fn new(vx: f64, vy: f64) -> Self {
        Self { vx, vy }
    }

    pub fn norm(self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn scaled(self, k: f64) -> Self {
        Self::new(self.vx * k, self.vy * k)
    }

    fn as_offset(self) -> Point2 {
        Point2::new(self.vx, self.vy)
    }
}

impl std::ops::Add for FlowVector {
    type Output = FlowVector;
    fn add(self, o: FlowVector) -> FlowVector {
        FlowVector::new(self.vx + o.vx, self.vy + o.vy)
    }
}

impl std::ops::Sub for FlowVector {
    type Output = FlowVector;
    fn sub(self, o: FlowVector) -> FlowVector {
        FlowVector::new(self.vx - o.vx, self.vy - o.vy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub window_side: usize,
    pub num_levels: usize,
    pub max_iterations_per_level: usize,
    pub convergence_eps: f64,
    /// `None` means 1e-4 times the window area.
    pub min_eigen_threshold: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            window_side: 15,
            num_levels: 5,
            max_iterations_per_level: 30,
            convergence_eps: 0.01,
            min_eigen_threshold: None,
        }
    }
}

impl FlowConfig {
    pub fn min_eigen(&self) -> f64 {
        self.min_eigen_threshold
            .unwrap_or(1e-4 * (self.window_side * self.window_side) as f64)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        check_window_side(self.window_side).map_err(|e| FlowError::Config(e.to_string()))?;
        if self.num_levels == 0 {
            return Err(FlowError::Config("num_levels must be at least 1".into()));
        }
        if self.max_iterations_per_level == 0 {
            return Err(FlowError::Config("max_iterations_per_level must be at least 1".into()));
        }
        if !(self.convergence_eps > 0.0 && self.convergence_eps.is_finite()) {
            return Err(FlowError::Config("convergence_eps must be positive".into()));
        }
        if let Some(t) = self.min_eigen_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(FlowError::Config("min_eigen_threshold must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Isotropic Gaussian over the window lattice, sigma = side / 3.
pub fn gaussian_weights(side: usize) -> Vec<f64> {
    let r = (side / 2) as isize;
    let sigma = side as f64 / 3.0;
    let denom = 2.0 * sigma * sigma;
    let mut w = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            w.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    w
}

/// Over-determined system `A v = b` with diagonal weights `W`.
///
/// Row `i` of `A` is `(I_x(p_i), I_y(p_i))`, `b_i = -I_t(p_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LkSystem {
    pub a: Vec<[f64; 2]>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
}

impl LkSystem {
    pub fn from_window(window: &GradientWindow, weights: &[f64]) -> Self {
        let a = window.ix.iter().zip(&window.iy).map(|(&x, &y)| [x as f64, y as f64]).collect();
        let b = window.it.iter().map(|&t| -(t as f64)).collect();
        Self { a, b, w: weights.to_vec() }
    }

    fn from_parts(ix: &[f32], iy: &[f32], weights: &[f64]) -> Self {
        let a = ix.iter().zip(iy).map(|(&x, &y)| [x as f64, y as f64]).collect();
        Self { a, b: vec![0.0; ix.len()], w: weights.to_vec() }
    }

    fn set_temporal(&mut self, it: &[f32]) {
        for (b, &t) in self.b.iter_mut().zip(it) {
            *b = -(t as f64);
        }
    }

    /// Entries `(g11, g12, g22)` of `AᵀWA`.
    pub fn normal_matrix(&self) -> (f64, f64, f64) {
        let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
        for (row, &w) in self.a.iter().zip(&self.w) {
            g11 += w * row[0] * row[0];
            g12 += w * row[0] * row[1];
            g22 += w * row[1] * row[1];
        }
        (g11, g12, g22)
    }

    /// `AᵀWb`.
    pub fn rhs(&self) -> [f64; 2] {
        let mut r = [0.0; 2];
        for ((row, &w), &b) in self.a.iter().zip(&self.w).zip(&self.b) {
            r[0] += w * row[0] * b;
            r[1] += w * row[1] * b;
        }
        r
    }

    /// `‖AᵀW(Av − b)‖` and `‖AᵀWb‖`.
    pub fn stationarity(&self, v: FlowVector) -> (f64, f64) {
        let mut res = [0.0; 2];
        let mut rhs = [0.0; 2];
        for ((row, &w), &b) in self.a.iter().zip(&self.w).zip(&self.b) {
            let e = row[0] * v.vx + row[1] * v.vy - b;
            res[0] += w * row[0] * e;
            res[1] += w * row[1] * e;
            rhs[0] += w * row[0] * b;
            rhs[1] += w * row[1] * b;
        }
        (res[0].hypot(res[1]), rhs[0].hypot(rhs[1]))
    }

    /// `(AᵀWA)⁻¹AᵀWb`, solved in closed form.
    pub fn solve(&self, min_eigen_threshold: f64) -> Result<FlowVector, FlowError> {
        let normal = self.normal_matrix();
        solve_normal(normal, self.rhs(), min_eigen_threshold)
    }
}

fn solve_normal(
    (g11, g12, g22): (f64, f64, f64),
    rhs: [f64; 2],
    min_eigen_threshold: f64,
) -> Result<FlowVector, FlowError> {
    let min_eigen = crate::features::min_eigenvalue(g11, g12, g22);
    if min_eigen.is_nan() || min_eigen < min_eigen_threshold || min_eigen <= 0.0 {
        return Err(FlowError::ApertureDegenerate { min_eigen, threshold: min_eigen_threshold });
    }
    let det = g11 * g22 - g12 * g12;
    let vx = (g22 * rhs[0] - g12 * rhs[1]) / det;
    let vy = (g11 * rhs[1] - g12 * rhs[0]) / det;
    Ok(FlowVector::new(vx, vy))
}

/// One weighted least-squares solve on a prepared window.
pub fn lk_solve(
    window: &GradientWindow,
    weights: &[f64],
    min_eigen_threshold: f64,
) -> Result<FlowVector, FlowError> {
    LkSystem::from_window(window, weights).solve(min_eigen_threshold)
}

/// Receives every successful solve with the system that produced it.
pub trait SolveObserver {
    fn observe(&mut self, system: &LkSystem, solution: FlowVector);
}

impl SolveObserver for () {
    fn observe(&mut self, _: &LkSystem, _: FlowVector) {}
}

impl<F: FnMut(&LkSystem, FlowVector)> SolveObserver for F {
    fn observe(&mut self, system: &LkSystem, solution: FlowVector) {
        self(system, solution)
    }
}

/// Iterative refinement at a single level: returns the residual flow found on
/// top of `guess` for the window around `point` in `prev`. The whole window
/// must stay inside both frames.
pub fn refine_at_level(
    prev: &GrayFrame,
    curr: &GrayFrame,
    point: Point2,
    guess: FlowVector,
    cfg: &FlowConfig,
) -> Result<FlowVector, FlowError> {
    let weights = gaussian_weights(cfg.window_side);
    refine_observed(prev, curr, point, guess, 0, cfg, &weights, &mut ())
}

#[allow(clippy::too_many_arguments)]
fn refine_observed(
    prev: &GrayFrame,
    curr: &GrayFrame,
    point: Point2,
    guess: FlowVector,
    level: usize,
    cfg: &FlowConfig,
    weights: &[f64],
    observer: &mut dyn SolveObserver,
) -> Result<FlowVector, FlowError> {
    // Coarse levels only steer the estimate, so their windows may overhang
    // the border; the finest level keeps the whole window inside.
    let reach = if level == 0 { Reach::Window } else { Reach::Center };
    let template = TemplatePatch::sample(prev, point, cfg.window_side, reach)?;
    let mut system = LkSystem::from_parts(&template.ix, &template.iy, weights);
    let normal = system.normal_matrix();
    let threshold = cfg.min_eigen();
    let mut residual = FlowVector::ZERO;
    let mut it = Vec::with_capacity(template.values.len());
    for _ in 0..cfg.max_iterations_per_level {
        let offset = (guess + residual).as_offset();
        if template.temporal_into(curr, offset, reach, &mut it).is_err() {
            return Err(FlowError::Diverged { x: point.x + offset.x, y: point.y + offset.y });
        }
        system.set_temporal(&it);
        let step = solve_normal(normal, system.rhs(), threshold)?;
        observer.observe(&system, step);
        residual = residual + step;
        if !(residual.vx.is_finite() && residual.vy.is_finite()) {
            return Err(FlowError::Diverged { x: f64::NAN, y: f64::NAN });
        }
        if step.norm() < cfg.convergence_eps {
            break;
        }
    }
    let end = (guess + residual).as_offset();
    let landed = Point2::new(point.x + end.x, point.y + end.y);
    if !curr.reaches(landed, cfg.window_side, reach) {
        return Err(FlowError::Diverged { x: landed.x, y: landed.y });
    }
    Ok(residual)
}

/// Coarse-to-fine flow of a level-0 point.
///
/// Starts from zero at the coarsest level; each finer level doubles the
/// previous estimate, refines it, and adds the residual. A coarse level that
/// fails passes its estimate on unchanged; only the finest level loses the
/// track.
pub fn pyramidal_flow(
    pyr_prev: &Pyramid,
    pyr_curr: &Pyramid,
    point: Point2,
    cfg: &FlowConfig,
) -> Result<FlowVector, FlowError> {
    let weights = gaussian_weights(cfg.window_side);
    pyramidal_flow_observed(pyr_prev, pyr_curr, point, cfg, &weights, &mut ())
}

/// [`pyramidal_flow`] reporting every least-squares solve to `observer`.
pub fn pyramidal_flow_observed(
    pyr_prev: &Pyramid,
    pyr_curr: &Pyramid,
    point: Point2,
    cfg: &FlowConfig,
    weights: &[f64],
    observer: &mut dyn SolveObserver,
) -> Result<FlowVector, FlowError> {
    let levels = cfg.num_levels.min(pyr_prev.num_levels()).min(pyr_curr.num_levels());
    if levels == 0 {
        return Err(FlowError::Config("pyramids have no levels".into()));
    }
    let mut flow = FlowVector::ZERO;
    for level in (0..levels).rev() {
        let scale = 1.0 / (1u64 << level) as f64;
        let at_level = point.scaled(scale);
        let prev = pyr_prev.level(level);
        let curr = pyr_curr.level(level);
        if level + 1 < levels {
            flow = flow.scaled(2.0);
        }
        match refine_observed(prev, curr, at_level, flow, level, cfg, weights, observer) {
            Ok(residual) => flow = flow + residual,
            // Too little texture, or the window ran off this small level;
            // finer levels still decide.
            Err(_) if level > 0 => {}
            Err(cause) => return Err(FlowError::TrackLost { level, cause: Box::new(cause) }),
        }
    }
    Ok(flow)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Lost,
}

/// Trajectory of one tracked point. `points[i]` belongs to frame
/// `first_frame + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub first_frame: u64,
    pub points: Vec<Point2>,
    pub status: TrackStatus,
}

impl Track {
    pub fn last_point(&self) -> Point2 {
        *self.points.last().expect("tracks always hold a point")
    }

    pub fn last_frame(&self) -> u64 {
        self.first_frame + self.points.len() as u64 - 1
    }

    pub fn is_active(&self) -> bool {
        self.status == TrackStatus::Active
    }

    /// The trailing `k` points (fewer if the track is shorter).
    pub fn recent(&self, k: usize) -> &[Point2] {
        let start = self.points.len().saturating_sub(k);
        &self.points[start..]
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrackSet {
    tracks: Vec<Track>,
    next_id: u64,
    max_history: Option<usize>,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps at most `limit` trailing points per track.
    pub fn with_history_limit(limit: usize) -> Self {
        Self { max_history: Some(limit.max(2)), ..Self::default() }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn active(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    /// Starts a new active track at `point` in `frame`; returns its id.
    pub fn spawn(&mut self, frame: u64, point: Point2) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.push(Track { id, first_frame: frame, points: vec![point], status: TrackStatus::Active });
        id
    }

    /// Drops tracks that are no longer active.
    pub fn prune_lost(&mut self) {
        self.tracks.retain(Track::is_active);
    }

    /// Extends every active track into the next frame. Failed solves and
    /// points leaving the frame mark the track lost.
    pub fn advance(&mut self, pyr_prev: &Pyramid, pyr_curr: &Pyramid, cfg: &FlowConfig) {
        let weights = gaussian_weights(cfg.window_side);
        let base = pyr_curr.base();
        let (w, h) = (base.width() as f64, base.height() as f64);
        for track in self.tracks.iter_mut().filter(|t| t.is_active()) {
            let p = track.last_point();
            match pyramidal_flow_observed(pyr_prev, pyr_curr, p, cfg, &weights, &mut ()) {
                Ok(v) => {
                    let q = Point2::new(p.x + v.vx, p.y + v.vy);
                    if q.x < 0.0 || q.y < 0.0 || q.x > w - 1.0 || q.y > h - 1.0 {
                        track.status = TrackStatus::Lost;
                    } else {
                        track.points.push(q);
                        if let Some(limit) = self.max_history {
                            if track.points.len() > limit {
                                let excess = track.points.len() - limit;
                                track.points.drain(..excess);
                                track.first_frame += excess as u64;
                            }
                        }
                    }
                }
                Err(_) => track.status = TrackStatus::Lost,
            }
        }
    }
}

/// Functional form of [`TrackSet::advance`].
pub fn advance_tracks(tracks: &TrackSet, pyr_prev: &Pyramid, pyr_curr: &Pyramid, cfg: &FlowConfig) -> TrackSet {
    let mut next = tracks.clone();
    next.advance(pyr_prev, pyr_curr, cfg);
    next
}
