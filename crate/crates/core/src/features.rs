//! Shi-Tomasi corner detection.
//!
//! Gradients are 3x3 Sobel responses scaled by 1/8. The structure tensor is an
//! unweighted sum over a `block_side` square; the score is its smaller
//! eigenvalue. Pixels whose Sobel-plus-block footprint does not fit in the
//! frame score zero.

use crate::imgproc::{GrayFrame, Point2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerParams {
    pub max_corners: usize,
    pub quality_level: f64,
    pub min_distance: f64,
    pub block_side: usize,
}

impl Default for CornerParams {
    fn default() -> Self {
        Self { max_corners: 200, quality_level: 0.03, min_distance: 10.0, block_side: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub position: Point2,
    pub response: f64,
}

/// Corners ordered by descending response.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerSet {
    pub corners: Vec<Corner>,
    pub params: CornerParams,
}

impl CornerSet {
    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Point2> + '_ {
        self.corners.iter().map(|c| c.position)
    }
}

/// Smaller eigenvalue of the symmetric matrix `[[a, b], [b, c]]`.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let half_trace = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    (half_trace - (half_diff * half_diff + b * b).sqrt()).max(0.0)
}

/// Per-pixel minimum-eigenvalue map, row-major.
pub fn min_eigen_map(gray: &GrayFrame, block_side: usize) -> Vec<f64> {
    let (w, h) = (gray.width(), gray.height());
    let mut out = vec![0f64; w * h];
    let r = block_side / 2;
    let margin = r + 1;
    if w < 2 * margin + 1 || h < 2 * margin + 1 {
        return out;
    }
    let px = gray.data();

    // Gradient products for interior pixels (Sobel needs a one-pixel margin).
    let mut gxx = vec![0f64; w * h];
    let mut gxy = vec![0f64; w * h];
    let mut gyy = vec![0f64; w * h];
    for y in 1..h - 1 {
        let up = &px[(y - 1) * w..y * w];
        let mid = &px[y * w..(y + 1) * w];
        let down = &px[(y + 1) * w..(y + 2) * w];
        for x in 1..w - 1 {
            let gx = (up[x + 1] - up[x - 1]) + 2.0 * (mid[x + 1] - mid[x - 1]) + (down[x + 1] - down[x - 1]);
            let gy = (down[x - 1] - up[x - 1]) + 2.0 * (down[x] - up[x]) + (down[x + 1] - up[x + 1]);
            let gx = gx as f64 * 0.125;
            let gy = gy as f64 * 0.125;
            let i = y * w + x;
            gxx[i] = gx * gx;
            gxy[i] = gx * gy;
            gyy[i] = gy * gy;
        }
    }

    // Separable box sums over the block.
    let box_rows = |src: &[f64]| {
        let mut tmp = vec![0f64; w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in r..w - r {
                tmp[y * w + x] = row[x - r..=x + r].iter().sum();
            }
        }
        tmp
    };
    let sxx = box_rows(&gxx);
    let sxy = box_rows(&gxy);
    let syy = box_rows(&gyy);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for yy in y - r..=y + r {
                let i = yy * w + x;
                a += sxx[i];
                b += sxy[i];
                c += syy[i];
            }
            out[y * w + x] = min_eigenvalue(a, b, c);
        }
    }
    out
}

/// Shi-Tomasi "good features to track".
///
/// Candidates scoring at least `quality_level` times the global maximum are
/// visited by descending score (row-major order on ties) and accepted when no
/// accepted corner lies closer than `min_distance`.
pub fn detect_corners(gray: &GrayFrame, params: &CornerParams) -> CornerSet {
    let empty = CornerSet { corners: Vec::new(), params: *params };
    if params.max_corners == 0 {
        return empty;
    }
    let w = gray.width();
    let scores = min_eigen_map(gray, params.block_side);
    let max_score = scores.iter().copied().fold(0.0, f64::max);
    if max_score <= 0.0 {
        return empty;
    }
    let threshold = params.quality_level * max_score;
    let mut candidates: Vec<(f64, u32)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0 && s >= threshold)
        .map(|(i, &s)| (s, i as u32))
        .collect();
    candidates.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut grid = SpacingGrid::new(gray.width(), gray.height(), params.min_distance);
    let mut corners = Vec::with_capacity(params.max_corners);
    for (score, idx) in candidates {
        let p = Point2::new((idx as usize % w) as f64, (idx as usize / w) as f64);
        if grid.is_clear(p) {
            grid.insert(p);
            corners.push(Corner { position: p, response: score });
            if corners.len() == params.max_corners {
                break;
            }
        }
    }
    CornerSet { corners, params: *params }
}

/// Bucket grid answering "is any stored point closer than `min_distance`".
pub(crate) struct SpacingGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    min_distance_sq: f64,
    buckets: Vec<Vec<Point2>>,
}

impl SpacingGrid {
    pub fn new(width: usize, height: usize, min_distance: f64) -> Self {
        let cell = min_distance.max(1.0);
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        Self {
            cell,
            cols,
            rows,
            min_distance_sq: min_distance * min_distance,
            buckets: vec![Vec::new(); cols * rows],
        }
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        let cx = ((p.x.max(0.0)) / self.cell) as usize;
        let cy = ((p.y.max(0.0)) / self.cell) as usize;
        (cx.min(self.cols - 1), cy.min(self.rows - 1))
    }

    pub fn is_clear(&self, p: Point2) -> bool {
        if self.min_distance_sq <= 0.0 {
            return true;
        }
        let (cx, cy) = self.cell_of(p);
        for y in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
            for x in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                for q in &self.buckets[y * self.cols + x] {
                    let d = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
                    if d < self.min_distance_sq {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn insert(&mut self, p: Point2) {
        let (cx, cy) = self.cell_of(p);
        self.buckets[cy * self.cols + cx].push(p);
    }
}
