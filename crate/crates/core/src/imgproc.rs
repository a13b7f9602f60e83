//! Frame types, grayscale conversion, Gaussian pyramids and the derivative
//! windows consumed by the Lucas-Kanade solver.

use thiserror::Error;

/// Smallest accepted frame side, in pixels.
pub const MIN_FRAME_SIDE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("frame {width}x{height} is smaller than the {min}x{min} minimum")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("intensity {value} at index {index} is outside [0, 255]")]
    IntensityRange { index: usize, value: f32 },
    #[error("{width}x{height} frame cannot hold {levels} pyramid levels")]
    TooSmallForLevels { width: usize, height: usize, levels: usize },
    #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("window of side {side} around ({x:.2}, {y:.2}) leaves the frame")]
    OutOfBounds { x: f64, y: f64, side: usize },
    #[error("window side {0} must be odd and at least 3")]
    WindowSide(usize),
}

/// Subpixel image coordinate. `x` grows rightwards, `y` downwards.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn scaled(self, factor: f64) -> Point2 {
        Point2::new(self.x * factor, self.y * factor)
    }
}

/// Interleaved 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    frame_index: u64,
}

impl RgbFrame {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        frame_index: u64,
    ) -> Result<Self, ImageError> {
        check_dims(width, height)?;
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize { expected, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels, frame_index })
    }

    /// Frame with every pixel set to `rgb`.
    pub fn filled(
        width: usize,
        height: usize,
        rgb: [u8; 3],
        frame_index: u64,
    ) -> Result<Self, ImageError> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels, frame_index)
    }

    /// Expands a single-channel frame to RGB by channel replication.
    pub fn from_gray_bytes(
        width: usize,
        height: usize,
        gray: &[u8],
        frame_index: u64,
    ) -> Result<Self, ImageError> {
        if gray.len() != width * height {
            return Err(ImageError::BufferSize { expected: width * height, actual: gray.len() });
        }
        let pixels = gray.iter().flat_map(|&g| [g, g, g]).collect();
        Self::new(width, height, pixels, frame_index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), ImageError> {
    if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
        return Err(ImageError::TooSmall { width, height, min: MIN_FRAME_SIDE });
    }
    Ok(())
}

/// Single-channel frame with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BufferSize { expected: width * height, actual: data.len() });
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, v)| !(0.0..=255.0).contains(*v))
        {
            return Err(ImageError::IntensityRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel, clamping to `[0, 255]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 255.0));
            }
        }
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with the border replicated outside
    /// `[0, width-1] x [0, height-1]`; integer coordinates return the stored value exactly.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let top = self.data[row0 + x0] * (1.0 - fx) + self.data[row0 + x1] * fx;
        let bottom = self.data[row1 + x0] * (1.0 - fx) + self.data[row1 + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Whether a square window of `side` pixels around `center`, widened by one
    /// pixel for central differences, lies inside the frame.
    pub fn window_fits(&self, center: Point2, side: usize) -> bool {
        let reach = (side / 2 + 1) as f64;
        center.x - reach >= 0.0
            && center.y - reach >= 0.0
            && center.x + reach <= (self.width - 1) as f64
            && center.y + reach <= (self.height - 1) as f64
    }

    pub fn contains(&self, p: Point2) -> bool {
        (0.0..=(self.width - 1) as f64).contains(&p.x) && (0.0..=(self.height - 1) as f64).contains(&p.y)
    }

    pub(crate) fn reaches(&self, center: Point2, side: usize, reach: Reach) -> bool {
        match reach {
            Reach::Window => self.window_fits(center, side),
            Reach::Center => self.contains(center),
        }
    }

    /// Quantizes to 8 bits with rounding.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round() as u8).collect()
    }
}

const LUMA_R: f32 = 0.299;
const LUMA_G: f32 = 0.587;
const LUMA_B: f32 = 0.114;

/// Rec. 601 luma.
pub fn to_grayscale(frame: &RgbFrame) -> GrayFrame {
    let data = frame
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let v = LUMA_R * p[0] as f32 + LUMA_G * p[1] as f32 + LUMA_B * p[2] as f32;
            v.min(255.0)
        })
        .collect();
    GrayFrame { width: frame.width, height: frame.height, data }
}

/// Coarse-to-fine image stack, level 0 at full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<GrayFrame>,
}

impl Pyramid {
    pub fn build(gray: GrayFrame, num_levels: usize) -> Result<Self, ImageError> {
        if num_levels == 0 || num_levels > 16 {
            return Err(ImageError::TooSmallForLevels {
                width: gray.width,
                height: gray.height,
                levels: num_levels,
            });
        }
        let need = 1usize << (num_levels - 1);
        if gray.width < need || gray.height < need {
            return Err(ImageError::TooSmallForLevels {
                width: gray.width,
                height: gray.height,
                levels: num_levels,
            });
        }
        let mut levels = Vec::with_capacity(num_levels);
        levels.push(gray);
        for _ in 1..num_levels {
            let next = downsample(levels.last().expect("level 0 present"));
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[GrayFrame] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &GrayFrame {
        &self.levels[k]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &GrayFrame {
        &self.levels[0]
    }
}

/// Clamped index `i + offset` into `[0, len)`.
#[inline]
fn clamp_index(i: usize, offset: isize, len: usize) -> usize {
    (i as isize + offset).clamp(0, len as isize - 1) as usize
}

/// [1, 4, 6, 4, 1] / 16 smoothing in both axes followed by keeping even
/// rows and columns. Borders replicate the edge pixel.
fn downsample(src: &GrayFrame) -> GrayFrame {
    let (w, h) = (src.width, src.height);
    let (nw, nh) = (w / 2, h / 2);

    // Horizontal pass evaluated only at even columns.
    let mut horiz = vec![0f32; nw * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        let out = &mut horiz[y * nw..(y + 1) * nw];
        for (nx, o) in out.iter_mut().enumerate() {
            let x = 2 * nx;
            let s = if x >= 2 && x + 2 < w {
                row[x - 2] + 4.0 * row[x - 1] + 6.0 * row[x] + 4.0 * row[x + 1] + row[x + 2]
            } else {
                row[clamp_index(x, -2, w)]
                    + 4.0 * row[clamp_index(x, -1, w)]
                    + 6.0 * row[x]
                    + 4.0 * row[clamp_index(x, 1, w)]
                    + row[clamp_index(x, 2, w)]
            };
            *o = s * (1.0 / 16.0);
        }
    }

    let mut data = vec![0f32; nw * nh];
    for ny in 0..nh {
        let y = 2 * ny;
        let rows = [-2isize, -1, 0, 1, 2].map(|d| clamp_index(y, d, h) * nw);
        let out = &mut data[ny * nw..(ny + 1) * nw];
        for (x, o) in out.iter_mut().enumerate() {
            let s = horiz[rows[0] + x]
                + 4.0 * horiz[rows[1] + x]
                + 6.0 * horiz[rows[2] + x]
                + 4.0 * horiz[rows[3] + x]
                + horiz[rows[4] + x];
            *o = (s * (1.0 / 16.0)).clamp(0.0, 255.0);
        }
    }
    GrayFrame { width: nw, height: nh, data }
}

/// Spatial and temporal derivatives sampled over a square window.
///
/// Samples are stored row-major over the window lattice `center + (dx, dy)`
/// with `dx, dy` in `-r..=r`, `r = side / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWindow {
    pub ix: Vec<f32>,
    pub iy: Vec<f32>,
    pub it: Vec<f32>,
    pub center: Point2,
    pub side: usize,
}

impl GradientWindow {
    pub fn len(&self) -> usize {
        self.ix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ix.is_empty()
    }
}

pub(crate) fn check_window_side(side: usize) -> Result<(), ImageError> {
    if side < 3 || side.is_multiple_of(2) {
        return Err(ImageError::WindowSide(side));
    }
    Ok(())
}

/// Central-difference gradients of `prev` and the frame difference
/// `curr - prev` over a `window_side` square around `center`.
pub fn gradient_window(
    prev: &GrayFrame,
    curr: &GrayFrame,
    center: Point2,
    window_side: usize,
) -> Result<GradientWindow, ImageError> {
    if prev.width != curr.width || prev.height != curr.height {
        return Err(ImageError::SizeMismatch(prev.width, prev.height, curr.width, curr.height));
    }
    check_window_side(window_side)?;
    let patch = TemplatePatch::sample(prev, center, window_side, Reach::Window)?;
    let mut it = Vec::with_capacity(patch.values.len());
    patch.temporal_into(curr, Point2::default(), Reach::Window, &mut it)?;
    Ok(GradientWindow { ix: patch.ix, iy: patch.iy, it, center, side: window_side })
}

/// How much of a window must lie inside the frame. With [`Reach::Center`]
/// only the center must; the rest samples the replicated border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Reach {
    Window,
    Center,
}

/// Intensities and gradients of the previous frame over a window. Built once
/// per point and level, then compared against displaced samples of the
/// current frame.
#[derive(Debug, Clone)]
pub(crate) struct TemplatePatch {
    pub center: Point2,
    pub side: usize,
    pub values: Vec<f32>,
    pub ix: Vec<f32>,
    pub iy: Vec<f32>,
}

impl TemplatePatch {
    pub fn sample(prev: &GrayFrame, center: Point2, side: usize, reach: Reach) -> Result<Self, ImageError> {
        if !prev.reaches(center, side, reach) {
            return Err(ImageError::OutOfBounds { x: center.x, y: center.y, side });
        }
        // Bilinear interpolation commutes with the central difference when all
        // taps share the same fractional offset, so sample a bordered patch once.
        let r = (side / 2) as isize;
        let ext = side + 2;
        let mut grid = vec![0f32; ext * ext];
        for (j, dy) in (-r - 1..=r + 1).enumerate() {
            for (i, dx) in (-r - 1..=r + 1).enumerate() {
                grid[j * ext + i] = prev.sample(center.x + dx as f64, center.y + dy as f64);
            }
        }
        let n = side * side;
        let mut values = Vec::with_capacity(n);
        let mut ix = Vec::with_capacity(n);
        let mut iy = Vec::with_capacity(n);
        for j in 1..=side {
            for i in 1..=side {
                let at = |a: usize, b: usize| grid[b * ext + a];
                values.push(at(i, j));
                ix.push(0.5 * (at(i + 1, j) - at(i - 1, j)));
                iy.push(0.5 * (at(i, j + 1) - at(i, j - 1)));
            }
        }
        Ok(Self { center, side, values, ix, iy })
    }

    /// Writes `curr(p + offset) - prev(p)` for every window pixel `p`.
    pub fn temporal_into(
        &self,
        curr: &GrayFrame,
        offset: Point2,
        reach: Reach,
        out: &mut Vec<f32>,
    ) -> Result<(), ImageError> {
        let moved = Point2::new(self.center.x + offset.x, self.center.y + offset.y);
        if !moved.x.is_finite() || !moved.y.is_finite() || !curr.reaches(moved, self.side, reach) {
            return Err(ImageError::OutOfBounds { x: moved.x, y: moved.y, side: self.side });
        }
        out.clear();
        let r = (self.side / 2) as isize;
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = curr.sample(moved.x + dx as f64, moved.y + dy as f64);
                out.push(v - self.values[k]);
                k += 1;
            }
        }
        Ok(())
    }
}
