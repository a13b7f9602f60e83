use std::sync::Arc;

use super::{SceneScript, SimError, SpriteState, ValueNoise};
use crate::imgproc::RgbFrame;
use crate::perception::{BBox, DepthMap, Detection};

/// Per-pixel displacement from frame `t` to `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlow {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl DenseFlow {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, u: vec![0.0; width * height], v: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub frame: RgbFrame,
    pub detections: Vec<Detection>,
    pub depth: DepthMap,
    pub flow: DenseFlow,
}

const SPRITE_OCTAVES: u32 = 2;

/// Renders frames of one script with one seed. The background is computed
/// once when it does not drift.
#[derive(Debug, Clone)]
pub struct Renderer {
    script: Arc<SceneScript>,
    seed: u64,
    noise: ValueNoise,
    static_background: Option<Vec<u8>>,
}

impl Renderer {
    pub fn new(script: Arc<SceneScript>, seed: u64) -> Self {
        let noise = ValueNoise::new(seed);
        let mut r = Self { script, seed, noise, static_background: None };
        if r.script.background.drift == [0.0, 0.0] {
            r.static_background = Some(r.background(0));
        }
        r
    }

    pub fn script(&self) -> &Arc<SceneScript> {
        &self.script
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn background(&self, t: u64) -> Vec<u8> {
        let s = &*self.script;
        let bg = &s.background;
        let noise = self.noise.child(0);
        let (ox, oy) = (bg.drift[0] * t as f64, bg.drift[1] * t as f64);
        let mut out = Vec::with_capacity(s.width * s.height);
        for y in 0..s.height {
            let sy = (y as f64 - oy) / bg.cell;
            for x in 0..s.width {
                let n = noise.fractal((x as f64 - ox) / bg.cell, sy, bg.octaves);
                out.push((bg.mean + bg.contrast * (n - 0.5)).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    fn check(&self, t: u64) -> Result<(), SimError> {
        if t >= self.script.duration {
            return Err(SimError::FrameOutOfRange { frame: t, duration: self.script.duration });
        }
        Ok(())
    }

    /// The RGB image alone.
    pub fn frame(&self, t: u64) -> Result<RgbFrame, SimError> {
        self.check(t)?;
        Ok(self.compose(t, None))
    }

    /// Image plus ground-truth detections, depth and flow.
    pub fn render(&self, t: u64) -> Result<Rendered, SimError> {
        self.check(t)?;
        let s = &*self.script;
        let mut flow = DenseFlow::zeros(s.width, s.height);
        let drift = s.background.drift;
        flow.u.fill(drift[0] as f32);
        flow.v.fill(drift[1] as f32);
        let frame = self.compose(t, Some(&mut flow));
        Ok(Rendered { frame, detections: s.ground_truth_detections(t), depth: s.ground_truth_depth(t), flow })
    }

    fn compose(&self, t: u64, mut flow: Option<&mut DenseFlow>) -> RgbFrame {
        let s = &*self.script;
        let gray = match &self.static_background {
            Some(bg) => bg.clone(),
            None => self.background(t),
        };
        let mut rgb = Vec::with_capacity(gray.len() * 3);
        for g in gray {
            rgb.extend_from_slice(&[g, g, g]);
        }
        for state in s.state_at(t) {
            self.paint_sprite(t, &state, &mut rgb, flow.as_deref_mut());
        }
        RgbFrame::new(s.width, s.height, rgb, t).expect("script dimensions were validated")
    }

    fn paint_sprite(&self, t: u64, state: &SpriteState, rgb: &mut [u8], mut flow: Option<&mut DenseFlow>) {
        let s = &*self.script;
        let sprite = &s.sprites[state.sprite];
        let first = sprite.keyframes[0].bbox;
        let (w0, h0) = (first[2] - first[0], first[3] - first[1]);
        let noise = self.noise.child(1 + state.sprite as u64);
        let b = state.bbox;
        let next: Option<BBox> = sprite.at(t + 1).map(|(bb, _)| bb).filter(|_| t + 1 < s.duration);
        let (bw, bh) = (b.width(), b.height());
        for py in b.rows(s.height) {
            let v = (py as f64 - b.y_min) / bh;
            for px in b.columns(s.width) {
                let u = (px as f64 - b.x_min) / bw;
                let n = noise.fractal(u * w0 / sprite.texture_cell, v * h0 / sprite.texture_cell, SPRITE_OCTAVES);
                let base = sprite.mean + sprite.contrast * (n - 0.5);
                let i = py * s.width + px;
                for c in 0..3 {
                    rgb[3 * i + c] = (base * sprite.tint[c]).round().clamp(0.0, 255.0) as u8;
                }
                if let Some(f) = flow.as_deref_mut() {
                    let (du, dv) = match next {
                        Some(nb) => (nb.x_min + u * nb.width() - px as f64, nb.y_min + v * nb.height() - py as f64),
                        None => (0.0, 0.0),
                    };
                    f.u[i] = du as f32;
                    f.v[i] = dv as f32;
                }
            }
        }
    }
}

/// Renders frame `t` of `script` with texture seed `seed`.
pub fn render(script: &SceneScript, t: u64, seed: u64) -> Result<Rendered, SimError> {
    Renderer::new(Arc::new(script.clone()), seed).render(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Keyframe, Sprite};

    fn moving_script() -> SceneScript {
        let mut script = SceneScript::new("move", 12, 320, 240);
        script.sprites.push(Sprite::new(
            0,
            vec![
                Keyframe { frame: 0, bbox: [100.0, 100.0, 200.0, 200.0], depth: 150.0 },
                Keyframe { frame: 10, bbox: [130.0, 100.0, 230.0, 200.0], depth: 150.0 },
            ],
        ));
        script
    }

    #[test]
    fn deterministic() {
        let script = moving_script();
        let a = render(&script, 3, 9).unwrap();
        let b = render(&script, 3, 9).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.flow, b.flow);
        assert_ne!(render(&script, 3, 10).unwrap().frame, a.frame);
    }

    #[test]
    fn static_scene_has_zero_flow() {
        let mut script = moving_script();
        script.sprites[0].keyframes[1].bbox = script.sprites[0].keyframes[0].bbox;
        assert!(render(&script, 4, 1).unwrap().flow.is_zero());
    }

    #[test]
    fn sprite_flow_is_the_scripted_displacement() {
        let r = render(&moving_script(), 0, 1).unwrap();
        assert_eq!(r.detections[0].bbox, BBox::new(100.0, 100.0, 200.0, 200.0));
        assert_eq!(r.flow.get(150, 150), (3.0, 0.0));
        assert_eq!(r.flow.get(50, 50), (0.0, 0.0));
        assert_eq!(r.depth.get(150, 150), 150.0);
        // Last visible frame: the sprite is gone afterwards.
        assert_eq!(render(&moving_script(), 10, 1).unwrap().flow.get(150, 150), (0.0, 0.0));
    }

    #[test]
    fn drifting_background_translates() {
        let mut script = SceneScript::new("drift", 4, 64, 48);
        script.background.drift = [2.0, 0.0];
        let r0 = Renderer::new(Arc::new(script), 5);
        let (f0, f1) = (r0.frame(0).unwrap(), r0.frame(1).unwrap());
        for y in 0..48 {
            for x in 0..60 {
                assert_eq!(f0.pixel(x, y), f1.pixel(x + 2, y));
            }
        }
        assert_eq!(r0.render(0).unwrap().flow.get(10, 10), (2.0, 0.0));
    }

    #[test]
    fn out_of_range_frame() {
        assert!(matches!(render(&moving_script(), 12, 0), Err(SimError::FrameOutOfRange { .. })));
    }
}
