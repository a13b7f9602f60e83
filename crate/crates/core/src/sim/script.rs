use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::imgproc::MIN_FRAME_SIDE;
use crate::perception::{coco, BBox, DepthMap, Detection, FAR_DEPTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Background {
    /// Lattice spacing of the coarsest noise octave, in pixels.
    pub cell: f64,
    pub octaves: u32,
    pub mean: f64,
    /// Peak-to-peak intensity swing.
    pub contrast: f64,
    /// Global translation per frame, pixels.
    pub drift: [f64; 2],
}

impl Default for Background {
    fn default() -> Self {
        Self { cell: 12.0, octaves: 3, mean: 128.0, contrast: 170.0, drift: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: u64,
    /// `[x_min, y_min, x_max, y_max]`.
    pub bbox: [f64; 4],
    pub depth: f32,
}

/// A textured rectangle. It exists from its first to its last keyframe and
/// moves linearly in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sprite {
    pub class_id: u8,
    #[serde(default = "Sprite::default_tint")]
    pub tint: [f64; 3],
    /// Noise lattice spacing at the sprite's first-keyframe size.
    #[serde(default = "Sprite::default_texture_cell")]
    pub texture_cell: f64,
    #[serde(default = "Sprite::default_mean")]
    pub mean: f64,
    #[serde(default = "Sprite::default_contrast")]
    pub contrast: f64,
    pub keyframes: Vec<Keyframe>,
}

impl Sprite {
    fn default_tint() -> [f64; 3] {
        [1.0, 1.0, 1.0]
    }
    fn default_texture_cell() -> f64 {
        7.0
    }
    fn default_mean() -> f64 {
        120.0
    }
    fn default_contrast() -> f64 {
        190.0
    }

    /// Sprite with default appearance.
    pub fn new(class_id: u8, keyframes: Vec<Keyframe>) -> Self {
        Self {
            class_id,
            tint: Self::default_tint(),
            texture_cell: Self::default_texture_cell(),
            mean: Self::default_mean(),
            contrast: Self::default_contrast(),
            keyframes,
        }
    }

    pub fn first_frame(&self) -> u64 {
        self.keyframes.first().map_or(0, |k| k.frame)
    }

    pub fn last_frame(&self) -> u64 {
        self.keyframes.last().map_or(0, |k| k.frame)
    }

    /// Interpolated box and depth, `None` outside the keyframe span.
    pub fn at(&self, t: u64) -> Option<(BBox, f32)> {
        let first = self.keyframes.first()?;
        let last = self.keyframes.last()?;
        if t < first.frame || t > last.frame {
            return None;
        }
        let i = self.keyframes.partition_point(|k| k.frame <= t);
        let a = &self.keyframes[i - 1];
        let Some(b) = self.keyframes.get(i) else {
            return Some((bbox_of(a.bbox), a.depth));
        };
        let s = (t - a.frame) as f64 / (b.frame - a.frame) as f64;
        let lerp = |p: f64, q: f64| p + (q - p) * s;
        let bbox = BBox::new(
            lerp(a.bbox[0], b.bbox[0]),
            lerp(a.bbox[1], b.bbox[1]),
            lerp(a.bbox[2], b.bbox[2]),
            lerp(a.bbox[3], b.bbox[3]),
        );
        Some((bbox, lerp(a.depth as f64, b.depth as f64) as f32))
    }
}

fn bbox_of(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpriteState {
    pub sprite: usize,
    pub class_id: u8,
    pub bbox: BBox,
    pub depth: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    #[serde(default)]
    pub name: String,
    pub duration: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub sprites: Vec<Sprite>,
}

impl SceneScript {
    /// Empty scene over the default background.
    pub fn new(name: &str, duration: u64, width: usize, height: usize) -> Self {
        Self { name: name.into(), duration, width, height, background: Background::default(), sprites: Vec::new() }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, SimError> {
        let script: SceneScript =
            toml::from_str(text).map_err(|e| SimError::Parse { path: origin.into(), message: e.to_string() })?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene scripts always serialize")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::Invalid(m));
        if self.duration == 0 {
            return invalid("duration must be at least one frame".into());
        }
        if self.width < MIN_FRAME_SIDE || self.height < MIN_FRAME_SIDE {
            return invalid(format!("frame {}x{} below {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}", self.width, self.height));
        }
        let bg = &self.background;
        if !(bg.cell > 0.0 && bg.cell.is_finite()) || !(1..=8).contains(&bg.octaves) {
            return invalid("background.cell must be positive and octaves in 1..=8".into());
        }
        if !bg.drift.iter().all(|d| d.is_finite()) {
            return invalid("background.drift must be finite".into());
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if s.class_id as usize >= coco::NUM_CLASSES {
                return invalid(format!("sprites[{i}].class_id {} outside 0..80", s.class_id));
            }
            if !(s.texture_cell > 0.0 && s.texture_cell.is_finite()) {
                return invalid(format!("sprites[{i}].texture_cell must be positive"));
            }
            if s.keyframes.is_empty() {
                return invalid(format!("sprites[{i}] has no keyframes"));
            }
            for (k, pair) in s.keyframes.windows(2).enumerate() {
                if pair[1].frame <= pair[0].frame {
                    return invalid(format!("sprites[{i}].keyframes[{}] frame does not increase", k + 1));
                }
            }
            for (k, kf) in s.keyframes.iter().enumerate() {
                let b = bbox_of(kf.bbox);
                if kf.frame >= self.duration {
                    return invalid(format!("sprites[{i}].keyframes[{k}] frame {} beyond duration", kf.frame));
                }
                if !b.is_well_formed() || !b.within(self.width, self.height) {
                    return invalid(format!("sprites[{i}].keyframes[{k}] box {:?} outside the frame", kf.bbox));
                }
                if !(kf.depth > 0.0 && kf.depth <= 255.0) {
                    return invalid(format!("sprites[{i}].keyframes[{k}] depth {} outside (0, 255]", kf.depth));
                }
            }
        }
        Ok(())
    }

    /// Visible sprites at frame `t`, farthest first.
    pub fn state_at(&self, t: u64) -> Vec<SpriteState> {
        let mut out: Vec<SpriteState> = self
            .sprites
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.at(t).map(|(bbox, depth)| SpriteState { sprite: i, class_id: s.class_id, bbox, depth }))
            .collect();
        out.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.sprite.cmp(&b.sprite)));
        out
    }

    pub fn ground_truth_detections(&self, t: u64) -> Vec<Detection> {
        self.state_at(t)
            .into_iter()
            .map(|s| Detection { bbox: s.bbox, class_id: s.class_id, score: 1.0 })
            .collect()
    }

    pub fn ground_truth_depth(&self, t: u64) -> DepthMap {
        let mut map = DepthMap::filled(self.width, self.height, FAR_DEPTH);
        for s in self.state_at(t) {
            map.paint_min(&s.bbox, s.depth);
        }
        map
    }
}
