/// Seeded, continuous 2D value noise.
///
/// Values on the integer lattice come from a hash of `(seed, i, j)` and are
/// blended with a quintic fade, so the field is C2-smooth and can be sampled
/// at any real position. Shifting the sample position shifts the pattern
/// exactly, which makes it a convenient texture for flow ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueNoise {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed: splitmix(seed) }
    }

    /// Derived generator for an independent stream.
    pub fn child(&self, stream: u64) -> Self {
        Self { seed: splitmix(self.seed ^ splitmix(stream.wrapping_add(1))) }
    }

    #[inline]
    fn lattice(&self, i: i64, j: i64) -> f64 {
        let h = splitmix(self.seed ^ (i as u64).wrapping_mul(0x517C_C1B7_2722_0A95) ^ (j as u64).wrapping_mul(0x6C8E_9CF5_7093_2BD5));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Single octave, in `[0, 1]`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (i, j) = (fx as i64, fy as i64);
        let (u, v) = (fade(x - fx), fade(y - fy));
        let a = self.lattice(i, j);
        let b = self.lattice(i + 1, j);
        let c = self.lattice(i, j + 1);
        let d = self.lattice(i + 1, j + 1);
        let top = a + (b - a) * u;
        let bottom = c + (d - c) * u;
        top + (bottom - top) * v
    }

    /// Sum of `octaves` octaves with halving amplitude, normalized to `[0, 1]`.
    pub fn fractal(&self, x: f64, y: f64, octaves: u32) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0;
        for o in 0..octaves.max(1) {
            total += amp * self.child(o as u64).sample(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        total / norm
    }
}
