use serde::{Deserialize, Serialize};

/// Procedural albedo over a 2-D surface parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid {
        color: [f64; 3],
    },
    Checker {
        size: f64,
        colors: [[f64; 3]; 2],
    },
    /// Per-channel value noise: `octaves` lattice layers, the first with cell
    /// size `scale`, each next one at half the cell size and half the weight.
    Noise {
        seed: u64,
        scale: f64,
        #[serde(default = "default_octaves")]
        octaves: u32,
        /// Gain applied around 0.5 before clamping to `[0, 1]`.
        #[serde(default = "default_contrast")]
        contrast: f64,
    },
}

fn default_octaves() -> u32 {
    3
}

fn default_contrast() -> f64 {
    2.0
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lattice value in `[0, 1)`.
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smooth value noise in `[0, 1)` with unit lattice spacing.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

impl Texture {
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        match *self {
            Texture::Solid { color } => color,
            Texture::Checker { size, colors } => {
                let parity = ((u / size).floor() as i64 + (v / size).floor() as i64).rem_euclid(2);
                colors[parity as usize]
            }
            Texture::Noise {
                seed,
                scale,
                octaves,
                contrast,
            } => {
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let ch_seed = splitmix(seed.wrapping_add(c as u64 * 0x51_7CC1));
                    let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0 / scale);
                    for oct in 0..octaves.max(1) {
                        sum += amp * value_noise(ch_seed.wrapping_add(oct as u64), u * freq, v * freq);
                        norm += amp;
                        amp *= 0.5;
                        freq *= 2.0;
                    }
                    *o = (0.5 + (sum / norm - 0.5) * contrast).clamp(0.0, 1.0);
                }
                out
            }
        }
    }
}
