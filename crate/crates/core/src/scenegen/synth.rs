use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{PlaneSpec, RigSpec, SceneSpec};
use super::texture::Texture;
use crate::geometry::DepthLevels;

/// Where random layer depths are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthPlacement {
    /// Anywhere in the depth range.
    Continuous,
    /// Exactly on one of the given levels.
    OnLevels,
    /// Midway in inverse depth between two adjacent levels.
    BetweenLevels,
}

/// Random scenes made of an unbounded background plane and smaller
/// fronto-parallel rectangles in front of it, all with value-noise texture.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredSceneConfig {
    pub rig: RigSpec,
    pub levels: DepthLevels,
    pub placement: DepthPlacement,
    /// Total layer count including the background.
    pub layers: usize,
    /// Rectangle half-size as a fraction of the target's view at its depth.
    pub half_extent: [f64; 2],
    /// Texture cell size in target-view pixels.
    pub texture_pixels: [f64; 2],
}

impl LayeredSceneConfig {
    pub fn new(rig: RigSpec, levels: DepthLevels) -> Self {
        LayeredSceneConfig {
            rig,
            levels,
            placement: DepthPlacement::OnLevels,
            layers: 2,
            half_extent: [0.15, 0.35],
            texture_pixels: [3.0, 6.0],
        }
    }
}

fn inverse_mid(a: f64, b: f64) -> f64 {
    2.0 / (1.0 / a + 1.0 / b)
}

pub fn random_layered_scene(cfg: &LayeredSceneConfig, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lv = cfg.levels.values();
    let d = lv.len();
    let slots = match cfg.placement {
        DepthPlacement::BetweenLevels => d - 1,
        _ => d,
    };
    // distinct slot indices, sorted far to near
    let mut picks: Vec<usize> = Vec::new();
    while picks.len() < cfg.layers.min(slots) {
        let s = rng.random_range(0..slots);
        if !picks.contains(&s) {
            picks.push(s);
        }
    }
    picks.sort_unstable_by(|a, b| b.cmp(a));
    let depth_of = |s: usize, rng: &mut ChaCha8Rng| match cfg.placement {
        DepthPlacement::OnLevels => lv[s],
        DepthPlacement::BetweenLevels => inverse_mid(lv[s], lv[s + 1]),
        DepthPlacement::Continuous => {
            let (a, b) = (1.0 / cfg.levels.dmax(), 1.0 / cfg.levels.dmin());
            1.0 / rng.random_range(a..=b)
        }
    };
    let origin = cfg.rig.origin;
    let (w, h, f) = (cfg.rig.width as f64, cfg.rig.height as f64, cfg.rig.focal);
    let mut planes = Vec::new();
    for (i, &s) in picks.iter().enumerate() {
        let depth = depth_of(s, &mut rng);
        let z = depth - origin[2];
        let pixel = z / f;
        let texture = Texture::Noise {
            seed: rng.random(),
            scale: rng.random_range(cfg.texture_pixels[0]..=cfg.texture_pixels[1]) * pixel,
            octaves: 3,
            contrast: 2.0,
        };
        let (center, size) = if i == 0 {
            ([origin[0], origin[1]], None)
        } else {
            let hw = rng.random_range(cfg.half_extent[0]..=cfg.half_extent[1]) * w * pixel;
            let hh = rng.random_range(cfg.half_extent[0]..=cfg.half_extent[1]) * h * pixel;
            let cx = origin[0] + rng.random_range(-0.3..=0.3) * w * pixel;
            let cy = origin[1] + rng.random_range(-0.3..=0.3) * h * pixel;
            ([cx, cy], Some([2.0 * hw, 2.0 * hh]))
        };
        planes.push(PlaneSpec {
            depth,
            center,
            size,
            texture,
        });
    }
    SceneSpec {
        depth_range: [cfg.levels.dmin(), cfg.levels.dmax()],
        planes,
        boxes: Vec::new(),
        rig: cfg.rig.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Spacing;
    use crate::scenegen::RigLayout;

    fn cfg(placement: DepthPlacement) -> LayeredSceneConfig {
        let rig = RigSpec {
            width: 24,
            height: 24,
            focal: 24.0,
            origin: [0.0; 3],
            layout: RigLayout::Line { count: 5, baseline: 0.2 },
        };
        let mut c = LayeredSceneConfig::new(rig, DepthLevels::new(2.0, 20.0, 8, Spacing::InverseDepth).unwrap());
        c.placement = placement;
        c
    }

    #[test]
    fn layers_sit_where_requested() {
        for seed in 0..20 {
            let c = cfg(DepthPlacement::OnLevels);
            let s = random_layered_scene(&c, seed);
            assert_eq!(s.planes.len(), 2);
            assert!(s.planes[0].depth > s.planes[1].depth);
            assert!(s.planes.iter().all(|p| c.levels.values().contains(&p.depth)));
            s.validate().unwrap();
            let b = random_layered_scene(&cfg(DepthPlacement::BetweenLevels), seed);
            for p in &b.planes {
                let k = c.levels.values().iter().position(|&l| l > p.depth).unwrap();
                assert!(k > 0 && p.depth > c.levels[k - 1]);
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let c = cfg(DepthPlacement::Continuous);
        assert_eq!(random_layered_scene(&c, 5), random_layered_scene(&c, 5));
        assert_ne!(random_layered_scene(&c, 5), random_layered_scene(&c, 6));
    }
}
