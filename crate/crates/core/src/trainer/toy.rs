use serde::{Deserialize, Serialize};

use super::pairs::PairPolicy;
use super::train::{schedule_defaults, Phase, SceneStream, TrainConfig};
use crate::error::Result;
use crate::geometry::{DepthLevels, Spacing};
use crate::network::{ArchConfig, Trainable};
use crate::scenegen::{DepthPlacement, LayeredSceneConfig, RigLayout, RigSpec};

/// Desk-scale training setup: a five-camera line rig looking at two
/// value-noise layers, and the toy network trained on crops of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRecipe {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub baseline: f64,
    pub depth_range: [f64; 2],
    pub iterations: u64,
    pub unique_views: usize,
    pub patch: usize,
    pub lr: f64,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        ToyRecipe {
            width: 48,
            height: 48,
            focal: 48.0,
            baseline: 0.4,
            depth_range: [2.0, 12.0],
            iterations: 3_000,
            unique_views: 4,
            patch: 24,
            lr: 1e-3,
        }
    }
}

impl ToyRecipe {
    pub fn rig(&self) -> RigSpec {
        RigSpec {
            width: self.width,
            height: self.height,
            focal: self.focal,
            origin: [0.0; 3],
            layout: RigLayout::Line {
                count: 5,
                baseline: self.baseline,
            },
        }
    }

    pub fn levels(&self, depths: usize) -> Result<DepthLevels> {
        DepthLevels::new(self.depth_range[0], self.depth_range[1], depths, Spacing::InverseDepth)
    }

    /// Two layers placed exactly on the levels of a `depths`-level sweep.
    pub fn scene_config(&self, depths: usize) -> Result<LayeredSceneConfig> {
        let mut cfg = LayeredSceneConfig::new(self.rig(), self.levels(depths)?);
        cfg.placement = DepthPlacement::OnLevels;
        Ok(cfg)
    }

    pub fn stream(&self, depths: usize, seed: u64) -> Result<SceneStream> {
        Ok(SceneStream {
            config: self.scene_config(depths)?,
            seed,
        })
    }

    pub fn arch(&self, depths: usize) -> Result<ArchConfig> {
        ArchConfig::toy(depths)
    }

    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let (one, two) = schedule_defaults();
        let base = match phase {
            Phase::One16 => one,
            Phase::Two64 => two,
        };
        let mut cfg = TrainConfig {
            iterations: self.iterations,
            unique_views: self.unique_views,
            patch: self.patch,
            pairs: PairPolicy::Adjacent,
            ..base
        };
        cfg.adam.lr = self.lr;
        if phase == Phase::Two64 {
            cfg.trainable = Trainable::HEAD_ONLY;
        }
        cfg
    }
}
