//! Synthetic calibrated scenes: textured planes and boxes, camera rigs,
//! ray-cast rendering with exact depth, and dataset directories.

mod dataset;
mod scene;
mod synth;
mod texture;

pub use dataset::{make_kitti_like_sequence, make_sample, DatasetSample, DepthMap, View, DEPTH_MAGIC, DEPTH_VERSION};
pub use scene::{BoxSpec, GridInputs, PlaneSpec, RigCameras, RigLayout, RigSpec, SceneSpec};
pub use synth::{random_layered_scene, DepthPlacement, LayeredSceneConfig};
pub use texture::{value_noise, Texture};
