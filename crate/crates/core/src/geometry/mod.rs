//! Cameras, plane-induced homographies, warping and plane-sweep volumes.

mod camera;
mod homography;
mod image;
mod levels;
mod psv;
mod warp;

pub use camera::{format_cameras, parse_cameras, Camera, CameraRecord};
pub use homography::{infinite_homography, normalize as normalize_homography, plane_homography};
pub use image::{GrayMap, Image};
pub use levels::{DepthLevels, Spacing};
pub use psv::{build_psv, build_psv_viewport, PlaneSweepVolume, Viewport};
pub use warp::{sample_bilinear, warp_image, warp_region, ValidityMask, MIN_HOMOGENEOUS_W};
