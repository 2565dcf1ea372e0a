use nalgebra::{Matrix3, Vector3};

use super::camera::Camera;

/// Homography induced by the plane `z = depth` of the virtual camera frame.
///
/// Maps homogeneous virtual-camera pixels to source-camera pixels. With
/// `R_rel = R_src R_virtᵀ` and `t_rel = t_src - R_rel t_virt`, a virtual-frame
/// point `X` on the plane (`nᵀX = depth`, `n = (0,0,1)ᵀ`) lands at
/// `R_rel X + t_rel = (R_rel + t_rel nᵀ / depth) X` in the source frame.
/// Writing `b = -t_rel` (the source centre expressed in the virtual frame,
/// rotated into the source frame) gives the familiar `R_rel - b nᵀ / depth`.
pub fn plane_homography(source: &Camera, virt: &Camera, depth: f64) -> Matrix3<f64> {
    debug_assert!(depth > 0.0, "plane depth must be positive");
    let r_rel = source.rotation() * virt.rotation().transpose();
    let t_rel = source.translation() - r_rel * virt.translation();
    let n = Vector3::new(0.0, 0.0, 1.0);
    let m = r_rel + t_rel * n.transpose() / depth;
    source.intrinsics() * m * virt.intrinsics_inverse()
}

/// The `depth -> infinity` limit, `K_src R_rel K_virt⁻¹`.
pub fn infinite_homography(source: &Camera, virt: &Camera) -> Matrix3<f64> {
    let r_rel = source.rotation() * virt.rotation().transpose();
    source.intrinsics() * r_rel * virt.intrinsics_inverse()
}

/// Scales `h` so that its bottom-right entry is 1 (or its largest entry, if that is ~0).
pub fn normalize(h: &Matrix3<f64>) -> Matrix3<f64> {
    let s = if h[(2, 2)].abs() > 1e-12 { h[(2, 2)] } else { h.amax() };
    h / s
}
