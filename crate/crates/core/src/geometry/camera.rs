//! Pinhole cameras and the text camera-file format.
//!
//! A camera maps world points into its frame with `X_cam = R * X_world + t`
//! and projects with `u = fx * X/Z + cx`, `v = fy * Y/Z + cy`. Pixel centres
//! sit on integer coordinates.
//!
//! Camera file records are whitespace separated:
//!
//! ```text
//! # id w h fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz
//! cam left 64 48 60 60 31.5 23.5 1 0 0 0 1 0 0 0 1 0.5 0 0
//! ```

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera(format!("resolution {width}x{height}")));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera(format!("focal lengths fx={fx} fy={fy}")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite pose".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {:e})",
                gram.amax()
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidCamera(format!("rotation determinant {det}")));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera with identity rotation whose centre sits at `center` (world units).
    pub fn axis_aligned(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        center: Vector3<f64>,
    ) -> Result<Self> {
        Camera::new(width, height, fx, fy, cx, cy, Matrix3::identity(), -center)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn intrinsics_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a world point; returns `(u, v, depth)` or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// World point seen at pixel `(u, v)` with camera-frame depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let c = Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.rotation.transpose() * (c - self.translation)
    }

    /// Direction (in world frame) of the ray through `(u, v)`, scaled so that its
    /// camera-frame z component is 1; a ray parameter therefore equals depth.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation.transpose() * d
    }
}

/// A named camera as stored in a camera file.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRecord {
    pub id: String,
    pub camera: Camera,
}

/// Parses the camera text format. `source_name` is used in error messages.
pub fn parse_cameras(text: &str, source_name: &str) -> Result<Vec<CameraRecord>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len() as u64;
        let content = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields[0] != "cam" {
            return Err(Error::parse(
                source_name,
                line_offset,
                format!("expected record keyword `cam`, found `{}`", fields[0]),
            ));
        }
        if fields.len() != 20 {
            return Err(Error::parse(
                source_name,
                line_offset,
                format!("camera record needs 20 fields, found {}", fields.len()),
            ));
        }
        let id = fields[1].to_string();
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(source_name, line_offset, format!("bad integer `{s}`: {e}")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::parse(source_name, line_offset, format!("bad number `{s}`: {e}")))
        };
        let w = int(fields[2])?;
        let h = int(fields[3])?;
        let mut nums = [0.0f64; 16];
        for (slot, s) in nums.iter_mut().zip(&fields[4..]) {
            *slot = real(s)?;
        }
        let rotation = Matrix3::from_row_slice(&nums[4..13]);
        let translation = Vector3::new(nums[13], nums[14], nums[15]);
        let camera = Camera::new(w, h, nums[0], nums[1], nums[2], nums[3], rotation, translation)
            .map_err(|e| Error::parse(source_name, line_offset, e.to_string()))?;
        out.push(CameraRecord { id, camera });
    }
    Ok(out)
}

/// Serializes cameras; floats use shortest round-trip formatting so that
/// `parse_cameras(format_cameras(x)) == x` bit for bit.
pub fn format_cameras(records: &[CameraRecord]) -> String {
    let mut s = String::from("# cam id w h fx fy cx cy r00..r22 tx ty tz\n");
    for r in records {
        let c = &r.camera;
        let _ = write!(s, "cam {} {} {} {:?} {:?} {:?} {:?}", r.id, c.width, c.height, c.fx, c.fy, c.cx, c.cy);
        for i in 0..3 {
            for j in 0..3 {
                let _ = write!(s, " {:?}", c.rotation[(i, j)]);
            }
        }
        for i in 0..3 {
            let _ = write!(s, " {:?}", c.translation[i]);
        }
        s.push('\n');
    }
    s
}
