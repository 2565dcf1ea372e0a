//! Plane-sweep volumes.

use rayon::prelude::*;

use super::camera::Camera;
use super::homography::plane_homography;
use super::image::Image;
use super::levels::DepthLevels;
use super::warp::{warp_region, ValidityMask};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Rectangle of virtual-camera pixel coordinates. The origin may be negative
/// and the rectangle may extend past the image; rays through such pixels are
/// still well defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Viewport {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl Viewport {
    pub fn full(cam: &Camera) -> Self {
        Viewport {
            x0: 0,
            y0: 0,
            width: cam.width(),
            height: cam.height(),
        }
    }

    /// Sub-rectangle `(dx, dy, w, h)` expressed relative to this viewport.
    pub fn inner(&self, dx: usize, dy: usize, width: usize, height: usize) -> Viewport {
        Viewport {
            x0: self.x0 + dx as i64,
            y0: self.y0 + dy as i64,
            width,
            height,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlaneSweepVolume {
    planes: Vec<Image>,
    validity: Vec<ValidityMask>,
    source: Camera,
    virt: Camera,
    levels: DepthLevels,
    viewport: Viewport,
}

impl PlaneSweepVolume {
    pub fn planes(&self) -> &[Image] {
        &self.planes
    }

    pub fn validity(&self) -> &[ValidityMask] {
        &self.validity
    }

    pub fn source(&self) -> &Camera {
        &self.source
    }

    pub fn virtual_camera(&self) -> &Camera {
        &self.virt
    }

    pub fn levels(&self) -> &DepthLevels {
        &self.levels
    }

    pub fn viewport(&self) -> Viewport {
        self.viewport
    }

    pub fn depth_count(&self) -> usize {
        self.planes.len()
    }

    pub fn width(&self) -> usize {
        self.viewport.width
    }

    pub fn height(&self) -> usize {
        self.viewport.height
    }

    /// Volume as a `[D, 3, H, W]` tensor (planes along the batch axis).
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width(), self.height());
        let mut data = Vec::with_capacity(self.planes.len() * 3 * w * h);
        for p in &self.planes {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec(vec![self.planes.len(), 3, h, w], data).expect("plane sizes are uniform")
    }

    /// Sub-volume restricted to `(dx, dy, w, h)` of this volume's viewport.
    pub fn crop(&self, dx: usize, dy: usize, width: usize, height: usize) -> Result<PlaneSweepVolume> {
        if dx + width > self.width() || dy + height > self.height() {
            return Err(Error::Shape(format!(
                "crop ({dx},{dy},{width},{height}) exceeds volume {}x{}",
                self.width(),
                self.height()
            )));
        }
        let planes = self
            .planes
            .iter()
            .map(|p| p.crop(dx as i64, dy as i64, width, height))
            .collect();
        let validity = self
            .validity
            .iter()
            .map(|m| {
                let mut out = ValidityMask::new(width, height, false);
                for y in 0..height {
                    for x in 0..width {
                        if m.get(dx + x, dy + y) {
                            out.set(x, y, true);
                        }
                    }
                }
                out
            })
            .collect();
        Ok(PlaneSweepVolume {
            planes,
            validity,
            source: self.source.clone(),
            virt: self.virt.clone(),
            levels: self.levels.clone(),
            viewport: self.viewport.inner(dx, dy, width, height),
        })
    }

    /// Fraction of (pixel, plane) samples that fell inside the source image.
    pub fn coverage(&self) -> f64 {
        let total: usize = self.validity.iter().map(|m| m.width() * m.height()).sum();
        let valid: usize = self.validity.iter().map(|m| m.count_valid()).sum();
        valid as f64 / total as f64
    }

    fn check_invariants(&self) {
        assert_eq!(self.planes.len(), self.levels.len());
        for (p, m) in self.planes.iter().zip(&self.validity) {
            assert!(p.width() == self.viewport.width && p.height() == self.viewport.height);
            debug_assert!((0..p.height()).all(|y| (0..p.width())
                .all(|x| m.get(x, y) || (0..3).all(|c| p.get(x, y, c) == 0.0))));
        }
    }
}

/// Builds the full-resolution volume of `src` as seen from `virt`.
pub fn build_psv(src: &Image, source: &Camera, virt: &Camera, levels: &DepthLevels) -> Result<PlaneSweepVolume> {
    build_psv_viewport(src, source, virt, levels, Viewport::full(virt))
}

/// Builds the volume only over `viewport` of the virtual camera.
pub fn build_psv_viewport(
    src: &Image,
    source: &Camera,
    virt: &Camera,
    levels: &DepthLevels,
    viewport: Viewport,
) -> Result<PlaneSweepVolume> {
    if src.width() != source.width() || src.height() != source.height() {
        return Err(Error::Shape(format!(
            "source image {}x{} does not match camera {}x{}",
            src.width(),
            src.height(),
            source.width(),
            source.height()
        )));
    }
    let (planes, validity): (Vec<_>, Vec<_>) = levels
        .values()
        .par_iter()
        .map(|&d| {
            let h = plane_homography(source, virt, d);
            warp_region(src, &h, viewport.x0, viewport.y0, viewport.width, viewport.height)
        })
        .unzip();
    let psv = PlaneSweepVolume {
        planes,
        validity,
        source: source.clone(),
        virt: virt.clone(),
        levels: levels.clone(),
        viewport,
    };
    psv.check_invariants();
    Ok(psv)
}
