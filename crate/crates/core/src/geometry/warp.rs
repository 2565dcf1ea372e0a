//! Projective warping with bilinear sampling.

use nalgebra::Matrix3;

use super::image::Image;

/// Samples with a homogeneous weight at or below this are treated as invalid.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-12;

/// Per-pixel flag: true where the warp sampled inside the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        ValidityMask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_valid(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn fraction_valid(&self) -> f64 {
        self.count_valid() as f64 / self.bits.len() as f64
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }
}

/// Bilinear sample of `src` at real coordinates; `None` outside `[0,w-1]x[0,h-1]`.
#[inline]
pub fn sample_bilinear(src: &Image, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = (src.width(), src.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = (1.0 - fx) * src.get(x0, y0, c) + fx * src.get(x1, y0, c);
        let bottom = (1.0 - fx) * src.get(x0, y1, c) + fx * src.get(x1, y1, c);
        *o = (1.0 - fy) * top + fy * bottom;
    }
    Some(out)
}

/// Warps `src` into an `out_width x out_height` grid: output pixel `p` takes
/// the bilinear sample of `src` at `H p`.
pub fn warp_image(src: &Image, h: &Matrix3<f64>, out_width: usize, out_height: usize) -> (Image, ValidityMask) {
    warp_region(src, h, 0, 0, out_width, out_height)
}

/// Like [`warp_image`], but output pixel `(i, j)` corresponds to virtual pixel
/// `(x0 + i, y0 + j)`. The region may extend past the virtual image borders.
pub fn warp_region(
    src: &Image,
    h: &Matrix3<f64>,
    x0: i64,
    y0: i64,
    out_width: usize,
    out_height: usize,
) -> (Image, ValidityMask) {
    let mut out = Image::new(out_width, out_height);
    let mut mask = ValidityMask::new(out_width, out_height, false);
    for j in 0..out_height {
        let py = (y0 + j as i64) as f64;
        for i in 0..out_width {
            let px = (x0 + i as i64) as f64;
            let hx = h[(0, 0)] * px + h[(0, 1)] * py + h[(0, 2)];
            let hy = h[(1, 0)] * px + h[(1, 1)] * py + h[(1, 2)];
            let hw = h[(2, 0)] * px + h[(2, 1)] * py + h[(2, 2)];
            if hw <= MIN_HOMOGENEOUS_W {
                continue;
            }
            if let Some(rgb) = sample_bilinear(src, hx / hw, hy / hw) {
                for (c, v) in rgb.iter().enumerate() {
                    out.set(i, j, c, *v);
                }
                mask.bits[j * out_width + i] = true;
            }
        }
    }
    (out, mask)
}
