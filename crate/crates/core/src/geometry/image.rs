//! RGB float images and single-channel maps.
//!
//! Images are stored planar (channel-major) so that they convert to
//! network tensors without shuffling.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Three-channel image with samples nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Image {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    /// Builds an image from planar data (`[channel][y][x]`).
    pub fn from_planar(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if data.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "expected {} samples for a {width}x{height} image, got {}",
                3 * width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite sample at index {bad}")));
        }
        Ok(Image { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut img = Image::new(width, height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies the rectangle `[x0, x0+w) x [y0, y0+h)`; pixels outside the image read as 0.
    pub fn crop(&self, x0: i64, y0: i64, w: usize, h: usize) -> Image {
        let mut out = Image::new(w, h);
        for c in 0..3 {
            for y in 0..h {
                let sy = y0 + y as i64;
                if sy < 0 || sy >= self.height as i64 {
                    continue;
                }
                for x in 0..w {
                    let sx = x0 + x as i64;
                    if sx < 0 || sx >= self.width as i64 {
                        continue;
                    }
                    out.set(x, y, c, self.get(sx as usize, sy as usize, c));
                }
            }
        }
        out
    }

    /// Rounds every sample to the nearest representable 8-bit level.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| f64::from(to_byte(v)) / 255.0)
                .collect(),
        }
    }

    /// `[1, 3, H, W]` tensor view of the image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![1, 3, self.height, self.width], self.data.clone())
            .expect("image data matches its shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::Shape(format!("expected [1,3,H,W] tensor, got {s:?}")));
        }
        Image::from_planar(s[3], s[2], t.data().to_vec())
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([
                to_byte(self.get(x, y, 0)),
                to_byte(self.get(x, y, 1)),
                to_byte(self.get(x, y, 2)),
            ])
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Image::from_fn(w, h, |x, y, c| {
            f64::from(img.get_pixel(x as u32, y as u32).0[c]) / 255.0
        })
    }

    /// Reads a PNG or binary PPM (P6, maxval 255) file.
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }

    /// Writes PNG or PPM depending on the file extension (`.ppm` selects PPM).
    pub fn save(&self, path: &Path) -> Result<()> {
        let rgb = self.to_rgb8();
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ppm") => image::ImageFormat::Pnm,
            _ => image::ImageFormat::Png,
        };
        rgb.save_with_format(path, format)?;
        Ok(())
    }
}

#[inline]
pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel real-valued map (confidence, occlusion weight, depth, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize) -> Self {
        GrayMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "expected {} values for a {width}x{height} map, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayMap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Grayscale PNG with `[lo, hi]` mapped linearly onto `[0, 255]`.
    pub fn save_png(&self, path: &Path, lo: f64, hi: f64) -> Result<()> {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = (self.get(x as usize, y as usize) - lo) / span;
            image::Luma([to_byte(v)])
        });
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}
