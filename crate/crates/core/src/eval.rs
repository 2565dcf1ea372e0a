//! Image metrics and evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compositor::l1_loss;
use crate::error::{Error, Result};
use crate::geometry::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the window shrinks to the largest odd size
/// that fits `limit` pixels.
fn gaussian_taps(limit: usize) -> Vec<f64> {
    let mut n = SSIM_WINDOW.min(limit);
    if n % 2 == 0 {
        n -= 1;
    }
    let c = (n / 2) as f64;
    let raw: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filter of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over valid Gaussian windows, averaged over the
/// three channels. Intensities are taken to span `[0, 1]`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::Shape(format!(
            "ssim of {}x{} and {}x{} images",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    if w == 0 || h == 0 {
        return Err(Error::Shape("ssim of an empty image".into()));
    }
    let taps = gaussian_taps(w.min(h));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let (pa, pb) = (a.channel(c), b.channel(c));
        let prod = |f: &dyn Fn(f64, f64) -> f64| pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        let (mu_a, ow, oh) = filter_valid(pa, w, h, &taps);
        let (mu_b, ..) = filter_valid(pb, w, h, &taps);
        let (aa, ..) = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
        let (bb, ..) = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
        let (ab, ..) = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
        let mut s = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

/// Metrics of one synthesized view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view_id: String,
    pub l1_x255: f64,
    pub ssim: f64,
    pub pairs_used: usize,
    pub mr: bool,
    pub depths: usize,
}

impl ViewMetrics {
    pub fn measure(view_id: &str, pred: &Image, gt: &Image, pairs_used: usize, mr: bool, depths: usize) -> Result<Self> {
        Ok(ViewMetrics {
            view_id: view_id.to_string(),
            l1_x255: l1_loss(pred, gt)?.mean_x255,
            ssim: ssim(pred, gt)?,
            pairs_used,
            mr,
            depths,
        })
    }
}

pub const REPORT_HEADER: &str = "view_id,l1_x255,ssim,pairs_used,mr,depths";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    /// Settings the views were produced with, echoed verbatim.
    pub config: BTreeMap<String, String>,
    pub runtime_secs: f64,
}

impl EvalReport {
    pub fn mean_l1_x255(&self) -> f64 {
        self.views.iter().map(|v| v.l1_x255).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.views.iter().map(|v| v.ssim).sum::<f64>() / self.views.len().max(1) as f64
    }

    /// One row per view; floats use the shortest exact representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for v in &self.views {
            out.push_str(&format!(
                "{},{:?},{:?},{},{},{}\n",
                v.view_id, v.l1_x255, v.ssim, v.pairs_used, v.mr, v.depths
            ));
        }
        out
    }

    pub fn views_from_csv(text: &str, source_name: &str) -> Result<Vec<ViewMetrics>> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::parse(source_name, 0, format!("expected header `{REPORT_HEADER}`")));
        }
        let mut offset = REPORT_HEADER.len() + 1;
        let mut views = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let bad = |m: &str| Error::parse(source_name, offset as u64, m.to_string());
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            views.push(ViewMetrics {
                view_id: f[0].to_string(),
                l1_x255: f[1].parse().map_err(|_| bad("bad l1_x255"))?,
                ssim: f[2].parse().map_err(|_| bad("bad ssim"))?,
                pairs_used: f[3].parse().map_err(|_| bad("bad pairs_used"))?,
                mr: f[4].parse().map_err(|_| bad("bad mr"))?,
                depths: f[5].parse().map_err(|_| bad("bad depths"))?,
            });
            offset += line.len() + 1;
        }
        Ok(views)
    }

    /// Writes `<stem>.csv` with the per-view rows and `<stem>.json` with the
    /// full report including aggregates.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv())?;
        let summary = serde_json::json!({
            "views": self.views,
            "mean_l1_x255": self.mean_l1_x255(),
            "mean_ssim": self.mean_ssim(),
            "config": self.config,
            "runtime_secs": self.runtime_secs,
        });
        let mut f = std::fs::File::create(csv_path.with_extension("json"))?;
        serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| Error::Config(e.to_string()))?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _, _| rng.random())
    }

    /// Direct 2-D windowed SSIM with one normalized 2-D Gaussian.
    fn ssim_loop(a: &Image, b: &Image) -> f64 {
        let limit = a.width().min(a.height()).min(11);
        let n = if limit % 2 == 0 { limit - 1 } else { limit };
        let c = (n / 2) as f64;
        let mut g = vec![vec![0.0; n]; n];
        let mut gs = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5)).exp();
                gs += *v;
            }
        }
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut total = 0.0;
        for ch in 0..3 {
            let mut s = 0.0;
            let mut count = 0;
            for y0 in 0..=a.height() - n {
                for x0 in 0..=a.width() - n {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            let wgt = g[i][j] / gs;
                            let x = a.get(x0 + j, y0 + i, ch);
                            let y = b.get(x0 + j, y0 + i, ch);
                            ma += wgt * x;
                            mb += wgt * y;
                            aa += wgt * x * x;
                            bb += wgt * y * y;
                            ab += wgt * x * y;
                        }
                    }
                    let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                    s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += s / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn identity_and_symmetry() {
        let a = random_image(20, 17, 1);
        let b = random_image(20, 17, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &random_image(20, 16, 2)).is_err());
    }

    #[test]
    fn constant_images_closed_form() {
        let a = Image::from_fn(16, 16, |_, _, _| 0.3);
        let b = Image::from_fn(16, 16, |_, _, _| 0.7);
        let c1 = 1e-4;
        let expect = (2.0 * 0.3 * 0.7 + c1) / (0.09 + 0.49 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn matches_windowed_loop() {
        for (w, h, seed) in [(23, 19, 3), (11, 11, 4), (8, 12, 5), (5, 5, 6)] {
            let a = random_image(w, h, seed);
            let b = Image::from_fn(w, h, |x, y, c| 0.5 * a.get(x, y, c) + 0.1 * ((x + y + c) % 3) as f64);
            let s = ssim(&a, &b).unwrap();
            assert!((s - ssim_loop(&a, &b)).abs() < 1e-9, "{w}x{h}");
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn l1_metric_is_scaled_loss() {
        let a = random_image(9, 7, 7);
        let b = random_image(9, 7, 8);
        let m = ViewMetrics::measure("v", &a, &b, 3, false, 16).unwrap();
        let sum = l1_loss(&a, &b).unwrap().sum;
        assert!((m.l1_x255 - sum / (9.0 * 7.0 * 3.0) * 255.0).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let report = EvalReport {
            views: vec![
                ViewMetrics::measure("a", &random_image(12, 12, 1), &random_image(12, 12, 2), 3, true, 64).unwrap(),
                ViewMetrics::measure("b", &random_image(12, 12, 3), &random_image(12, 12, 4), 1, false, 16).unwrap(),
            ],
            ..EvalReport::default()
        };
        let back = EvalReport::views_from_csv(&report.to_csv(), "r.csv").unwrap();
        assert_eq!(back, report.views);
        let err = EvalReport::views_from_csv("view_id,l1_x255,ssim,pairs_used,mr,depths\na,1,2\n", "r.csv");
        assert!(matches!(err, Err(Error::Parse { .. })));
    }
}
