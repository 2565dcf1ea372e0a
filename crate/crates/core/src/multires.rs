//! Adaptive depth resampling.
//!
//! The first-pass pdf is averaged over square patches; the levels whose
//! pooled probability reaches the threshold bound a narrower depth range,
//! and the patch is swept again with the same number of levels inside it.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{DepthLevels, Spacing};

/// Thresholds outside this band are rejected.
pub const THRESHOLD_BAND: (f64, f64) = (1.0 / 200.0, 1.0 / 30.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrConfig {
    pub patch_size: usize,
    pub threshold: f64,
    pub spacing: Spacing,
}

impl Default for MrConfig {
    fn default() -> Self {
        MrConfig {
            patch_size: 32,
            threshold: 1.0 / 100.0,
            spacing: Spacing::InverseDepth,
        }
    }
}

impl MrConfig {
    pub fn new(patch_size: usize, threshold: f64, spacing: Spacing) -> Result<Self> {
        let cfg = MrConfig {
            patch_size,
            threshold,
            spacing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Config("mr patch size must be at least 1".into()));
        }
        let (lo, hi) = THRESHOLD_BAND;
        if !(self.threshold >= lo && self.threshold <= hi) {
            return Err(Error::Config(format!(
                "mr threshold {} outside [{lo}, {hi}]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Patch-averaged pdf: `[D, H, W]` to `[D, ceil(H/p), ceil(W/p)]`.
///
/// Partial border patches are padded by replicating the last row/column, so
/// every pooled vector is a mean over exactly `p * p` pdf vectors.
pub fn pooled_pdf(pdf: &Tensor, patch: usize) -> Result<Tensor> {
    if pdf.rank() != 3 || patch == 0 {
        return Err(Error::Shape(format!("pooling needs a [D, H, W] pdf and patch >= 1, got {:?}", pdf.shape())));
    }
    let (d, h, w) = (pdf.shape()[0], pdf.shape()[1], pdf.shape()[2]);
    let (ph, pw) = (h.div_ceil(patch), w.div_ceil(patch));
    let mut out = vec![0.0; d * ph * pw];
    let scale = 1.0 / (patch * patch) as f64;
    for k in 0..d {
        let plane = &pdf.data()[k * h * w..(k + 1) * h * w];
        for py in 0..ph {
            for px in 0..pw {
                let mut s = 0.0;
                for y in py * patch..(py + 1) * patch {
                    let row = &plane[y.min(h - 1) * w..];
                    for x in px * patch..(px + 1) * patch {
                        s += row[x.min(w - 1)];
                    }
                }
                out[(k * ph + py) * pw + px] = s * scale;
            }
        }
    }
    Tensor::from_vec(vec![d, ph, pw], out)
}

/// How a resampled range was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeRule {
    /// First and last passing levels.
    Passing,
    /// One level passed; widened to its neighbours.
    SingleExpanded,
    /// Nothing passed; original range kept.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub lo: f64,
    pub hi: f64,
    pub rule: RangeRule,
    /// First and last level indices whose probability passed.
    pub passing: Option<(usize, usize)>,
}

pub fn threshold_range(pooled: &[f64], levels: &DepthLevels, threshold: f64) -> Result<DepthRange> {
    if pooled.len() != levels.len() {
        return Err(Error::Shape(format!("{} pooled values for {} levels", pooled.len(), levels.len())));
    }
    let first = pooled.iter().position(|&p| p >= threshold);
    let last = pooled.iter().rposition(|&p| p >= threshold);
    let d = levels.len();
    Ok(match (first, last) {
        (Some(a), Some(b)) if a == b => DepthRange {
            lo: levels[a.saturating_sub(1)],
            hi: levels[(a + 1).min(d - 1)],
            rule: RangeRule::SingleExpanded,
            passing: Some((a, b)),
        },
        (Some(a), Some(b)) => DepthRange {
            lo: levels[a],
            hi: levels[b],
            rule: RangeRule::Passing,
            passing: Some((a, b)),
        },
        _ => DepthRange {
            lo: levels.dmin(),
            hi: levels.dmax(),
            rule: RangeRule::Fallback,
            passing: None,
        },
    })
}

/// Levels for the second pass: same count, inside `range`. A zero-width
/// range is widened by 5 % of its depth each way, clamped to `original`.
pub fn resample_levels(range: &DepthRange, original: &DepthLevels, spacing: Spacing) -> Result<DepthLevels> {
    if range.rule == RangeRule::Fallback {
        return Ok(original.clone());
    }
    let (mut lo, mut hi) = (range.lo, range.hi);
    if hi <= lo {
        lo = (lo * 0.95).max(original.dmin());
        hi = (hi * 1.05).min(original.dmax());
    }
    DepthLevels::new(lo, hi, original.len(), spacing)
}
