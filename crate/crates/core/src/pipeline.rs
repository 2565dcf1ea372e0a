//! Whole-view synthesis: tiling, per-tile volumes and inference, fusion,
//! the optional resampling pass, and mosaicking.
//!
//! The estimator consumes a volume `margin` pixels larger on each side than
//! the region it predicts, so each region's volumes are built over the
//! region grown by the margin; pixels outside the virtual image are still
//! valid rays. Regions have a fixed size and are clamped inside the image at
//! the right and bottom borders, while ownership of output pixels follows a
//! plain grid so every pixel is written by exactly one region.

use crate::autodiff::Tensor;
use crate::compositor::{fuse_pairs, synthesize_per_pair_tensors, FinalEstimate, PairEstimate};
use crate::error::{Error, Result};
use crate::geometry::{build_psv_viewport, Camera, DepthLevels, GrayMap, Image, PlaneSweepVolume, Spacing, Viewport};
use crate::multires::{pooled_pdf, resample_levels, threshold_range, DepthRange, MrConfig};
use crate::network::{DepthInference, DepthNet};
use crate::scenegen::DatasetSample;

/// Anything that turns a pair of plane-sweep volumes into a [`DepthInference`].
pub trait DepthEstimator: Sync {
    fn depths(&self) -> usize;
    /// Pixels lost on each side between the volume and the estimate.
    fn margin(&self) -> usize;
    /// Per-view representation, computed once per region and shared by pairs.
    fn features(&self, psv: &PlaneSweepVolume) -> Result<Tensor>;
    fn infer(&self, fa: &Tensor, fb: &Tensor) -> Result<DepthInference>;
}

impl DepthEstimator for DepthNet {
    fn depths(&self) -> usize {
        DepthNet::depths(self)
    }

    fn margin(&self) -> usize {
        self.arch().shrink() / 2
    }

    fn features(&self, psv: &PlaneSweepVolume) -> Result<Tensor> {
        self.extract_features(&psv.to_tensor())
    }

    fn infer(&self, fa: &Tensor, fb: &Tensor) -> Result<DepthInference> {
        self.infer_depth(&self.correlate(fa, fb)?)
    }
}

/// Classical plane-sweep matching: the pdf is a softmax of the negated
/// windowed colour difference between the two volumes. It is not learned
/// and serves as a reference estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotoConsistency {
    pub depths: usize,
    /// Softmax temperature on the matching cost.
    pub temperature: f64,
    /// Cost aggregation window radius.
    pub radius: usize,
}

/// Cost of a sample pair where either side fell outside its source image.
const INVALID_COST: f64 = 1.0;

impl PhotoConsistency {
    pub fn new(depths: usize) -> Self {
        PhotoConsistency {
            depths,
            temperature: 0.01,
            radius: 1,
        }
    }
}

impl DepthEstimator for PhotoConsistency {
    fn depths(&self) -> usize {
        self.depths
    }

    fn margin(&self) -> usize {
        0
    }

    /// `[D, 4, H, W]`: colour plus a validity channel.
    fn features(&self, psv: &PlaneSweepVolume) -> Result<Tensor> {
        let (d, w, h) = (psv.depth_count(), psv.width(), psv.height());
        let mut data = Vec::with_capacity(d * 4 * w * h);
        for (plane, mask) in psv.planes().iter().zip(psv.validity()) {
            data.extend_from_slice(plane.data());
            data.extend((0..w * h).map(|i| f64::from(u8::from(mask.get(i % w, i / w)))));
        }
        Tensor::from_vec(vec![d, 4, h, w], data)
    }

    fn infer(&self, fa: &Tensor, fb: &Tensor) -> Result<DepthInference> {
        let [d, c, h, w] = fa.dims4();
        if fa.shape() != fb.shape() || c != 4 || d != self.depths {
            return Err(Error::Shape(format!("photo-consistency features {:?} / {:?}", fa.shape(), fb.shape())));
        }
        let plane = h * w;
        let mut cost = vec![0.0; d * plane];
        for k in 0..d {
            let (a, b) = (&fa.data()[k * 4 * plane..], &fb.data()[k * 4 * plane..]);
            for p in 0..plane {
                cost[k * plane + p] = if a[3 * plane + p] > 0.0 && b[3 * plane + p] > 0.0 {
                    (0..3).map(|ch| (a[ch * plane + p] - b[ch * plane + p]).abs()).sum::<f64>() / 3.0
                } else {
                    INVALID_COST
                };
            }
        }
        let r = self.radius as i64;
        let mut raw = vec![0.0; (d + 3) * plane];
        let mut best = vec![f64::INFINITY; plane];
        for k in 0..d {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (mut s, mut n) = (0.0, 0.0);
                    for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                        for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                            s += cost[k * plane + (yy as usize) * w + xx as usize];
                            n += 1.0;
                        }
                    }
                    let p = y as usize * w + x as usize;
                    raw[k * plane + p] = -(s / n) / self.temperature;
                    best[p] = best[p].min(s / n);
                }
            }
        }
        for (p, b) in best.iter().enumerate() {
            raw[(d + 2) * plane + p] = -b / self.temperature;
        }
        DepthInference::from_head_output(&Tensor::from_vec(vec![1, d + 3, h, w], raw)?, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.width && y < self.y0 + self.height
    }
}

/// A computed region and the pixels of it that it owns in the mosaic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub computed: Rect,
    pub owned: Rect,
}

fn axis_tiles(len: usize, tile: usize) -> Vec<(usize, usize, usize)> {
    let t = tile.min(len);
    (0..len.div_ceil(t))
        .map(|i| {
            let own0 = i * t;
            let own_len = t.min(len - own0);
            (own0.min(len - t), own0, own_len)
        })
        .collect()
}

/// Grid of `tile x tile` regions (smaller only if the image is) covering a
/// `width x height` image; owned rectangles partition the image.
pub fn tile_grid(width: usize, height: usize, tile: usize) -> Vec<Tile> {
    let t = tile.max(1);
    let mut out = Vec::new();
    for &(cy, oy, oh) in &axis_tiles(height, t) {
        for &(cx, ox, ow) in &axis_tiles(width, t) {
            out.push(Tile {
                computed: Rect {
                    x0: cx,
                    y0: cy,
                    width: t.min(width),
                    height: t.min(height),
                },
                owned: Rect {
                    x0: ox,
                    y0: oy,
                    width: ow,
                    height: oh,
                },
            });
        }
    }
    out
}

/// Everything computed for one region.
#[derive(Clone, Debug)]
pub struct RegionResult {
    pub rect: Rect,
    pub levels: DepthLevels,
    pub inferences: Vec<DepthInference>,
    pub pairs: Vec<PairEstimate>,
    pub fused: FinalEstimate,
    /// `Σ_i O_i P_i`, `[D, h, w]`.
    pub fused_pdf: Tensor,
    /// Fraction of valid samples over the volumes used.
    pub coverage: f64,
}

/// Builds the volumes of `inputs` over `rect` grown by the estimator margin,
/// runs the estimator on every pair and fuses.
pub fn run_region(
    est: &dyn DepthEstimator,
    inputs: &[(&Image, &Camera)],
    target: &Camera,
    pairs: &[(usize, usize)],
    levels: &DepthLevels,
    rect: Rect,
) -> Result<RegionResult> {
    if pairs.is_empty() {
        return Err(Error::Config("no input pairs".into()));
    }
    if levels.len() != est.depths() {
        return Err(Error::Config(format!(
            "estimator expects {} depth levels, got {}",
            est.depths(),
            levels.len()
        )));
    }
    let m = est.margin();
    let viewport = Viewport {
        x0: rect.x0 as i64 - m as i64,
        y0: rect.y0 as i64 - m as i64,
        width: rect.width + 2 * m,
        height: rect.height + 2 * m,
    };
    let mut psvs: Vec<Option<PlaneSweepVolume>> = vec![None; inputs.len()];
    let mut feats: Vec<Option<Tensor>> = vec![None; inputs.len()];
    for &(a, b) in pairs {
        for i in [a, b] {
            let (img, cam) = *inputs
                .get(i)
                .ok_or_else(|| Error::Config(format!("pair refers to missing input {i}")))?;
            if psvs[i].is_none() {
                let psv = build_psv_viewport(img, cam, target, levels, viewport)?;
                feats[i] = Some(est.features(&psv)?);
                psvs[i] = Some(psv.crop(m, m, rect.width, rect.height)?);
            }
        }
    }
    let used: Vec<&PlaneSweepVolume> = psvs.iter().flatten().collect();
    let coverage = used.iter().map(|p| p.coverage()).sum::<f64>() / used.len() as f64;
    let mut inferences = Vec::new();
    let mut estimates = Vec::new();
    for &(a, b) in pairs {
        let inf = est.infer(feats[a].as_ref().expect("built"), feats[b].as_ref().expect("built"))?;
        let va = psvs[a].as_ref().expect("built").to_tensor();
        let vb = psvs[b].as_ref().expect("built").to_tensor();
        estimates.push(synthesize_per_pair_tensors(&va, &vb, &inf)?);
        inferences.push(inf);
    }
    let fused = fuse_pairs(&estimates)?;
    let (d, plane) = (levels.len(), rect.width * rect.height);
    let mut fused_pdf = vec![0.0; d * plane];
    for (i, inf) in inferences.iter().enumerate() {
        let o = &fused.weights.data()[i * plane..(i + 1) * plane];
        for k in 0..d {
            for p in 0..plane {
                fused_pdf[k * plane + p] += o[p] * inf.pdf.data()[k * plane + p];
            }
        }
    }
    Ok(RegionResult {
        rect,
        levels: levels.clone(),
        inferences,
        pairs: estimates,
        fused,
        fused_pdf: Tensor::from_vec(vec![d, rect.height, rect.width], fused_pdf)?,
        coverage,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisOptions {
    pub spacing: Spacing,
    /// Output region size of the first pass.
    pub tile: usize,
    pub mr: Option<MrConfig>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            spacing: Spacing::InverseDepth,
            tile: 32,
            mr: None,
        }
    }
}

/// Levels used for one owned rectangle of the output.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionRecord {
    pub owned: Rect,
    pub levels: DepthLevels,
    pub range: Option<DepthRange>,
}

/// Mosaicked outputs over the whole target view.
#[derive(Clone, Debug)]
pub struct ViewSynthesis {
    pub image: Image,
    /// Per-pair `Î`.
    pub pair_images: Vec<Image>,
    /// Per-pair normalized occlusion weights.
    pub pair_weights: Vec<GrayMap>,
    /// Per-pair confidence of the first image of the pair.
    pub pair_confidence: Vec<GrayMap>,
    /// Occlusion-weighted pdf, `[D, H, W]`, relative to each pixel's region levels.
    pub fused_pdf: Tensor,
    /// Depth of the most probable level of `fused_pdf`.
    pub argmax_depth: GrayMap,
    pub regions: Vec<RegionRecord>,
    /// The single-resolution result when the resampling pass ran.
    pub first_pass: Option<Box<ViewSynthesis>>,
    pub coverage: f64,
}

impl ViewSynthesis {
    fn empty(w: usize, h: usize, pairs: usize, depths: usize) -> Self {
        ViewSynthesis {
            image: Image::new(w, h),
            pair_images: vec![Image::new(w, h); pairs],
            pair_weights: vec![GrayMap::new(w, h); pairs],
            pair_confidence: vec![GrayMap::new(w, h); pairs],
            fused_pdf: Tensor::zeros(&[depths, h, w]),
            argmax_depth: GrayMap::new(w, h),
            regions: Vec::new(),
            first_pass: None,
            coverage: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn depths(&self) -> usize {
        self.fused_pdf.shape()[0]
    }

    /// Levels that apply at pixel `(x, y)`.
    pub fn levels_at(&self, x: usize, y: usize) -> &DepthLevels {
        &self
            .regions
            .iter()
            .find(|r| r.owned.contains(x, y))
            .expect("regions partition the view")
            .levels
    }

    /// Fused pdf at one pixel.
    pub fn pdf_at(&self, x: usize, y: usize) -> Vec<f64> {
        let (w, h) = (self.width(), self.height());
        (0..self.depths())
            .map(|k| self.fused_pdf.data()[(k * h + y) * w + x])
            .collect()
    }

    /// Argmax level index of the fused pdf, row-major.
    pub fn argmax_index(&self) -> Vec<usize> {
        let (w, h) = (self.width(), self.height());
        (0..w * h)
            .map(|p| {
                (0..self.depths())
                    .map(|k| self.fused_pdf.data()[k * w * h + p])
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (k, v)| if v > b.1 { (k, v) } else { b })
                    .0
            })
            .collect()
    }

    fn paste(&mut self, region: &RegionResult, owned: Rect, range: Option<DepthRange>) {
        let (w, h) = (self.width(), self.height());
        let r = region.rect;
        let plane = r.width * r.height;
        let d = region.levels.len();
        for y in owned.y0..owned.y0 + owned.height {
            for x in owned.x0..owned.x0 + owned.width {
                let (lx, ly) = (x - r.x0, y - r.y0);
                let lp = ly * r.width + lx;
                for c in 0..3 {
                    self.image.set(x, y, c, region.fused.image.get(lx, ly, c));
                }
                for (i, pe) in region.pairs.iter().enumerate() {
                    for c in 0..3 {
                        self.pair_images[i].set(x, y, c, pe.fused.get(lx, ly, c));
                    }
                    self.pair_weights[i].set(x, y, region.fused.weights.data()[i * plane + lp]);
                    self.pair_confidence[i].set(x, y, region.inferences[i].confidence.data()[lp]);
                }
                let mut best = (0, f64::NEG_INFINITY);
                for k in 0..d {
                    let v = region.fused_pdf.data()[k * plane + lp];
                    self.fused_pdf.data_mut()[(k * h + y) * w + x] = v;
                    if v > best.1 {
                        best = (k, v);
                    }
                }
                self.argmax_depth.set(x, y, region.levels[best.0]);
            }
        }
        self.regions.push(RegionRecord {
            owned,
            levels: region.levels.clone(),
            range,
        });
    }
}

/// Synthesizes `target` from `inputs` and the given pairs over `levels`.
pub fn synthesize_view(
    est: &dyn DepthEstimator,
    inputs: &[(&Image, &Camera)],
    target: &Camera,
    pairs: &[(usize, usize)],
    levels: &DepthLevels,
    opts: &SynthesisOptions,
) -> Result<ViewSynthesis> {
    if let Some(mr) = &opts.mr {
        mr.validate()?;
    }
    let (w, h) = (target.width(), target.height());
    let mut first = ViewSynthesis::empty(w, h, pairs.len(), levels.len());
    let mut cov = Vec::new();
    for tile in tile_grid(w, h, opts.tile) {
        let r = run_region(est, inputs, target, pairs, levels, tile.computed)?;
        cov.push(r.coverage);
        first.paste(&r, tile.owned, None);
    }
    first.coverage = cov.iter().sum::<f64>() / cov.len() as f64;
    let Some(mr) = opts.mr else {
        return Ok(first);
    };
    let pooled = pooled_pdf(&first.fused_pdf, mr.patch_size)?;
    let (ph, pw) = (pooled.shape()[1], pooled.shape()[2]);
    let mut second = ViewSynthesis::empty(w, h, pairs.len(), levels.len());
    let mut cov = Vec::new();
    for (i, tile) in tile_grid(w, h, mr.patch_size).into_iter().enumerate() {
        let (py, px) = (i / pw, i % pw);
        debug_assert!(py < ph);
        let vector: Vec<f64> = (0..levels.len())
            .map(|k| pooled.data()[(k * ph + py) * pw + px])
            .collect();
        let range = threshold_range(&vector, levels, mr.threshold)?;
        let new_levels = resample_levels(&range, levels, mr.spacing)?;
        let r = run_region(est, inputs, target, pairs, &new_levels, tile.computed)?;
        cov.push(r.coverage);
        second.paste(&r, tile.owned, Some(range));
    }
    second.coverage = cov.iter().sum::<f64>() / cov.len() as f64;
    second.first_pass = Some(Box::new(first));
    Ok(second)
}

/// [`synthesize_view`] for a dataset sample with levels spanning its depth range.
pub fn synthesize_sample(
    est: &dyn DepthEstimator,
    sample: &DatasetSample,
    pairs: &[(usize, usize)],
    opts: &SynthesisOptions,
) -> Result<ViewSynthesis> {
    let levels = DepthLevels::new(sample.depth_range.0, sample.depth_range.1, est.depths(), opts.spacing)?;
    let inputs: Vec<(&Image, &Camera)> = sample.inputs.iter().map(|v| (&v.image, &v.camera)).collect();
    synthesize_view(est, &inputs, &sample.target.camera, pairs, &levels, opts)
}
