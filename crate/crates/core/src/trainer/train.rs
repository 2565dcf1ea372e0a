use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pairs::{build_pairs, PairPolicy};
use crate::autodiff::{adam_step, AdamConfig, Clipping, OptimizerState, Tape, Tensor};
use crate::compositor::{fuse_pairs_tape, synthesize_pair_tape};
use crate::error::{Error, Result};
use crate::geometry::{build_psv_viewport, DepthLevels, Spacing, Viewport};
use crate::multires::{pooled_pdf, resample_levels, threshold_range, MrConfig};
use crate::network::{ArchConfig, DepthNet, Trainable};
use crate::pipeline::Rect;
use crate::scenegen::{make_sample, random_layered_scene, DatasetSample, LayeredSceneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// All sub-networks, 16 depth levels.
    One16,
    /// Head only on top of phase-one features, 64 depth levels.
    Two64,
}

impl Phase {
    pub fn depths(self) -> usize {
        match self {
            Phase::One16 => 16,
            Phase::Two64 => 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub iterations: u64,
    /// Distinct target views per minibatch.
    pub unique_views: usize,
    /// Pairs per view the minibatch size is quoted for.
    pub pairs_per_view: usize,
    /// Share of each minibatch re-presented with resampled depth levels.
    pub mr_fraction: f64,
    pub adam: AdamConfig,
    pub trainable: Trainable,
    pub seed: u64,
    /// Side of the square input crop fed to the network.
    pub patch: usize,
    pub pairs: PairPolicy,
    /// Crops whose volumes hold fewer valid samples are redrawn.
    pub min_coverage: f64,
    pub mr: MrConfig,
    pub spacing: Spacing,
}

impl TrainConfig {
    pub fn minibatch_pairs(&self) -> usize {
        self.unique_views * self.pairs_per_view
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.mr_fraction) {
            return bad(format!("mr fraction {} outside [0, 1]", self.mr_fraction));
        }
        if self.unique_views == 0 || self.pairs_per_view == 0 {
            return bad("minibatch needs at least one view and one pair".into());
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.adam.lr));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad(format!("minimum coverage {} outside [0, 1]", self.min_coverage));
        }
        self.mr.validate()
    }

    /// Views re-presented from the previous minibatch.
    pub fn mr_views(&self) -> usize {
        (self.mr_fraction * self.unique_views as f64).floor() as usize
    }
}

/// The full-length schedule, recorded for reference only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullScaleSchedule {
    pub phase_one_iterations: u64,
    pub phase_two_iterations: u64,
}

pub const FULL_SCALE: FullScaleSchedule = FullScaleSchedule {
    phase_one_iterations: 1_000_000,
    phase_two_iterations: 250_000,
};

/// Desk-scale phase configurations (5k and 2k iterations, not the
/// full-scale counts in [`FULL_SCALE`]).
pub fn schedule_defaults() -> (TrainConfig, TrainConfig) {
    let one = TrainConfig {
        phase: Phase::One16,
        iterations: 5_000,
        unique_views: 16,
        pairs_per_view: 3,
        mr_fraction: 0.5,
        adam: AdamConfig {
            lr: 1e-5,
            clipping: Clipping::GlobalNorm(1.0),
            ..AdamConfig::default()
        },
        trainable: Trainable::ALL,
        seed: 0,
        patch: 112,
        pairs: PairPolicy::Adjacent,
        min_coverage: 0.3,
        mr: MrConfig::default(),
        spacing: Spacing::InverseDepth,
    };
    let two = TrainConfig {
        phase: Phase::Two64,
        iterations: 2_000,
        trainable: Trainable::HEAD_ONLY,
        ..one.clone()
    };
    (one, two)
}

/// Supplies training samples by index.
pub trait SampleSource: Sync {
    fn sample(&self, index: u64) -> Result<DatasetSample>;
}

/// Cycles through a fixed list.
pub struct SampleList(pub Vec<DatasetSample>);

impl SampleSource for SampleList {
    fn sample(&self, index: u64) -> Result<DatasetSample> {
        if self.0.is_empty() {
            return Err(Error::Config("empty sample list".into()));
        }
        Ok(self.0[(index % self.0.len() as u64) as usize].clone())
    }
}

/// Fresh random layered scene for every index.
pub struct SceneStream {
    pub config: LayeredSceneConfig,
    pub seed: u64,
}

impl SampleSource for SceneStream {
    fn sample(&self, index: u64) -> Result<DatasetSample> {
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index;
        make_sample(&random_layered_scene(&self.config, seed))
    }
}

/// One target view of a minibatch.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub sample: Arc<DatasetSample>,
    pub pairs: Vec<(usize, usize)>,
    /// Output region in target pixels.
    pub rect: Rect,
    pub levels: DepthLevels,
    pub resampled: bool,
}

/// Loss and fused pdf of one forward/backward pass.
pub struct ItemResult {
    pub loss: f64,
    pub gradients: Vec<Tensor>,
    /// `Σ_i O_i P_i` over the region, `[D, h, w]`.
    pub fused_pdf: Tensor,
}

/// Records one training view on a fresh tape and backpropagates the L1 loss.
pub fn forward_backward(net: &DepthNet, trainable: Trainable, item: &TrainItem) -> Result<ItemResult> {
    let margin = net.arch().shrink() / 2;
    let r = item.rect;
    let viewport = Viewport {
        x0: r.x0 as i64 - margin as i64,
        y0: r.y0 as i64 - margin as i64,
        width: r.width + 2 * margin,
        height: r.height + 2 * margin,
    };
    let s = &item.sample;
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, trainable);
    let mut feats = vec![None; s.inputs.len()];
    let mut volumes = vec![None; s.inputs.len()];
    for &(a, b) in &item.pairs {
        for i in [a, b] {
            if feats[i].is_none() {
                let v = &s.inputs[i];
                let psv = build_psv_viewport(&v.image, &v.camera, &s.target.camera, &item.levels, viewport)?;
                let full = tape.constant(psv.to_tensor());
                feats[i] = Some(net.features_tape(&mut tape, &vars, full)?);
                volumes[i] = Some(tape.constant(psv.crop(margin, margin, r.width, r.height)?.to_tensor()));
            }
        }
    }
    let mut fused = Vec::new();
    let mut logits = Vec::new();
    let mut pdfs = Vec::new();
    for &(a, b) in &item.pairs {
        let inf = net.pair_tape(&mut tape, &vars, feats[a].expect("built"), feats[b].expect("built"))?;
        let pair = synthesize_pair_tape(
            &mut tape,
            volumes[a].expect("built"),
            volumes[b].expect("built"),
            inf.pdf,
            inf.confidence,
        )?;
        fused.push(pair.fused);
        logits.push(inf.occlusion_logit);
        pdfs.push(inf.pdf);
    }
    let (image, weights) = fuse_pairs_tape(&mut tape, &fused, &logits)?;
    let gt = s.target.image.crop(r.x0 as i64, r.y0 as i64, r.width, r.height).to_tensor();
    let gt = tape.constant(gt);
    let loss = tape.l1(image, gt)?;
    let loss_value = tape.value(loss).data()[0];

    let d = item.levels.len();
    let plane = r.width * r.height;
    let mut fused_pdf = vec![0.0; d * plane];
    let w = tape.value(weights).data();
    for (i, &p) in pdfs.iter().enumerate() {
        let pv = tape.value(p).data();
        for k in 0..d {
            for q in 0..plane {
                fused_pdf[k * plane + q] += w[i * plane + q] * pv[k * plane + q];
            }
        }
    }
    let mut grads = tape.backward(loss)?;
    Ok(ItemResult {
        loss: loss_value,
        gradients: net.collect_gradients(&vars, &mut grads),
        fused_pdf: Tensor::from_vec(vec![d, r.height, r.width], fused_pdf)?,
    })
}

/// Per-iteration record of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Sum of per-view L1 sums.
    pub loss: f64,
    /// Mean per-pixel, per-channel L1 scaled by 255.
    pub loss_x255: f64,
    pub grad_norm: f64,
    pub grad_norm_clipped: f64,
    pub resampled_views: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,loss,loss_x255,grad_norm,grad_norm_clipped,resampled_views")?;
        for r in &self.records {
            writeln!(
                f,
                "{},{:?},{:?},{:?},{:?},{}",
                r.iteration, r.loss, r.loss_x255, r.grad_norm, r.grad_norm_clipped, r.resampled_views
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Region size produced by the network for an input crop of side `patch`.
fn output_side(net: &DepthNet, patch: usize) -> Result<usize> {
    net.arch().output_size(patch)
}

fn fresh_item(
    net: &DepthNet,
    cfg: &TrainConfig,
    source: &dyn SampleSource,
    index: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainItem> {
    let sample = Arc::new(source.sample(index)?);
    let pairs = build_pairs(&sample, cfg.pairs)?;
    let levels = DepthLevels::new(sample.depth_range.0, sample.depth_range.1, net.depths(), cfg.spacing)?;
    let cam = &sample.target.camera;
    let o = output_side(net, cfg.patch)?;
    let (ow, oh) = (o.min(cam.width()), o.min(cam.height()));
    let margin = net.arch().shrink() / 2;
    let mut rect = Rect {
        x0: 0,
        y0: 0,
        width: ow,
        height: oh,
    };
    const ATTEMPTS: usize = 8;
    for attempt in 0..ATTEMPTS {
        rect.x0 = rng.random_range(0..=cam.width() - ow);
        rect.y0 = rng.random_range(0..=cam.height() - oh);
        let vp = Viewport {
            x0: rect.x0 as i64 - margin as i64,
            y0: rect.y0 as i64 - margin as i64,
            width: ow + 2 * margin,
            height: oh + 2 * margin,
        };
        let mut cov = 0.0;
        let used: std::collections::BTreeSet<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        for &i in &used {
            let v = &sample.inputs[i];
            cov += build_psv_viewport(&v.image, &v.camera, cam, &levels, vp)?.coverage();
        }
        if cov / used.len() as f64 >= cfg.min_coverage || attempt + 1 == ATTEMPTS {
            break;
        }
    }
    Ok(TrainItem {
        sample,
        pairs,
        rect,
        levels,
        resampled: false,
    })
}

/// Same sample and region with levels narrowed from the region's fused pdf.
fn resampled_item(prev: &TrainItem, fused_pdf: &Tensor, cfg: &TrainConfig) -> Result<TrainItem> {
    let side = fused_pdf.shape()[1].max(fused_pdf.shape()[2]);
    let pooled = pooled_pdf(fused_pdf, side)?;
    let range = threshold_range(pooled.data(), &prev.levels, cfg.mr.threshold)?;
    let original = DepthLevels::new(
        prev.sample.depth_range.0,
        prev.sample.depth_range.1,
        prev.levels.len(),
        cfg.spacing,
    )?;
    let clamped = crate::multires::DepthRange {
        lo: range.lo.max(original.dmin()),
        hi: range.hi.min(original.dmax()),
        ..range
    };
    Ok(TrainItem {
        levels: resample_levels(&clamped, &original, cfg.mr.spacing)?,
        resampled: true,
        ..prev.clone()
    })
}

/// Runs `cfg.iterations` optimizer steps on `net`.
///
/// A non-finite loss or gradient aborts with an error and leaves `net` at
/// the last good state.
pub fn train_phase(
    net: &mut DepthNet,
    source: &dyn SampleSource,
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationRecord, &DepthNet),
) -> Result<TrainReport> {
    cfg.validate()?;
    let which = cfg.trainable;
    let shapes = net.param_shapes(which);
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = OptimizerState::new(cfg.adam, &shape_refs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut previous: Vec<(TrainItem, Tensor)> = Vec::new();
    let mut next_index = 0u64;
    for iteration in 0..cfg.iterations {
        let mut items = Vec::with_capacity(cfg.unique_views);
        for (prev, pdf) in previous.iter().filter(|(it, _)| !it.resampled).take(cfg.mr_views()) {
            items.push(resampled_item(prev, pdf, cfg)?);
        }
        while items.len() < cfg.unique_views {
            items.push(fresh_item(net, cfg, source, next_index, &mut rng)?);
            next_index += 1;
        }
        let frozen: &DepthNet = net;
        let results: Vec<ItemResult> = items
            .par_iter()
            .map(|it| forward_backward(frozen, which, it))
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut values = 0usize;
        let mut grads: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for (it, res) in items.iter().zip(&results) {
            loss += res.loss;
            values += 3 * it.rect.width * it.rect.height;
            for (g, r) in grads.iter_mut().zip(&res.gradients) {
                g.add_assign(r);
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iteration as usize });
        }
        let mut params = net.params_mut(which);
        let step = adam_step(&mut params, grads, &mut opt)?;
        let record = IterationRecord {
            iteration,
            loss,
            loss_x255: loss / values as f64 * 255.0,
            grad_norm: step.norm_before,
            grad_norm_clipped: step.norm_after,
            resampled_views: items.iter().filter(|i| i.resampled).count(),
        };
        log::debug!(
            "iteration {iteration}: loss x255 {:.3}, |g| {:.3e}",
            record.loss_x255,
            record.grad_norm
        );
        on_iteration(&record, net);
        report.records.push(record);
        previous = items.into_iter().zip(results.into_iter().map(|r| r.fused_pdf)).collect();
    }
    Ok(report)
}

/// Phase-two network: fresh head for `arch`, feature stacks copied from
/// `phase_one`.
pub fn phase_two_from(phase_one: &DepthNet, arch: ArchConfig, seed: u64) -> Result<DepthNet> {
    let mut net = DepthNet::new(arch, seed)?;
    if net.arch().extractor != phase_one.arch().extractor || net.arch().correlator != phase_one.arch().correlator {
        return Err(Error::Config(
            "phase-two architecture must share the phase-one feature stacks".into(),
        ));
    }
    net.extractor = phase_one.extractor.clone();
    net.correlator = phase_one.correlator.clone();
    Ok(net)
}
