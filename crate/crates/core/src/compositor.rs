//! Pdf-weighted blending, confidence fusion, cross-pair occlusion fusion and
//! the L1 objective.
//!
//! For one pair with volumes `V`, `V'`, pdf `P` and confidences `C`, `C'`:
//!
//! ```text
//! Ī(x,y)  = Σ_d V(x,y,d) P(x,y,d)        Ī' likewise with V'
//! Î       = Ī C + Ī' C'
//! O_i     = softmax_i(occlusion logit_i)  per pixel
//! I_final = Σ_i Î_i O_i
//! ```
//!
//! Invalid volume samples are zero and enter the sums as zero. The
//! computation lives on the tape; the plain functions run it on a local tape
//! of constants.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{GrayMap, Image, PlaneSweepVolume};
use crate::network::DepthInference;

/// Per-pair outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEstimate {
    pub view_a: Image,
    pub view_b: Image,
    pub confidence: Tensor,
    pub fused: Image,
    pub occlusion_logit: Tensor,
}

impl PairEstimate {
    /// `Ī C + Ī' C'` recomputed from the stored parts.
    pub fn recompose(&self) -> Image {
        let (w, h) = (self.fused.width(), self.fused.height());
        let c = self.confidence.data();
        Image::from_fn(w, h, |x, y, ch| {
            let p = y * w + x;
            self.view_a.get(x, y, ch) * c[p] + self.view_b.get(x, y, ch) * c[w * h + p]
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinalEstimate {
    pub image: Image,
    /// `[N, H, W]` normalized occlusion weights.
    pub weights: Tensor,
}

impl FinalEstimate {
    pub fn pair_count(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weight_map(&self, i: usize) -> GrayMap {
        let (h, w) = (self.weights.shape()[1], self.weights.shape()[2]);
        GrayMap::from_vec(w, h, self.weights.data()[i * w * h..(i + 1) * w * h].to_vec())
            .expect("weight slice matches its shape")
    }
}

/// Tape handles for one pair, each `[1, C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct TapePair {
    pub view_a: Var,
    pub view_b: Var,
    pub fused: Var,
}

/// Blends `[D, 3, H, W]` volumes with pdf `[1, D, H, W]` and confidences `[1, 2, H, W]`.
pub fn synthesize_pair_tape(tape: &mut Tape, va: Var, vb: Var, pdf: Var, confidence: Var) -> Result<TapePair> {
    let vs = tape.shape(va).to_vec();
    let ps = tape.shape(pdf).to_vec();
    if vs.len() != 4 || vs[1] != 3 || tape.shape(vb) != vs.as_slice() {
        return Err(Error::Shape(format!(
            "volumes must be equal [D, 3, H, W], got {vs:?} and {:?}",
            tape.shape(vb)
        )));
    }
    if ps != [1, vs[0], vs[2], vs[3]] || tape.shape(confidence) != [1, 2, vs[2], vs[3]] {
        return Err(Error::Shape(format!(
            "pdf {ps:?} / confidence {:?} do not match volume {vs:?}",
            tape.shape(confidence)
        )));
    }
    let weights = tape.reshape(pdf, &[vs[0], 1, vs[2], vs[3]])?;
    let mut blend = |v: Var| -> Result<Var> {
        let weighted = tape.mul(v, weights)?;
        tape.sum_axis(weighted, 0)
    };
    let view_a = blend(va)?;
    let view_b = blend(vb)?;
    let ca = tape.slice(confidence, 1, 0, 1)?;
    let cb = tape.slice(confidence, 1, 1, 2)?;
    let a = tape.mul(view_a, ca)?;
    let b = tape.mul(view_b, cb)?;
    let fused = tape.add(a, b)?;
    Ok(TapePair { view_a, view_b, fused })
}

/// Fuses `[1, 3, H, W]` estimates with `[1, 1, H, W]` occlusion logits.
/// Returns the image and the `[1, N, H, W]` normalized weights.
pub fn fuse_pairs_tape(tape: &mut Tape, fused: &[Var], logits: &[Var]) -> Result<(Var, Var)> {
    if fused.is_empty() || fused.len() != logits.len() {
        return Err(Error::Shape(format!(
            "fusion needs matching non-empty lists, got {} estimates and {} logits",
            fused.len(),
            logits.len()
        )));
    }
    let stacked = tape.concat(logits, 1)?;
    let weights = tape.softmax(stacked, 1)?;
    let mut acc = None;
    for (i, &f) in fused.iter().enumerate() {
        let wi = tape.slice(weights, 1, i, i + 1)?;
        let term = tape.mul(f, wi)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok((acc.expect("non-empty"), weights))
}

fn as4(t: &Tensor, shape: [usize; 4]) -> Result<Tensor> {
    t.clone().reshaped(&shape)
}

/// Blends one pair. Volumes and inference must cover the same grid.
pub fn synthesize_per_pair(va: &PlaneSweepVolume, vb: &PlaneSweepVolume, inf: &DepthInference) -> Result<PairEstimate> {
    synthesize_per_pair_tensors(&va.to_tensor(), &vb.to_tensor(), inf)
}

pub fn synthesize_per_pair_tensors(va: &Tensor, vb: &Tensor, inf: &DepthInference) -> Result<PairEstimate> {
    let (d, h, w) = (inf.depths(), inf.height(), inf.width());
    let mut tape = Tape::new();
    let a = tape.constant(va.clone());
    let b = tape.constant(vb.clone());
    let pdf = tape.constant(as4(&inf.pdf, [1, d, h, w])?);
    let conf = tape.constant(as4(&inf.confidence, [1, 2, h, w])?);
    let out = synthesize_pair_tape(&mut tape, a, b, pdf, conf)?;
    Ok(PairEstimate {
        view_a: Image::from_tensor(tape.value(out.view_a))?,
        view_b: Image::from_tensor(tape.value(out.view_b))?,
        confidence: inf.confidence.clone(),
        fused: Image::from_tensor(tape.value(out.fused))?,
        occlusion_logit: inf.occlusion_logit.clone(),
    })
}

pub fn fuse_pairs(estimates: &[PairEstimate]) -> Result<FinalEstimate> {
    let first = estimates.first().ok_or_else(|| Error::Shape("no pair estimates to fuse".into()))?;
    let (w, h) = (first.fused.width(), first.fused.height());
    let mut tape = Tape::new();
    let mut fused = Vec::new();
    let mut logits = Vec::new();
    for e in estimates {
        if !e.fused.same_size(&first.fused) || e.occlusion_logit.len() != w * h {
            return Err(Error::Shape("pair estimates cover different grids".into()));
        }
        fused.push(tape.constant(e.fused.to_tensor()));
        logits.push(tape.constant(as4(&e.occlusion_logit, [1, 1, h, w])?));
    }
    let (image, weights) = fuse_pairs_tape(&mut tape, &fused, &logits)?;
    Ok(FinalEstimate {
        image: Image::from_tensor(tape.value(image))?,
        weights: as4(tape.value(weights), [1, estimates.len(), h, w])?.reshaped(&[estimates.len(), h, w])?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1Loss {
    /// `Σ |gt - pred|` over pixels and channels.
    pub sum: f64,
    /// `sum / (pixels · channels) · 255`.
    pub mean_x255: f64,
}

pub fn l1_loss(pred: &Image, gt: &Image) -> Result<L1Loss> {
    if !pred.same_size(gt) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(L1Loss {
        sum,
        mean_x255: sum / pred.data().len() as f64 * 255.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn inference(d: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> DepthInference {
        let mut raw = random(&[1, d + 3, h, w], rng);
        raw.scale(4.0);
        DepthInference::from_head_output(&raw, d).unwrap()
    }

    #[test]
    fn one_hot_pdf_with_full_confidence_selects_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, h, w, k) = (3, 4, 5, 1);
        let va = random(&[d, 3, h, w], &mut rng);
        let vb = random(&[d, 3, h, w], &mut rng);
        let mut pdf = Tensor::zeros(&[d, h, w]);
        pdf.data_mut()[k * h * w..(k + 1) * h * w].fill(1.0);
        let mut confidence = Tensor::zeros(&[2, h, w]);
        confidence.data_mut()[..h * w].fill(1.0);
        let inf = DepthInference {
            pdf,
            confidence,
            occlusion_logit: Tensor::zeros(&[h, w]),
        };
        let e = synthesize_per_pair_tensors(&va, &vb, &inf).unwrap();
        assert_eq!(e.fused.data(), &va.data()[k * 3 * h * w..(k + 1) * 3 * h * w]);
    }

    #[test]
    fn uniform_pdf_averages_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (d, h, w) = (4, 3, 3);
        let va = random(&[d, 3, h, w], &mut rng);
        let inf = DepthInference {
            pdf: Tensor::full(&[d, h, w], 0.25),
            confidence: Tensor::full(&[2, h, w], 0.5),
            occlusion_logit: Tensor::zeros(&[h, w]),
        };
        let e = synthesize_per_pair_tensors(&va, &va, &inf).unwrap();
        for i in 0..3 * h * w {
            let mean = (0..d).map(|k| va.data()[k * 3 * h * w + i]).sum::<f64>() / d as f64;
            assert!((e.view_a.data()[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn per_pair_matches_loop_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d, h, w) = (3, 4, 4);
        let va = random(&[d, 3, h, w], &mut rng);
        let vb = random(&[d, 3, h, w], &mut rng);
        let inf = inference(d, h, w, &mut rng);
        let e = synthesize_per_pair_tensors(&va, &vb, &inf).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let (mut ia, mut ib) = (0.0, 0.0);
                    for k in 0..d {
                        let p = inf.pdf_at(k, y, x);
                        ia += va.at4(k, c, y, x) * p;
                        ib += vb.at4(k, c, y, x) * p;
                    }
                    let ca = inf.confidence.data()[y * w + x];
                    let cb = inf.confidence.data()[h * w + y * w + x];
                    assert!((e.fused.get(x, y, c) - (ia * ca + ib * cb)).abs() < 1e-12);
                }
            }
        }
        assert!(e.recompose().data().iter().zip(e.fused.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn single_pair_fusion_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let va = random(&[2, 3, 3, 3], &mut rng);
        let inf = inference(2, 3, 3, &mut rng);
        let e = synthesize_per_pair_tensors(&va, &va, &inf).unwrap();
        let f = fuse_pairs(std::slice::from_ref(&e)).unwrap();
        assert_eq!(f.image, e.fused);
        assert!(f.weights.data().iter().all(|v| *v == 1.0));
        assert!(fuse_pairs(&[]).is_err());
    }

    #[test]
    fn fusion_matches_loop_evaluation_and_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (4, 4);
        let ests: Vec<_> = (0..3)
            .map(|_| {
                let va = random(&[3, 3, h, w], &mut rng);
                let vb = random(&[3, 3, h, w], &mut rng);
                synthesize_per_pair_tensors(&va, &vb, &inference(3, h, w, &mut rng)).unwrap()
            })
            .collect();
        let f = fuse_pairs(&ests).unwrap();
        for p in 0..h * w {
            let logits: Vec<f64> = ests.iter().map(|e| e.occlusion_logit.data()[p]).collect();
            let o = softmax(&Tensor::from_vec(vec![3], logits).unwrap(), 0).unwrap();
            for c in 0..3 {
                let v: f64 = (0..3).map(|i| ests[i].fused.data()[c * h * w + p] * o.data()[i]).sum();
                assert!((f.image.data()[c * h * w + p] - v).abs() < 1e-12);
            }
        }
        let rev: Vec<_> = ests.iter().rev().cloned().collect();
        let g = fuse_pairs(&rev).unwrap();
        assert!(f.image.data().iter().zip(g.image.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn l1_conventions() {
        let gt = Image::from_fn(2, 2, |x, y, c| 0.1 * (x + y + c) as f64);
        assert_eq!(l1_loss(&gt, &gt).unwrap().sum, 0.0);
        let pred = Image::from_fn(2, 2, |x, y, c| gt.get(x, y, c) + 0.1);
        let l = l1_loss(&pred, &gt).unwrap();
        assert!((l.sum - 1.2).abs() < 1e-12);
        assert!((l.mean_x255 - 25.5).abs() < 1e-9);
        assert!(l1_loss(&Image::new(3, 2), &gt).is_err());
    }
}
