use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, LayerSpec};
use super::layers::{ConvLayer, ConvStack, StackVars};
use crate::autodiff::{kernels, load_checkpoint, save_checkpoint, Activation, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which sub-networks receive gradient updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub extractor: bool,
    pub correlator: bool,
    pub head: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        extractor: true,
        correlator: true,
        head: true,
    };
    pub const HEAD_ONLY: Trainable = Trainable {
        extractor: false,
        correlator: false,
        head: true,
    };
}

/// Network outputs for one image pair over an `H x W` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthInference {
    /// `[D, H, W]`, sums to 1 over the first axis.
    pub pdf: Tensor,
    /// `[2, H, W]`, sums to 1 over the first axis.
    pub confidence: Tensor,
    /// `[H, W]` raw logits, normalized across pairs by the compositor.
    pub occlusion_logit: Tensor,
}

impl DepthInference {
    /// Splits raw head output `[1, D + 3, H, W]`.
    pub fn from_head_output(raw: &Tensor, depths: usize) -> Result<Self> {
        let [n, c, h, w] = raw.dims4();
        if n != 1 || c != depths + 3 {
            return Err(Error::Shape(format!(
                "head output {:?} does not split into {depths} + 2 + 1 channels",
                raw.shape()
            )));
        }
        let plane = h * w;
        let part = |lo: usize, hi: usize, shape: Vec<usize>| {
            Tensor::from_vec(shape, raw.data()[lo * plane..hi * plane].to_vec())
        };
        let pdf = kernels::softmax(&part(0, depths, vec![depths, h, w])?, 0)?;
        let confidence = kernels::softmax(&part(depths, depths + 2, vec![2, h, w])?, 0)?;
        let occlusion_logit = part(depths + 2, depths + 3, vec![h, w])?;
        Ok(DepthInference {
            pdf,
            confidence,
            occlusion_logit,
        })
    }

    pub fn depths(&self) -> usize {
        self.pdf.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pdf.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pdf.shape()[2]
    }

    #[inline]
    pub fn pdf_at(&self, d: usize, y: usize, x: usize) -> f64 {
        self.pdf.data()[(d * self.height() + y) * self.width() + x]
    }

    /// Index of the most probable depth level at every pixel, row-major.
    pub fn argmax(&self) -> Vec<usize> {
        let (h, w) = (self.height(), self.width());
        (0..h * w)
            .map(|p| {
                (0..self.depths())
                    .map(|d| self.pdf.data()[d * h * w + p])
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (d, v)| if v > best.1 { (d, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// Tape handles of the network outputs, each `[1, C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct TapeInference {
    pub pdf: Var,
    pub confidence: Var,
    pub occlusion_logit: Var,
}

#[derive(Clone, Debug)]
pub struct NetVars {
    pub extractor: StackVars,
    pub correlator: StackVars,
    pub head: StackVars,
}

/// Feature extractor, feature correlator and depth-pdf head.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthNet {
    arch: ArchConfig,
    pub extractor: ConvStack,
    pub correlator: ConvStack,
    pub head: ConvStack,
}

const STACK_NAMES: [&str; 3] = ["extractor", "correlator", "head"];

/// PSV intensities enter the extractor as `(v - INPUT_CENTER) * INPUT_SCALE`,
/// roughly zero-mean with unit spread for textured content.
pub const INPUT_CENTER: f64 = 0.5;
pub const INPUT_SCALE: f64 = 4.0;

/// Planes pushed through the extractor at once on the inference path.
const EXTRACT_CHUNK: usize = 8;

impl DepthNet {
    fn build(arch: ArchConfig, mut make: impl FnMut(usize, usize, usize, crate::autodiff::Padding, Activation) -> ConvLayer) -> Result<Self> {
        arch.validate()?;
        let [e, c, h] = arch.stacks();
        let mut build_stack = |(layers, pad): (Vec<(usize, LayerSpec)>, _), last_linear: bool| {
            let n = layers.len();
            ConvStack {
                layers: layers
                    .into_iter()
                    .enumerate()
                    .map(|(i, (cin, s))| {
                        let act = if last_linear && i + 1 == n {
                            Activation::None
                        } else {
                            Activation::Selu
                        };
                        make(cin, s.out_channels, s.kernel, pad, act)
                    })
                    .collect(),
            }
        };
        let extractor = build_stack(e, false);
        let correlator = build_stack(c, false);
        let head = build_stack(h, true);
        Ok(DepthNet {
            arch,
            extractor,
            correlator,
            head,
        })
    }

    /// LeCun-normal initialization from `seed`.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, |cin, cout, k, pad, act| ConvLayer::lecun(cin, cout, k, pad, act, &mut rng))
    }

    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        Self::build(arch, ConvLayer::zeros)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn depths(&self) -> usize {
        self.arch.depths
    }

    pub fn stacks(&self) -> [&ConvStack; 3] {
        [&self.extractor, &self.correlator, &self.head]
    }

    pub fn parameter_count(&self) -> usize {
        self.stacks().iter().map(|s| s.parameter_count()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, stack) in STACK_NAMES.iter().zip(self.stacks()) {
            for (i, l) in stack.layers.iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), l.weight.clone()));
                out.push((format!("{name}.{i}.bias"), l.bias.clone()));
            }
        }
        out
    }

    /// Rebuilds a network from named tensors, recovering the layer tables
    /// from the tensor shapes.
    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let mut tables: Vec<Vec<(Tensor, Tensor)>> = Vec::new();
        for name in STACK_NAMES {
            let mut layers = Vec::new();
            while let Some(w) = find(&format!("{name}.{}.weight", layers.len())) {
                let b = find(&format!("{name}.{}.bias", layers.len()))
                    .ok_or_else(|| Error::Config(format!("{name}.{}.bias missing", layers.len())))?;
                let [co, _, k, k2] = w.dims4();
                if w.rank() != 4 || k != k2 || b.shape() != [co] {
                    return Err(Error::Config(format!(
                        "{name}.{}: weight {:?} / bias {:?} are not a square convolution",
                        layers.len(),
                        w.shape(),
                        b.shape()
                    )));
                }
                layers.push((w.clone(), b.clone()));
            }
            tables.push(layers);
        }
        if tensors.len() != tables.iter().map(|t| 2 * t.len()).sum::<usize>() {
            return Err(Error::Config("checkpoint holds tensors outside the network layout".into()));
        }
        let spec_of = |t: &[(Tensor, Tensor)]| -> Vec<LayerSpec> {
            t.iter()
                .map(|(w, _)| LayerSpec {
                    kernel: w.shape()[2],
                    out_channels: w.shape()[0],
                })
                .collect()
        };
        let head_out = tables[2].last().map_or(0, |(w, _)| w.shape()[0]);
        let arch = ArchConfig {
            depths: head_out.saturating_sub(3),
            extractor: spec_of(&tables[0]),
            correlator: spec_of(&tables[1]),
            head: spec_of(&tables[2]),
        };
        let mut net = Self::zeros(arch)?;
        let stacks = [&mut net.extractor, &mut net.correlator, &mut net.head];
        for (stack, table) in stacks.into_iter().zip(tables) {
            for (layer, (w, b)) in stack.layers.iter_mut().zip(table) {
                if w.shape() != layer.weight.shape() {
                    return Err(Error::Config(format!(
                        "weight {:?} does not chain, expected {:?}",
                        w.shape(),
                        layer.weight.shape()
                    )));
                }
                layer.weight = w;
                layer.bias = b;
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.named_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(&load_checkpoint(path)?)
    }

    fn selected(&self, which: Trainable) -> [(bool, &ConvStack); 3] {
        [
            (which.extractor, &self.extractor),
            (which.correlator, &self.correlator),
            (which.head, &self.head),
        ]
    }

    /// Parameters of the selected stacks, weight then bias per layer.
    pub fn params_mut(&mut self, which: Trainable) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let stacks = [
            (which.extractor, &mut self.extractor),
            (which.correlator, &mut self.correlator),
            (which.head, &mut self.head),
        ];
        for (on, stack) in stacks {
            if on {
                for l in &mut stack.layers {
                    out.push(&mut l.weight);
                    out.push(&mut l.bias);
                }
            }
        }
        out
    }

    pub fn param_shapes(&self, which: Trainable) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for (on, stack) in self.selected(which) {
            if on {
                for l in &stack.layers {
                    out.push(l.weight.shape().to_vec());
                    out.push(l.bias.shape().to_vec());
                }
            }
        }
        out
    }

    /// Features of `[N, 3, S, S]` planes, each plane independently.
    pub fn extract_features(&self, planes: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = planes.dims4();
        if planes.rank() != 4 || c != 3 {
            return Err(Error::Shape(format!("extractor expects [N, 3, H, W], got {:?}", planes.shape())));
        }
        let mut data = Vec::new();
        let mut out_shape = None;
        for start in (0..n).step_by(EXTRACT_CHUNK) {
            let m = EXTRACT_CHUNK.min(n - start);
            let chunk = Tensor::from_vec(
                vec![m, 3, h, w],
                planes.data()[start * 3 * h * w..(start + m) * 3 * h * w].iter()
                    .map(|v| (v - INPUT_CENTER) * INPUT_SCALE)
                    .collect(),
            )?;
            let f = self.extractor.forward(&chunk)?;
            out_shape.get_or_insert_with(|| f.shape().to_vec());
            data.extend_from_slice(f.data());
        }
        let mut shape = out_shape.ok_or_else(|| Error::Shape("no planes to extract".into()))?;
        shape[0] = n;
        Tensor::from_vec(shape, data)
    }

    /// Per-plane matching scores `[D, Sc, H, W]` from features `(fa, fb)`.
    pub fn correlate(&self, fa: &Tensor, fb: &Tensor) -> Result<Tensor> {
        if fa.shape() != fb.shape() || fa.rank() != 4 {
            return Err(Error::Shape(format!("feature shapes differ: {:?} vs {:?}", fa.shape(), fb.shape())));
        }
        let [n, c, h, w] = fa.dims4();
        let plane = c * h * w;
        let mut cat = Vec::with_capacity(2 * fa.len());
        for d in 0..n {
            cat.extend_from_slice(&fa.data()[d * plane..(d + 1) * plane]);
            cat.extend_from_slice(&fb.data()[d * plane..(d + 1) * plane]);
        }
        self.correlator.forward(&Tensor::from_vec(vec![n, 2 * c, h, w], cat)?)
    }

    pub fn infer_depth(&self, scores: &Tensor) -> Result<DepthInference> {
        let [d, c, h, w] = scores.dims4();
        if d != self.depths() || c != self.arch.score_channels() {
            return Err(Error::Shape(format!(
                "head variant for {} levels x {} scores cannot take {:?}",
                self.depths(),
                self.arch.score_channels(),
                scores.shape()
            )));
        }
        let stacked = scores.clone().reshaped(&[1, d * c, h, w])?;
        DepthInference::from_head_output(&self.head.forward(&stacked)?, self.depths())
    }

    /// Full forward pass for two `[D, 3, S, S]` plane-sweep volumes.
    pub fn infer_pair(&self, psv_a: &Tensor, psv_b: &Tensor) -> Result<DepthInference> {
        let fa = self.extract_features(psv_a)?;
        let fb = self.extract_features(psv_b)?;
        self.infer_depth(&self.correlate(&fa, &fb)?)
    }

    pub fn register(&self, tape: &mut Tape, which: Trainable) -> NetVars {
        NetVars {
            extractor: self.extractor.register(tape, which.extractor),
            correlator: self.correlator.register(tape, which.correlator),
            head: self.head.register(tape, which.head),
        }
    }

    pub fn features_tape(&self, tape: &mut Tape, vars: &NetVars, planes: Var) -> Result<Var> {
        let planes = tape.affine(planes, INPUT_SCALE, -INPUT_CENTER * INPUT_SCALE);
        self.extractor.forward_tape(tape, &vars.extractor, planes)
    }

    pub fn pair_tape(&self, tape: &mut Tape, vars: &NetVars, fa: Var, fb: Var) -> Result<TapeInference> {
        let cat = tape.concat(&[fa, fb], 1)?;
        let scores = self.correlator.forward_tape(tape, &vars.correlator, cat)?;
        let [d, c, h, w] = tape.value(scores).dims4();
        let stacked = tape.reshape(scores, &[1, d * c, h, w])?;
        let raw = self.head.forward_tape(tape, &vars.head, stacked)?;
        let depths = self.depths();
        let pdf_logits = tape.slice(raw, 1, 0, depths)?;
        let conf_logits = tape.slice(raw, 1, depths, depths + 2)?;
        Ok(TapeInference {
            pdf: tape.softmax(pdf_logits, 1)?,
            confidence: tape.softmax(conf_logits, 1)?,
            occlusion_logit: tape.slice(raw, 1, depths + 2, depths + 3)?,
        })
    }

    /// Gradients of the trainable stacks, ordered like [`DepthNet::params_mut`].
    pub fn collect_gradients(&self, vars: &NetVars, grads: &mut Gradients) -> Vec<Tensor> {
        let mut out = Vec::new();
        for sv in [&vars.extractor, &vars.correlator, &vars.head] {
            if sv.trainable {
                for &(w, b) in &sv.params {
                    out.push(grads.take(w));
                    out.push(grads.take(b));
                }
            }
        }
        out
    }

    pub fn trainable_of(vars: &NetVars) -> Trainable {
        Trainable {
            extractor: vars.extractor.trainable,
            correlator: vars.correlator.trainable,
            head: vars.head.trainable,
        }
    }
}

/// JSON manifest stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetManifest {
    pub arch: ArchConfig,
    pub phase: String,
    pub iterations: u64,
    pub seed: u64,
    pub parent: Option<String>,
}

impl NetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.column() as u64, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let net = DepthNet::zeros(ArchConfig::toy(4).unwrap()).unwrap();
        let psv = random(&[4, 3, 20, 20], 1);
        let f = net.extract_features(&psv).unwrap();
        assert!(f.data().iter().all(|v| *v == 0.0));
        let inf = net.infer_pair(&psv, &psv).unwrap();
        assert!(inf.pdf.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!(inf.confidence.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn identical_planes_give_identical_features() {
        let net = DepthNet::new(ArchConfig::toy(4).unwrap(), 3).unwrap();
        let one = random(&[1, 3, 20, 20], 2);
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let f = net.extract_features(&Tensor::from_vec(vec![2, 3, 20, 20], two).unwrap()).unwrap();
        let half = f.len() / 2;
        assert_eq!(&f.data()[..half], &f.data()[half..]);
    }

    #[test]
    fn scores_of_a_plane_ignore_other_planes() {
        let net = DepthNet::new(ArchConfig::toy(4).unwrap(), 4).unwrap();
        let fa = net.extract_features(&random(&[4, 3, 20, 20], 5)).unwrap();
        let fb = net.extract_features(&random(&[4, 3, 20, 20], 6)).unwrap();
        let s1 = net.correlate(&fa, &fb).unwrap();
        let mut fb2 = fb.clone();
        let plane = fb.len() / 4;
        for v in &mut fb2.data_mut()[2 * plane..3 * plane] {
            *v += 0.5;
        }
        let s2 = net.correlate(&fa, &fb2).unwrap();
        let sp = s1.len() / 4;
        for d in 0..4 {
            let same = s1.data()[d * sp..(d + 1) * sp] == s2.data()[d * sp..(d + 1) * sp];
            assert_eq!(same, d != 2, "plane {d}");
        }
    }

    #[test]
    fn tape_path_matches_inference_path() {
        let net = DepthNet::new(ArchConfig::toy(4).unwrap(), 7).unwrap();
        let a = random(&[4, 3, 20, 20], 8);
        let b = random(&[4, 3, 20, 20], 9);
        let direct = net.infer_pair(&a, &b).unwrap();
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, Trainable::ALL);
        let (av, bv) = (tape.constant(a), tape.constant(b));
        let fa = net.features_tape(&mut tape, &vars, av).unwrap();
        let fb = net.features_tape(&mut tape, &vars, bv).unwrap();
        let t = net.pair_tape(&mut tape, &vars, fa, fb).unwrap();
        assert!(tape.value(t.pdf).max_abs_diff(&direct.pdf.clone().reshaped(&[1, 4, 12, 12]).unwrap()) < 1e-12);
        assert!(tape.value(t.confidence).max_abs_diff(&direct.confidence.clone().reshaped(&[1, 2, 12, 12]).unwrap()) < 1e-12);
        assert!(tape.value(t.occlusion_logit).max_abs_diff(&direct.occlusion_logit.clone().reshaped(&[1, 1, 12, 12]).unwrap()) < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_recovers_arch() {
        let net = DepthNet::new(ArchConfig::toy(5).unwrap(), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.pswt");
        net.save(&p).unwrap();
        assert_eq!(DepthNet::load(&p).unwrap(), net);
    }

    #[test]
    fn params_follow_freeze_selection() {
        let mut net = DepthNet::new(ArchConfig::toy(4).unwrap(), 11).unwrap();
        let head_params = 2 * net.head.layers.len();
        assert_eq!(net.params_mut(Trainable::HEAD_ONLY).len(), head_params);
        assert_eq!(net.param_shapes(Trainable::ALL).len(), net.named_tensors().len());
    }
}
