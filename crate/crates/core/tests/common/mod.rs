//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewsynth::autodiff::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Entries skipped because a SELU input changed sign inside the stencil.
    pub skipped: usize,
    pub max_rel: f64,
}

impl GradCheck {
    pub fn merge(&mut self, o: GradCheck) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.max_rel = self.max_rel.max(o.max_rel);
    }
}

const STEP: f64 = 1e-4;
/// Below this magnitude on both sides an entry counts as zero.
const TINY: f64 = 1e-7;

fn selu_signs(tape: &Tape) -> Vec<bool> {
    tape.selu_inputs()
        .into_iter()
        .flat_map(|v| tape.value(v).data().iter().map(|x| *x > 0.0).collect::<Vec<_>>())
        .collect()
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, for up to `per_input` entries of every input.
pub fn grad_check<F>(inputs: &[Tensor], per_input: usize, seed: u64, f: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        assert_eq!(tape.value(out).len(), 1, "checked function must be scalar");
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let signs = selu_signs(&tape);
    let grads = tape.backward(out).unwrap();
    let mut r = rng(seed);
    let mut stats = GradCheck::default();
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        let picks: Vec<usize> = if x.len() <= per_input {
            (0..x.len()).collect()
        } else {
            (0..per_input).map(|_| r.random_range(0..x.len())).collect()
        };
        for j in picks {
            let mut vals = inputs.to_vec();
            vals[i].data_mut()[j] = x.data()[j] + STEP;
            let (tp, _, op) = eval(&vals);
            vals[i].data_mut()[j] = x.data()[j] - STEP;
            let (tm, _, om) = eval(&vals);
            if selu_signs(&tp) != signs || selu_signs(&tm) != signs {
                stats.skipped += 1;
                continue;
            }
            let numeric = (tp.value(op).data()[0] - tm.value(om).data()[0]) / (2.0 * STEP);
            let a = analytic.data()[j];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < TINY { 0.0 } else { (a - numeric).abs() / scale };
            stats.checked += 1;
            stats.max_rel = stats.max_rel.max(rel);
        }
    }
    stats
}

/// `Σ y ⊙ r` for a fixed random `r`, a smooth scalar probe of `y`.
pub fn probe(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(random_tensor(&shape, &mut rng(seed)));
    let m = tape.mul(y, r).unwrap();
    tape.sum_all(m)
}
