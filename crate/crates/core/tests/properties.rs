mod common;

use common::{grad_check, probe, random_tensor, rng};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use viewsynth::autodiff::{kernels, Padding, Tape, Tensor};
use viewsynth::geometry::{normalize_homography, plane_homography, Camera, DepthLevels, Spacing};
use viewsynth::network::{ArchConfig, DepthNet, Trainable};
use viewsynth::pipeline::tile_grid;
use viewsynth::scenegen::{make_sample, random_layered_scene, DepthPlacement, LayeredSceneConfig, RigLayout, RigSpec};
use viewsynth::trainer::{forward_backward, TrainItem};

fn camera(center: [f64; 3], yaw: f64, f: f64) -> Camera {
    let (s, c) = yaw.sin_cos();
    let r = Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c);
    let t = -(r * Vector3::from(center));
    Camera::new(32, 24, f, f, 15.5, 11.5, r, t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A plane homography sends pixels where projection does, and for cameras
    /// sharing an orientation (so sharing the plane) homographies compose.
    #[test]
    fn homographies_match_projection_and_compose(
        cx in -0.5f64..0.5, cy in -0.3f64..0.3, yaw in -0.1f64..0.1,
        depth in 1.5f64..30.0, u in 0.0f64..32.0, v in 0.0f64..24.0,
    ) {
        let virt = camera([0.0, 0.0, 0.0], 0.0, 30.0);
        let src = camera([cx, cy, 0.0], yaw, 28.0);
        let h = normalize_homography(&plane_homography(&src, &virt, depth));
        let p = virt.unproject(u, v, depth);
        if let Some((su, sv, _)) = src.project(&p) {
            let q = h * Vector3::new(u, v, 1.0);
            prop_assert!((q.x / q.z - su).abs() < 1e-8);
            prop_assert!((q.y / q.z - sv).abs() < 1e-8);
        }
        let a = camera([cx, 0.0, 0.0], 0.0, 28.0);
        let b = camera([0.0, cy, 0.1], 0.0, 33.0);
        let ab = plane_homography(&b, &a, depth);
        let va = plane_homography(&a, &virt, depth);
        let composed = normalize_homography(&(ab * va));
        let direct = normalize_homography(&plane_homography(&b, &virt, depth));
        prop_assert!((composed - direct).abs().max() < 1e-9);
    }

    #[test]
    fn softmax_is_a_distribution(shape in (1usize..5, 1usize..4, 1usize..4), axis in 0usize..3, seed: u64) {
        let t = random_tensor(&[shape.0, shape.1, shape.2], &mut rng(seed));
        let mut scaled = t.clone();
        scaled.scale(40.0);
        let s = kernels::softmax(&scaled, axis).unwrap();
        prop_assert!(s.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        let dims = [shape.0, shape.1, shape.2];
        let stride: usize = dims[axis + 1..].iter().product();
        for outer in 0..s.len() / (dims[axis] * stride) {
            for inner in 0..stride {
                let total: f64 = (0..dims[axis]).map(|k| s.data()[(outer * dims[axis] + k) * stride + inner]).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selu_is_continuous_and_monotone(x in -5.0f64..5.0) {
        let at = |v: f64| kernels::selu(&Tensor::scalar(v)).data()[0];
        prop_assert!((at(-1e-12) - at(1e-12)).abs() < 1e-10);
        prop_assert!(at(x + 1e-3) > at(x));
    }

    #[test]
    fn tiles_cover_each_pixel_once(w in 1usize..70, h in 1usize..70, t in 1usize..40) {
        let mut hits = vec![0u8; w * h];
        for tile in tile_grid(w, h, t) {
            let (c, o) = (tile.computed, tile.owned);
            prop_assert!(o.x0 >= c.x0 && o.y0 >= c.y0);
            prop_assert!(o.x0 + o.width <= c.x0 + c.width && o.y0 + o.height <= c.y0 + c.height);
            for y in o.y0..o.y0 + o.height {
                for x in o.x0..o.x0 + o.width {
                    hits[y * w + x] += 1;
                }
            }
        }
        prop_assert!(hits.iter().all(|&n| n == 1));
    }

    #[test]
    fn levels_are_ordered_and_nearest_is_exact(lo in 0.5f64..5.0, span in 1.0f64..50.0, n in 2usize..70) {
        for spacing in [Spacing::InverseDepth, Spacing::Linear] {
            let levels = DepthLevels::new(lo, lo + span, n, spacing).unwrap();
            prop_assert!(levels.values().windows(2).all(|w| w[0] < w[1]));
            for (k, &d) in levels.values().iter().enumerate() {
                prop_assert_eq!(levels.nearest_index(d), k);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// Small conv, SELU and softmax chain against central differences.
    #[test]
    fn layer_chain_gradients(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let x = random_tensor(&[1, 2, 5, 5], &mut r);
        let w = random_tensor(&[3, 2, 3, 3], &mut r);
        let b = random_tensor(&[3], &mut r);
        let g = grad_check(&[x, w, b], 12, seed, |t: &mut Tape, v| {
            let c = t.conv2d(v[0], v[1], v[2], Padding::Same).unwrap();
            let s = t.selu(c);
            let p = t.softmax(s, 1).unwrap();
            probe(t, p, seed ^ 1)
        });
        prop_assert!(g.max_rel <= 1e-4, "max relative error {}", g.max_rel);
    }
}

#[test]
fn one_step_reaches_nearly_every_parameter() {
    let d = 8;
    let rig = RigSpec {
        width: 40,
        height: 40,
        focal: 40.0,
        origin: [0.0; 3],
        layout: RigLayout::Line { count: 5, baseline: 0.4 },
    };
    let levels = DepthLevels::new(2.0, 12.0, d, Spacing::InverseDepth).unwrap();
    let mut cfg = LayeredSceneConfig::new(rig, levels.clone());
    cfg.placement = DepthPlacement::OnLevels;
    let sample = make_sample(&random_layered_scene(&cfg, 17)).unwrap();
    let net = DepthNet::new(ArchConfig::toy(d).unwrap(), 17).unwrap();
    let item = TrainItem {
        sample: std::sync::Arc::new(sample),
        pairs: vec![(0, 1), (1, 2), (2, 3)],
        rect: viewsynth::pipeline::Rect {
            x0: 12,
            y0: 12,
            width: 16,
            height: 16,
        },
        levels,
        resampled: false,
    };
    let out = forward_backward(&net, Trainable::ALL, &item).unwrap();
    let total: usize = out.gradients.iter().map(|g| g.len()).sum();
    let nonzero: usize = out.gradients.iter().map(|g| g.data().iter().filter(|v| **v != 0.0).count()).sum();
    let per_stack: Vec<usize> = net.stacks().iter().map(|s| s.parameter_count()).collect();
    assert_eq!(total, per_stack.iter().sum::<usize>());
    assert!(
        nonzero as f64 > 0.99 * total as f64,
        "{nonzero} of {total} parameters received gradient"
    );
}
