//! Numeric kernels shared by the recording tape and the inference path.
//!
//! Convolution is im2col followed by a dense matrix product; stride is
//! always 1.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// Zero padding of `(k - 1) / 2`; output keeps the input size.
    Same,
}

impl Padding {
    pub fn amount(self, k: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (k - 1) / 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Selu,
    None,
}

/// `C = alpha * A * B + beta * C` for row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe views that stay inside the given slices,
    // as checked by the debug assertions of every caller.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv_output_size(h: usize, w: usize, k: usize, pad: Padding) -> Result<(usize, usize)> {
    match pad {
        Padding::Same => Ok((h, w)),
        Padding::Valid => {
            if h < k || w < k {
                return Err(Error::Shape(format!(
                    "input {h}x{w} is smaller than the {k}x{k} kernel"
                )));
            }
            Ok((h - k + 1, w - k + 1))
        }
    }
}

fn check_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input and kernel, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let [n, ci, h, wd] = x.dims4();
    let [co, wci, kh, kw] = w.dims4();
    if wci != ci {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {ci}, kernel expects {wci}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if b.len() != co {
        return Err(Error::Shape(format!("bias has {} entries for {co} filters", b.len())));
    }
    Ok((n, ci, h, wd, co, kh))
}

/// Fills `cols` (`[ci*k*k, ho*wo]`) with the patches of one image.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], ci: usize, h: usize, w: usize, k: usize, pad: usize, ho: usize, wo: usize, cols: &mut [f64]) {
    let plane = ho * wo;
    for c in 0..ci {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    // valid ox range: 0 <= ox + kx - pad < w
                    let lo = pad.saturating_sub(kx).min(wo);
                    let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                    drow[..lo].fill(0.0);
                    drow[hi..].fill(0.0);
                    if hi > lo {
                        let start = lo + kx - pad;
                        drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto one image gradient.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], ci: usize, h: usize, w: usize, k: usize, pad: usize, ho: usize, wo: usize, dx: &mut [f64]) {
    let plane = ho * wo;
    for c in 0..ci {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let lo = pad.saturating_sub(kx).min(wo);
                    let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                    if hi == lo {
                        continue;
                    }
                    let start = lo + kx - pad;
                    let drow = &mut dxc[iy as usize * w + start..iy as usize * w + start + (hi - lo)];
                    for (d, s) in drow.iter_mut().zip(&src[oy * wo + lo..oy * wo + hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Convolution (cross-correlation) of `x: [N, Ci, H, W]` with `w: [Co, Ci, k, k]` plus bias.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, pad: Padding) -> Result<Tensor> {
    let (n, ci, h, wd, co, k) = check_conv(x, w, b)?;
    let (ho, wo) = conv_output_size(h, wd, k, pad)?;
    let p = pad.amount(k);
    let kk = ci * k * k;
    let plane = ho * wo;
    let mut out = vec![0.0; n * co * plane];
    let mut cols = vec![0.0; kk * plane];
    for item in 0..n {
        let xi = &x.data()[item * ci * h * wd..(item + 1) * ci * h * wd];
        im2col(xi, ci, h, wd, k, p, ho, wo, &mut cols);
        let oi = &mut out[item * co * plane..(item + 1) * co * plane];
        for (c, bias) in b.data().iter().enumerate() {
            oi[c * plane..(c + 1) * plane].fill(*bias);
        }
        gemm(co, kk, plane, w.data(), kk as isize, 1, &cols, plane as isize, 1, 1.0, oi);
    }
    Tensor::from_vec(vec![n, co, ho, wo], out)
}

/// Gradients `(dx, dw, db)` of a convolution given the output gradient `dy`.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, pad: Padding, dy: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let [n, ci, h, wd] = x.dims4();
    let [co, _, k, _] = w.dims4();
    let (ho, wo) = conv_output_size(h, wd, k, pad)?;
    if dy.shape() != [n, co, ho, wo] {
        return Err(Error::Shape(format!(
            "conv2d output gradient {:?} does not match [{n},{co},{ho},{wo}]",
            dy.shape()
        )));
    }
    let p = pad.amount(k);
    let kk = ci * k * k;
    let plane = ho * wo;
    let mut dw = vec![0.0; co * kk];
    let mut db = vec![0.0; co];
    let mut dx = if need_dx { vec![0.0; n * ci * h * wd] } else { Vec::new() };
    let mut cols = vec![0.0; kk * plane];
    let mut dcols = if need_dx { vec![0.0; kk * plane] } else { Vec::new() };
    for item in 0..n {
        let xi = &x.data()[item * ci * h * wd..(item + 1) * ci * h * wd];
        let dyi = &dy.data()[item * co * plane..(item + 1) * co * plane];
        im2col(xi, ci, h, wd, k, p, ho, wo, &mut cols);
        // dW += dY (co x plane) * colsᵀ (plane x kk)
        gemm(co, plane, kk, dyi, plane as isize, 1, &cols, 1, plane as isize, 1.0, &mut dw);
        for (c, g) in db.iter_mut().enumerate() {
            *g += dyi[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
        if need_dx {
            // dcols = Wᵀ (kk x co) * dY (co x plane)
            gemm(kk, co, plane, w.data(), 1, kk as isize, dyi, plane as isize, 1, 0.0, &mut dcols);
            col2im(&dcols, ci, h, wd, k, p, ho, wo, &mut dx[item * ci * h * wd..(item + 1) * ci * h * wd]);
        }
    }
    let dx = if need_dx {
        Some(Tensor::from_vec(vec![n, ci, h, wd], dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::from_vec(w.shape().to_vec(), dw)?, Tensor::from_vec(vec![co], db)?))
}

#[inline]
pub fn selu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn selu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    selu_in_place(&mut out);
    out
}

pub fn selu_in_place(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = selu_scalar(*v);
    }
}

/// `(outer, axis_len, inner)` split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along `axis`, stabilized by subtracting the per-slice maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!("softmax axis {axis} out of range for {:?}", x.shape())));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let mut m = f64::NEG_INFINITY;
            for a in 0..len {
                m = m.max(d[idx(a)]);
            }
            let mut s = 0.0;
            for a in 0..len {
                let e = (d[idx(a)] - m).exp();
                d[idx(a)] = e;
                s += e;
            }
            for a in 0..len {
                d[idx(a)] /= s;
            }
        }
    }
    Ok(out)
}

/// Gradient of softmax given its output `y` and upstream gradient `dy`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), dy.data());
    let out = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let dot: f64 = (0..len).map(|a| yd[idx(a)] * gd[idx(a)]).sum();
            for a in 0..len {
                out[idx(a)] = yd[idx(a)] * (gd[idx(a)] - dot);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct six-fold loop, independent of im2col.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, pad: Padding) -> Tensor {
        let [n, ci, h, wd] = x.dims4();
        let [co, _, k, _] = w.dims4();
        let p = pad.amount(k) as isize;
        let (ho, wo) = conv_output_size(h, wd, k, pad).unwrap();
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for item in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize + ky as isize - p;
                                    let ix = ox as isize + kx as isize - p;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.at4(o, c, ky, kx) * x.at4(item, c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.data_mut()[((item * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_kernel_valid_gives_zeros() {
        let x = Tensor::full(&[1, 1, 5, 5], 0.7);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, Padding::Valid).unwrap();
        assert_eq!(y, Tensor::zeros(&[1, 1, 3, 3]));
    }

    #[test]
    fn identity_kernel_same_padding_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 1, 6, 7], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for pad in [Padding::Valid, Padding::Same] {
            for k in [1usize, 3, 5] {
                let x = random(&[1, 2, 7, 7], &mut rng);
                let w = random(&[4, 2, k, k], &mut rng);
                let b = random(&[4], &mut rng);
                let fast = conv2d_forward(&x, &w, &b, pad).unwrap();
                let slow = naive_conv(&x, &w, &b, pad);
                assert!(fast.max_abs_diff(&slow) < 1e-12, "pad {pad:?} k {k}");
            }
        }
    }

    #[test]
    fn non_square_inputs_and_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&[3, 2, 9, 6], &mut rng);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        for pad in [Padding::Valid, Padding::Same] {
            let fast = conv2d_forward(&x, &w, &b, pad).unwrap();
            assert!(fast.max_abs_diff(&naive_conv(&x, &w, &b, pad)) < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &w, &Tensor::zeros(&[1]), Padding::Valid),
            Err(Error::Shape(_))
        ));
        let small = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(
            conv2d_forward(&small, &w, &Tensor::zeros(&[1]), Padding::Valid),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn selu_values() {
        assert_eq!(selu_scalar(0.0), 0.0);
        assert_eq!(selu_scalar(1.0), 1.050_700_987_355_480_5);
        let expected = SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0);
        assert!((selu_scalar(-1.0) - expected).abs() < 1e-15);
        assert!((selu_scalar(-1.0) + 1.111_330_7).abs() < 1e-7);
        // continuity at zero
        assert!((selu_scalar(1e-13) - selu_scalar(-1e-13)).abs() < 1e-12);
    }

    #[test]
    fn softmax_values() {
        let t = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax(&t, 0).unwrap().data(), &[0.5, 0.5]);
        let t = Tensor::from_vec(vec![2], vec![1000.0, 1000.0 + 2f64.ln()]).unwrap();
        let s = softmax(&t, 0).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    }
}
