//! 3D convolution (cross-correlation) and the dense affine map.
//!
//! Convolution lowers each sample to a column matrix (`im2col`) and hands the
//! product to a blocked GEMM. The column matrix is rebuilt during backward
//! instead of being kept alive with the graph.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-major `C = op(A) * op(B) + beta * C` with `op(A)` of size `m x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the three slices, whose lengths are checked in debug builds
    // and guaranteed by every caller in this module.
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

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    /// Calls `f(row, position, source_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d, h, w] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.output;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        let mut row = 0;
        for c in 0..self.channels {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        for z in 0..od {
                            let iz = (z * sd + a) as isize - pd as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * sh + b) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src_row = ((c * d + iz as usize) * h + iy as usize) * w;
                                let dst_row = (z * oh + y) * ow;
                                for x in 0..ow {
                                    let ix = (x * sw + e) as isize - pw as isize;
                                    if ix >= 0 && ix < w as isize {
                                        f(row, dst_row + x, src_row + ix as usize);
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, sample: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.rows() * p];
        self.for_each_tap(|r, q, s| cols[r * p + q] = sample[s]);
        cols
    }

    fn col2im_add(&self, cols: &[f64], sample_grad: &mut [f64]) {
        let p = self.positions();
        self.for_each_tap(|r, q, s| sample_grad[s] += cols[r * p + q]);
    }
}

impl Tensor {
    /// Cross-correlation of `[N, C, D, H, W]` input with `[K, C, kd, kh, kw]`
    /// weights plus a per-output-channel bias.
    pub fn conv3d(&self, weight: &Tensor, bias: &Tensor, stride: [usize; 3], padding: [usize; 3]) -> Result<Tensor> {
        let (n, c, input) = match *self.shape() {
            [n, c, d, h, w] => (n, c, [d, h, w]),
            ref s => {
                return Err(Error::shape(
                    "conv3d",
                    format!("input must be [N, C, D, H, W], got {s:?}"),
                ))
            }
        };
        let (k, kernel) = match *weight.shape() {
            [k, wc, kd, kh, kw] if wc == c => (k, [kd, kh, kw]),
            ref s => {
                return Err(Error::shape(
                    "conv3d",
                    format!("weight {s:?} does not match {c} input channels"),
                ))
            }
        };
        if bias.shape() != [k] {
            return Err(Error::shape(
                "conv3d",
                format!("bias {:?} does not match {k} output channels", bias.shape()),
            ));
        }
        if stride.contains(&0) {
            return Err(Error::shape("conv3d", "stride must be at least 1"));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * padding[a];
            if kernel[a] > padded {
                return Err(Error::shape(
                    "conv3d",
                    format!("kernel {kernel:?} exceeds padded input {input:?} (padding {padding:?})"),
                ));
            }
            output[a] = (padded - kernel[a]) / stride[a] + 1;
        }
        let geo = Geometry {
            channels: c,
            input,
            kernel,
            stride,
            padding,
            output,
        };
        let (rows, p) = (geo.rows(), geo.positions());
        let in_len = c * input.iter().product::<usize>();

        let mut out = vec![0.0; n * k * p];
        for (s, out_s) in out.chunks_exact_mut(k * p).enumerate() {
            for (ch, plane) in out_s.chunks_exact_mut(p).enumerate() {
                plane.fill(bias.data()[ch]);
            }
            let sample = &self.data()[s * in_len..(s + 1) * in_len];
            if geo.is_pointwise() {
                gemm(k, rows, p, weight.data(), false, sample, false, 1.0, out_s);
            } else {
                let cols = geo.im2col(sample);
                gemm(k, rows, p, weight.data(), false, &cols, false, 1.0, out_s);
            }
        }

        let (x, wt) = (self.clone(), weight.clone());
        let bias_needs = bias.requires_grad();
        Tensor::from_op(
            "conv3d",
            vec![n, k, output[0], output[1], output[2]],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g| {
                let mut dx = x.requires_grad().then(|| vec![0.0; x.numel()]);
                let mut dw = wt.requires_grad().then(|| vec![0.0; wt.numel()]);
                let mut db = bias_needs.then(|| vec![0.0; k]);
                let mut dcols = vec![0.0; rows * p];
                for (s, g_s) in g.chunks_exact(k * p).enumerate() {
                    if let Some(db) = db.as_mut() {
                        for (ch, plane) in g_s.chunks_exact(p).enumerate() {
                            db[ch] += plane.iter().sum::<f64>();
                        }
                    }
                    let sample = &x.data()[s * in_len..(s + 1) * in_len];
                    let cols;
                    let cols_ref = if geo.is_pointwise() {
                        sample
                    } else {
                        cols = geo.im2col(sample);
                        &cols
                    };
                    if let Some(dw) = dw.as_mut() {
                        gemm(k, p, rows, g_s, false, cols_ref, true, 1.0, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dx_s = &mut dx[s * in_len..(s + 1) * in_len];
                        if geo.is_pointwise() {
                            gemm(rows, k, p, wt.data(), true, g_s, false, 1.0, dx_s);
                        } else {
                            gemm(rows, k, p, wt.data(), true, g_s, false, 0.0, &mut dcols);
                            geo.col2im_add(&dcols, dx_s);
                        }
                    }
                }
                vec![dx, dw, db]
            }),
        )
    }

    /// `input · weight + bias` for `[N, F] x [F, G]`.
    pub fn dense(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, f, g) = match (self.shape(), weight.shape(), bias.shape()) {
            (&[n, f], &[wf, g], &[bg]) if wf == f && bg == g => (n, f, g),
            (x, w, b) => {
                return Err(Error::shape(
                    "dense",
                    format!("input {x:?}, weight {w:?} and bias {b:?} do not agree"),
                ))
            }
        };
        let mut out: Vec<f64> = bias.data().iter().copied().cycle().take(n * g).collect();
        gemm(n, f, g, self.data(), false, weight.data(), false, 1.0, &mut out);
        let (x, w) = (self.clone(), weight.clone());
        Tensor::from_op(
            "dense",
            vec![n, g],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |grad| {
                let dx = x.requires_grad().then(|| {
                    let mut dx = vec![0.0; n * f];
                    gemm(n, g, f, grad, false, w.data(), true, 0.0, &mut dx);
                    dx
                });
                let dw = w.requires_grad().then(|| {
                    let mut dw = vec![0.0; f * g];
                    gemm(f, n, g, x.data(), true, grad, false, 0.0, &mut dw);
                    dw
                });
                let mut db = vec![0.0; g];
                for row in grad.chunks_exact(g) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                vec![dx, dw, Some(db)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let vals: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| (i as f64).sin() * 3.0).collect();
        let x = Tensor::constant(&[1, 2, 3, 4, 5], vals.clone()).unwrap();
        // Two output channels, each picking one input channel.
        let w = Tensor::constant(&[2, 2, 1, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let y = x.conv3d(&w, &b, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y.data(), vals.as_slice());
    }

    #[test]
    fn all_ones_kernel_on_constant_volume() {
        let c = 1.75;
        let x = Tensor::constant(&[1, 1, 5, 4, 6], vec![c; 120]).unwrap();
        let w = Tensor::constant(&[1, 1, 3, 3, 3], vec![1.0; 27]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = x.conv3d(&w, &b, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 2, 4]);
        assert!(y.data().iter().all(|&v| v == 27.0 * c));
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::zeros(&[1, 1, 7, 6, 5]).unwrap();
        let w = Tensor::zeros(&[3, 1, 3, 2, 3]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = x.conv3d(&w, &b, [2, 1, 3], [1, 0, 2]).unwrap();
        // floor((in + 2 pad - k) / stride) + 1
        assert_eq!(y.shape(), &[1, 3, 4, 5, 3]);
    }

    #[test]
    fn shape_errors_are_descriptive() {
        let x = Tensor::zeros(&[1, 2, 4, 4, 4]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let wrong_c = Tensor::zeros(&[1, 3, 3, 3, 3]).unwrap();
        let err = x.conv3d(&wrong_c, &b, [1, 1, 1], [1, 1, 1]).unwrap_err();
        assert!(err.to_string().contains("input channels"));
        let big = Tensor::zeros(&[1, 2, 5, 5, 5]).unwrap();
        assert!(x.conv3d(&big, &b, [1, 1, 1], [0, 0, 0]).is_err());
        let w = Tensor::zeros(&[1, 2, 3, 3, 3]).unwrap();
        assert!(x.conv3d(&w, &b, [0, 1, 1], [0, 0, 0]).is_err());
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let x = Tensor::constant(&[2, 3], vec![1.0, -2.0, 3.5, 0.25, 9.0, -4.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let id = Tensor::constant(&[3, 3], eye).unwrap();
        let zero_b = Tensor::zeros(&[3]).unwrap();
        assert_eq!(x.dense(&id, &zero_b).unwrap().data(), x.data());

        let zero_w = Tensor::zeros(&[3, 2]).unwrap();
        let b = Tensor::constant(&[2], vec![0.5, -1.5]).unwrap();
        assert_eq!(x.dense(&zero_w, &b).unwrap().data(), &[0.5, -1.5, 0.5, -1.5]);
        assert!(x.dense(&zero_w, &zero_b).is_err());
    }
}
