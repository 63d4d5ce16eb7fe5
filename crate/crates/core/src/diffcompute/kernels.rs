//! Per-sample convolution kernels on raw slices.
//!
//! Layouts are channel-major: a `C x H x W` image is `C` planes of `H * W`
//! values. Column buffers are `(C * k * k) x P` with one column per output
//! position.

use crate::diffcompute::scalar::{gemm, MatRef};
use crate::diffcompute::Scalar;

/// Window geometry of a valid (unpadded) strided convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Number of window positions along each axis.
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Gathers every `k x k` window into columns.
pub(crate) fn im2col<T: Scalar>(g: &Geometry, src: &[T], cols: &mut [T]) {
    let p = g.positions();
    debug_assert!((g.out_h - 1) * g.stride + g.kernel <= g.height);
    debug_assert!((g.out_w - 1) * g.stride + g.kernel <= g.width);
    for c in 0..g.channels {
        let plane = &src[c * g.plane()..(c + 1) * g.plane()];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let base = (oh * g.stride + ki) * g.width + kj;
                    let out = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if g.stride == 1 {
                        out.copy_from_slice(&plane[base..base + g.out_w]);
                    } else {
                        for (ow, o) in out.iter_mut().enumerate() {
                            *o = plane[base + ow * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating overlaps into `dst`.
pub(crate) fn col2im_add<T: Scalar>(g: &Geometry, cols: &[T], dst: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.plane()..(c + 1) * g.plane()];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    let base = (oh * g.stride + ki) * g.width + kj;
                    let line = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    for (ow, &v) in line.iter().enumerate() {
                        plane[base + ow * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// `y = W * im2col(x) + b` for one sample; `w` is `out_channels x col_rows`.
pub(crate) fn conv_forward<T: Scalar>(
    g: &Geometry,
    w: &[T],
    bias: &[T],
    x: &[T],
    cols: &mut [T],
    y: &mut [T],
) {
    let out_c = bias.len();
    let p = g.positions();
    im2col(g, x, cols);
    gemm(MatRef::new(w, out_c, g.col_rows()), MatRef::new(cols, g.col_rows(), p), T::zero(), y);
    for (o, &b) in bias.iter().enumerate() {
        y[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += b);
    }
}

/// Accumulates weight/bias gradients and optionally the input gradient for one sample.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    g: &Geometry,
    w: &[T],
    x: &[T],
    dy: &[T],
    cols: &mut [T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
    out_c: usize,
) {
    let p = g.positions();
    let rows = g.col_rows();
    if let Some(dw) = dw {
        im2col(g, x, cols);
        gemm(MatRef::new(dy, out_c, p), MatRef::new(cols, rows, p).t(), T::one(), dw);
    }
    if let Some(db) = db {
        for (o, b) in db.iter_mut().enumerate() {
            *b += dy[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
    }
    if let Some(dx) = dx {
        gemm(MatRef::new(w, out_c, rows).t(), MatRef::new(dy, out_c, p), T::zero(), cols);
        col2im_add(g, cols, dx);
    }
}

/// Transposed convolution for one sample. `g` describes the *output* image
/// with `out_h x out_w` equal to the input's spatial size; `w` is
/// `in_channels x (out_channels * k * k)`.
pub(crate) fn deconv_forward<T: Scalar>(
    g: &Geometry,
    w: &[T],
    bias: &[T],
    x: &[T],
    in_c: usize,
    cols: &mut [T],
    y: &mut [T],
) {
    let p = g.positions();
    gemm(MatRef::new(w, in_c, g.col_rows()).t(), MatRef::new(x, in_c, p), T::zero(), cols);
    y.iter_mut().for_each(|v| *v = T::zero());
    col2im_add(g, cols, y);
    let plane = g.plane();
    for (o, &b) in bias.iter().enumerate() {
        y[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv_backward<T: Scalar>(
    g: &Geometry,
    w: &[T],
    x: &[T],
    dy: &[T],
    in_c: usize,
    cols: &mut [T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let p = g.positions();
    let rows = g.col_rows();
    if let Some(db) = db {
        let plane = g.plane();
        for (o, b) in db.iter_mut().enumerate() {
            *b += dy[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
        }
    }
    if dw.is_none() && dx.is_none() {
        return;
    }
    im2col(g, dy, cols);
    if let Some(dw) = dw {
        gemm(MatRef::new(x, in_c, p), MatRef::new(cols, rows, p).t(), T::one(), dw);
    }
    if let Some(dx) = dx {
        gemm(MatRef::new(w, in_c, rows), MatRef::new(cols, rows, p), T::zero(), dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(
        x: &[f64],
        w: &[f64],
        c: usize,
        h: usize,
        wd: usize,
        o: usize,
        k: usize,
        s: usize,
    ) -> Vec<f64> {
        let oh = (h - k) / s + 1;
        let ow = (wd - k) / s + 1;
        let mut y = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                acc += w[((oc * c + ic) * k + ki) * k + kj]
                                    * x[(ic * h + i * s + ki) * wd + j * s + kj];
                            }
                        }
                    }
                    y[(oc * oh + i) * ow + j] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_forward_matches_nested_loops() {
        let (c, h, wd, o, k, s) = (2, 7, 6, 3, 3, 2);
        let x: Vec<f64> = (0..c * h * wd).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 5) % 13) as f64 * 0.1 - 0.6).collect();
        let g = Geometry {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride: s,
            out_h: (h - k) / s + 1,
            out_w: (wd - k) / s + 1,
        };
        let mut cols = vec![0.0; g.col_rows() * g.positions()];
        let mut y = vec![0.0; o * g.positions()];
        conv_forward(&g, &w, &[0.0; 3], &x, &mut cols, &mut y);
        let want = naive_conv(&x, &w, c, h, wd, o, k, s);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x, c
        let g = Geometry { channels: 2, height: 7, width: 7, kernel: 3, stride: 2, out_h: 3, out_w: 3 };
        let x: Vec<f64> = (0..2 * 49).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.positions()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&g, &c, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
