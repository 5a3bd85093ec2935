//! Per-sample kernels behind the layers.
//!
//! The slice-level functions operate on one batch element and are what the
//! layers call in their loops. The `Tensor`-level wrappers (`conv1d_forward`,
//! `maxpool1d_forward`, ...) take unbatched inputs and exist for direct use
//! and testing.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Dot product with eight independent accumulators, combined in a fixed order.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for j in 0..8 {
            acc[j] += xa[j] * xb[j];
        }
    }
    let mut tail = T::ZERO;
    for j in chunks * 8..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Output length of a same-padded convolution.
pub fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Range of output positions `t` (stride 1) for which `t + shift` indexes
/// inside `[0, len)`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Geometry of a 1-D convolution on one sample.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub len: usize,
}

impl ConvGeom {
    pub fn out_len(&self) -> usize {
        conv_out_len(self.len, self.stride)
    }

    fn pad(&self) -> isize {
        ((self.kernel - 1) / 2) as isize
    }
}

/// Cross-correlation with zero same-padding of `(K-1)/2` per side.
///
/// `x` is `[in_ch, len]`, `w` is `[out_ch, in_ch, kernel]`, `out` is
/// `[out_ch, out_len]` and is overwritten.
pub fn conv1d_same<T: Scalar>(g: ConvGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let out_len = g.out_len();
    let pad = g.pad();
    for c in 0..g.out_ch {
        let row = &mut out[c * out_len..(c + 1) * out_len];
        row.iter_mut().for_each(|v| *v = b[c]);
        for i in 0..g.in_ch {
            let xi = &x[i * g.len..(i + 1) * g.len];
            let wci = &w[(c * g.in_ch + i) * g.kernel..(c * g.in_ch + i + 1) * g.kernel];
            for (k, &wv) in wci.iter().enumerate() {
                let shift = k as isize - pad;
                if g.stride == 1 {
                    let (lo, hi) = valid_range(g.len, shift);
                    let xs = &xi[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    axpy(wv, xs, &mut row[lo..hi]);
                } else {
                    for (t, o) in row.iter_mut().enumerate() {
                        let j = (t * g.stride) as isize + shift;
                        if j >= 0 && (j as usize) < g.len {
                            *o += wv * xi[j as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Backward of [`conv1d_same`]: accumulates into `dw`, `db` and `dx`.
pub fn conv1d_same_backward<T: Scalar>(
    g: ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let out_len = g.out_len();
    let pad = g.pad();
    for c in 0..g.out_ch {
        let grow = &dout[c * out_len..(c + 1) * out_len];
        db[c] += grow.iter().copied().sum::<T>();
        for i in 0..g.in_ch {
            let xi = &x[i * g.len..(i + 1) * g.len];
            let base = (c * g.in_ch + i) * g.kernel;
            for k in 0..g.kernel {
                let shift = k as isize - pad;
                let wv = w[base + k];
                let dxi = &mut dx[i * g.len..(i + 1) * g.len];
                if g.stride == 1 {
                    let (lo, hi) = valid_range(g.len, shift);
                    let (xlo, xhi) = ((lo as isize + shift) as usize, (hi as isize + shift) as usize);
                    dw[base + k] += dot(&grow[lo..hi], &xi[xlo..xhi]);
                    axpy(wv, &grow[lo..hi], &mut dxi[xlo..xhi]);
                } else {
                    let mut acc = T::ZERO;
                    for (t, &gv) in grow.iter().enumerate() {
                        let j = (t * g.stride) as isize + shift;
                        if j >= 0 && (j as usize) < g.len {
                            acc += gv * xi[j as usize];
                            dxi[j as usize] += wv * gv;
                        }
                    }
                    dw[base + k] += acc;
                }
            }
        }
    }
}

/// Max over non-overlapping windows of `width`; the trailing remainder is
/// dropped. Writes the winning input index (first on ties) into `argmax`.
pub fn maxpool1d<T: Scalar>(
    x: &[T],
    channels: usize,
    len: usize,
    width: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let out_len = len / width;
    for c in 0..channels {
        for t in 0..out_len {
            let start = c * len + t * width;
            let mut best = start;
            for j in start + 1..start + width {
                if x[j] > x[best] {
                    best = j;
                }
            }
            out[c * out_len + t] = x[best];
            argmax[c * out_len + t] = best;
        }
    }
}

/// Repeats each sample `factor` times along the length axis.
pub fn upsample_nearest1d<T: Scalar>(x: &[T], factor: usize, out: &mut [T]) {
    for (i, &v) in x.iter().enumerate() {
        out[i * factor..(i + 1) * factor].iter_mut().for_each(|o| *o = v);
    }
}

/// `out[m] = W[m,:] . x + bias[m]` with `W` row-major `[m, n]`.
pub fn dense<T: Scalar>(x: &[T], w: &[T], bias: &[T], out: &mut [T]) {
    let n = x.len();
    for (m, o) in out.iter_mut().enumerate() {
        *o = dot(&w[m * n..(m + 1) * n], x) + bias[m];
    }
}

/// Backward of [`dense`] for one sample.
pub fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let n = x.len();
    for (m, &gm) in dout.iter().enumerate() {
        db[m] += gm;
        axpy(gm, x, &mut dw[m * n..(m + 1) * n]);
        axpy(gm, &w[m * n..(m + 1) * n], dx);
    }
}

fn expect_rank<T: Scalar>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(format!("{what}: expected rank {rank}, got shape {:?}", t.shape())));
    }
    Ok(())
}

/// Single-sample convolution: `input [C_in, L]`, `weight [C_out, C_in, K]`.
pub fn conv1d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<Tensor<T>> {
    expect_rank(input, 2, "conv1d input")?;
    expect_rank(weight, 3, "conv1d weight")?;
    let (in_ch, len) = (input.shape()[0], input.shape()[1]);
    let (out_ch, w_in, kernel) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if w_in != in_ch {
        return Err(Error::dim(format!("conv1d: weight expects {w_in} input channels, input has {in_ch}")));
    }
    if bias.len() != out_ch {
        return Err(Error::dim(format!("conv1d: bias length {} != {out_ch}", bias.len())));
    }
    if kernel % 2 == 0 {
        return Err(Error::Parameter(format!("conv1d kernel width must be odd, got {kernel}")));
    }
    if stride == 0 {
        return Err(Error::Parameter("conv1d stride must be >= 1".into()));
    }
    let geom = ConvGeom { in_ch, out_ch, kernel, stride, len };
    let mut out = Tensor::zeros(&[out_ch, geom.out_len()]);
    conv1d_same(geom, input.data(), weight.data(), bias, out.data_mut());
    Ok(out)
}

/// Single-sample max pooling over `input [C, L]`.
pub fn maxpool1d_forward<T: Scalar>(input: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    expect_rank(input, 2, "maxpool1d input")?;
    let (c, len) = (input.shape()[0], input.shape()[1]);
    if width == 0 || width > len {
        return Err(Error::dim(format!("maxpool1d: width {width} invalid for length {len}")));
    }
    let mut out = Tensor::zeros(&[c, len / width]);
    let mut arg = vec![0; out.len()];
    maxpool1d(input.data(), c, len, width, out.data_mut(), &mut arg);
    Ok(out)
}

/// Single-sample dense layer: `weight [m, n]`, `input [n]`.
pub fn dense_forward<T: Scalar>(input: &[T], weight: &Tensor<T>, bias: &[T]) -> Result<Vec<T>> {
    expect_rank(weight, 2, "dense weight")?;
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != n || bias.len() != m {
        return Err(Error::dim(format!(
            "dense: weight [{m}, {n}] vs input {} and bias {}",
            input.len(),
            bias.len()
        )));
    }
    let mut out = vec![T::ZERO; m];
    dense(input, weight.data(), bias, &mut out);
    Ok(out)
}

pub fn relu_forward<T: Scalar>(input: &[T]) -> Vec<T> {
    input.iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect()
}

/// Single-sample nearest-neighbour upsampling of `input [C, L]`.
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    expect_rank(input, 2, "upsample input")?;
    if factor == 0 {
        return Err(Error::Parameter("upsample factor must be >= 1".into()));
    }
    let (c, len) = (input.shape()[0], input.shape()[1]);
    let mut out = Tensor::zeros(&[c, len * factor]);
    upsample_nearest1d(input.data(), factor, out.data_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, data.len()], data.to_vec()).unwrap()
    }

    /// Hand-expanded same-padded cross-correlation, used as the oracle.
    fn naive_conv(x: &[f64], k: &[f64]) -> Vec<f64> {
        let p = (k.len() - 1) / 2;
        let mut padded = vec![0.0; p];
        padded.extend_from_slice(x);
        padded.extend(std::iter::repeat_n(0.0, p));
        (0..x.len())
            .map(|t| (0..k.len()).map(|j| k[j] * padded[t + j]).sum())
            .collect()
    }

    #[test]
    fn conv_difference_kernel() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let k = [1.0, 0.0, -1.0];
        let oracle = naive_conv(&x, &k);
        assert_eq!(oracle, vec![-2.0, -2.0, -2.0, 3.0]);
        let w = Tensor::new(&[1, 1, 3], k.to_vec()).unwrap();
        let out = conv1d_forward(&t1(&x), &w, &[0.0], 1).unwrap();
        assert_eq!(out.data(), oracle.as_slice());
    }

    #[test]
    fn conv_identity_kernel() {
        let x: Vec<f64> = (0..17).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = Tensor::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let out = conv1d_forward(&t1(&x), &w, &[0.0], 1).unwrap();
        assert_eq!(out.data(), x.as_slice());
    }

    #[test]
    fn conv_keeps_length_400() {
        let x = Tensor::<f32>::zeros(&[1, 400]);
        let w = Tensor::<f32>::zeros(&[16, 1, 5]);
        let out = conv1d_forward(&x, &w, &[0.0; 16], 1).unwrap();
        assert_eq!(out.shape(), &[16, 400]);
    }

    #[test]
    fn conv_strided_matches_subsampled() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.3 - 1.0).collect();
        let k = [0.5, -1.0, 2.0, 0.25, 1.5];
        let full = naive_conv(&x, &k);
        let w = Tensor::new(&[1, 1, 5], k.to_vec()).unwrap();
        let out = conv1d_forward(&t1(&x), &w, &[0.0], 3).unwrap();
        assert_eq!(out.shape(), &[1, 4]);
        for (t, v) in out.data().iter().enumerate() {
            assert!((v - full[t * 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let x = Tensor::<f32>::zeros(&[2, 10]);
        let w = Tensor::<f32>::zeros(&[4, 3, 3]);
        assert!(matches!(conv1d_forward(&x, &w, &[0.0; 4], 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_examples() {
        let out = maxpool1d_forward(&t1(&[1.0, 3.0, 2.0, 5.0]), 2).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
        let out = maxpool1d_forward(&t1(&[7.0]), 1).unwrap();
        assert_eq!(out.data(), &[7.0]);
        assert!(matches!(maxpool1d_forward(&t1(&[1.0, 2.0]), 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_four_times_gives_25() {
        let mut t = Tensor::<f32>::zeros(&[1, 400]);
        for _ in 0..4 {
            t = maxpool1d_forward(&t, 2).unwrap();
        }
        assert_eq!(t.shape(), &[1, 25]);
    }

    #[test]
    fn maxpool_drops_remainder_and_breaks_ties_low() {
        let mut out = [0.0f64; 2];
        let mut arg = [0usize; 2];
        maxpool1d(&[4.0, 4.0, 1.0, 2.0, 9.0], 1, 5, 2, &mut out, &mut arg);
        assert_eq!(out, [4.0, 2.0]);
        assert_eq!(arg, [0, 3]);
    }

    #[test]
    fn dense_examples() {
        let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&[1.0, -2.0, 3.5], &eye, &[0.0; 3]).unwrap(), vec![1.0, -2.0, 3.5]);
        let w = Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&[2.0, 3.0], &w, &[1.0]).unwrap(), vec![6.0]);
        assert!(dense_forward(&[2.0], &w, &[1.0]).is_err());
        let head = Tensor::<f32>::zeros(&[400, 800]);
        assert_eq!(dense_forward(&[0.0; 800], &head, &[0.0; 400]).unwrap().len(), 400);
    }

    #[test]
    fn relu_and_upsample() {
        assert_eq!(relu_forward(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        let up = upsample_nearest(&t1(&[1.0, 2.0]), 2).unwrap();
        assert_eq!(up.data(), &[1.0, 1.0, 2.0, 2.0]);
        let mut t = Tensor::<f32>::zeros(&[1, 25]);
        for _ in 0..4 {
            t = upsample_nearest(&t, 2).unwrap();
        }
        assert_eq!(t.shape(), &[1, 400]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.05).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
