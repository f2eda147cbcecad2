//! Dense row-major tensors and the handful of CNN primitives the cell space
//! needs. Batch size is always 1; image tensors are `[1, C, H, W]`.

use crate::error::{Error, Result};
use crate::jet::{Jet2, Scalar};

/// Instance-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = Jet2> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape { op: "tensor", detail: format!("non-positive extent in {shape:?}") });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::default(); n] }
    }

    pub fn from_values(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&x| T::constant(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.value()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows of the feature matrix this tensor flattens to.
    pub fn channels(&self) -> usize {
        match self.shape.as_slice() {
            [_, c, ..] => *c,
            [n] => *n,
            _ => unreachable!("shape is never empty"),
        }
    }

    /// Columns of the feature matrix this tensor flattens to.
    pub fn spatial(&self) -> usize {
        match self.shape.as_slice() {
            [_, _, rest @ ..] => rest.iter().product(),
            _ => 1,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|x| x.scale(k))
    }

    fn image_dims(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [1, c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::Shape { op, detail: format!("expected [1, C, H, W], got {s:?}") }),
        }
    }
}

/// `wide[i] += Σ_t w[t] · plane[i + off_t]` over the K×K taps of one (co, ci) pair.
#[inline]
fn fused_taps<const K: usize>(wide: &mut [f64], plane: &[f64], w: &[f64], wp: usize) {
    let span = wide.len();
    let taps: [&[f64]; 9] = std::array::from_fn(|t| {
        let t = t.min(K * K - 1);
        &plane[(t / K) * wp + t % K..][..span]
    });
    let w: [f64; 9] = std::array::from_fn(|t| if t < K * K { w[t] } else { 0.0 });
    for i in 0..span {
        let mut acc = wide[i];
        for t in 0..K * K {
            acc += w[t] * taps[t][i];
        }
        wide[i] = acc;
    }
}

/// Strided variant of [`fused_taps`]; `out` is the dense `oh × ow` plane.
#[inline]
fn strided_taps<const K: usize>(out: &mut [f64], ow: usize, plane: &[f64], w: &[f64], wp: usize, stride: usize) {
    for (oy, row) in out.chunks_exact_mut(ow).enumerate() {
        for (ox, o) in row.iter_mut().enumerate() {
            let base = oy * stride * wp + ox * stride;
            let mut acc = *o;
            for ky in 0..K {
                let win = &plane[base + ky * wp..][..K];
                for kx in 0..K {
                    acc += w[ky * K + kx] * win[kx];
                }
            }
            *o = acc;
        }
    }
}

/// Cross-correlation with constant weights `[Cout, Cin, k, k]`, no bias.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<f64>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (cin, h, w) = input.image_dims("conv2d")?;
    let (cout, wcin, k) = match weight.shape() {
        [co, ci, kh, kw] if kh == kw => (*co, *ci, *kh),
        s => return Err(Error::Shape { op: "conv2d", detail: format!("weight must be [Cout, Cin, k, k], got {s:?}") }),
    };
    if wcin != cin {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("input has {cin} channels but weight expects {wcin}"),
        });
    }
    if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("kernel {k} with stride {stride}, pad {pad} does not fit {h}x{w}"),
        });
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![T::default(); cout * oh * ow];
    let src = input.data();
    let wts = weight.data();

    if k == 1 || k == 3 {
        // pad once per scalar component
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let plane_len = hp * wp;
        let mut padded = vec![0.0; T::LANES * cin * plane_len];
        for lane in 0..T::LANES {
            for ci in 0..cin {
                for y in 0..h {
                    let dst = ((lane * cin + ci) * hp + y + pad) * wp + pad;
                    for (d, x) in padded[dst..dst + w].iter_mut().zip(&src[(ci * h + y) * w..][..w]) {
                        *d = x.lane(lane);
                    }
                }
            }
        }
        // stride 1 computes rows of width `wp` and compacts; strided writes `ow` directly
        let span = if stride == 1 { (oh - 1) * wp + ow } else { oh * ow };
        let row_stride = if stride == 1 { wp } else { ow };
        let mut wide = vec![0.0; span];
        for co in 0..cout {
            for lane in 0..T::LANES {
                wide.fill(0.0);
                for ci in 0..cin {
                    let in_plane = &padded[(lane * cin + ci) * plane_len..][..plane_len];
                    let wk = &wts[(co * cin + ci) * k * k..][..k * k];
                    match (k, stride) {
                        (1, 1) => fused_taps::<1>(&mut wide, in_plane, wk, wp),
                        (3, 1) => fused_taps::<3>(&mut wide, in_plane, wk, wp),
                        (1, _) => strided_taps::<1>(&mut wide, ow, in_plane, wk, wp, stride),
                        _ => strided_taps::<3>(&mut wide, ow, in_plane, wk, wp, stride),
                    }
                }
                for oy in 0..oh {
                    let dst = &mut out[(co * oh + oy) * ow..][..ow];
                    for (d, &x) in dst.iter_mut().zip(&wide[oy * row_stride..][..ow]) {
                        d.set_lane(lane, x);
                    }
                }
            }
        }
        return Tensor::new(vec![1, cout, oh, ow], out);
    }

    // valid output columns for kernel offset kx: ox*stride + kx - pad in [0, w)
    let col_range = |kx: usize| -> (usize, usize) {
        let lo = pad.saturating_sub(kx).div_ceil(stride);
        let hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(ow) } else { 0 };
        (lo, hi.max(lo))
    };

    for co in 0..cout {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let in_plane = &src[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wts[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = col_range(kx);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let ix0 = x0 + kx - pad;
                            for (o, &x) in out_row[x0..x1].iter_mut().zip(&in_row[ix0..ix0 + (x1 - x0)]) {
                                *o = o.add_scaled(wv, x);
                            }
                        } else {
                            for (ox, o) in out_row.iter_mut().enumerate().take(x1).skip(x0) {
                                *o = o.add_scaled(wv, in_row[ox * stride + kx - pad]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![1, cout, oh, ow], out)
}

pub fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(Scalar::relu)
}

/// 3x3 average pooling, stride 1, pad 1; padded cells count toward the divisor.
pub fn avg_pool3x3<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.image_dims("avg_pool3x3")?;
    let src = input.data();
    let mut out = vec![T::default(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::default();
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        acc += src[base + yy * w + xx];
                    }
                }
                out[base + y * w + x] = acc.scale(1.0 / 9.0);
            }
        }
    }
    Tensor::new(vec![1, c, h, w], out)
}

/// 2x2 average pooling with stride 2 (reduction shortcut). Odd trailing rows/columns are dropped.
pub fn avg_pool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.image_dims("avg_pool2x2")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape { op: "avg_pool2x2", detail: format!("input {h}x{w} too small") });
    }
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let i = base + 2 * y * w + 2 * x;
                let s = src[i] + src[i + 1] + src[i + w] + src[i + w + 1];
                out.push(s.scale(0.25));
            }
        }
    }
    Tensor::new(vec![1, c, oh, ow], out)
}

/// Mean over spatial positions, giving `[1, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.image_dims("global_avg_pool")?;
    let hw = h * w;
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().fold(T::default(), |a, &x| a + x).scale(1.0 / hw as f64))
        .collect();
    Tensor::new(vec![1, c], out)
}

/// Per-channel normalization over spatial positions (batch-norm stand-in at batch size 1).
pub fn instance_norm<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = input.image_dims("instance_norm")?;
    let hw = h * w;
    let inv_n = 1.0 / hw as f64;
    let mut out = Vec::with_capacity(input.len());
    for plane in input.data().chunks_exact(hw) {
        let mean = plane.iter().fold(T::default(), |a, &x| a + x).scale(inv_n);
        let var = plane
            .iter()
            .fold(T::default(), |a, &x| {
                let d = x - mean;
                a + d * d
            })
            .scale(inv_n);
        let inv_std = T::constant(1.0) / (var + T::constant(NORM_EPS)).sqrt();
        out.extend(plane.iter().map(|&x| (x - mean) * inv_std));
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Fully connected layer on the flattened input: `weight` is `[out, in]`, `bias` is `[out]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<f64>, bias: &[f64]) -> Result<Tensor<T>> {
    let (nout, nin) = match weight.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::Shape { op: "linear", detail: format!("weight must be [out, in], got {s:?}") }),
    };
    if input.len() != nin || bias.len() != nout {
        return Err(Error::Shape {
            op: "linear",
            detail: format!("input has {} features, weight is {nout}x{nin}, bias has {}", input.len(), bias.len()),
        });
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(nin)
        .zip(bias)
        .map(|(row, &b)| row.iter().zip(x).fold(T::constant(b), |acc, (&wv, &xv)| acc.add_scaled(wv, xv)))
        .collect();
    Tensor::new(vec![nout], out)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { op: "add", detail: format!("{:?} vs {:?}", a.shape(), b.shape()) });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// The `none` operation: zeros shaped like the input.
pub fn zeroize<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(t.shape().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // Direct six-loop reference, independent of the row-sliced kernel above.
    fn conv_reference(x: &Tensor<f64>, wt: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let (cin, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (wt.shape()[0], wt.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                        * wt.data()[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_sums_window() {
        let x = Tensor::<f64>::from_values(vec![1, 1, 3, 3], &[1.0; 9]).unwrap();
        let wt = Tensor::from_values(vec![1, 1, 3, 3], &[1.0; 9]).unwrap();
        let y = conv2d(&x, &wt, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, vec![1, 1, 4, 5]);
        let wt = Tensor::from_values(vec![1, 1, 1, 1], &[1.0]).unwrap();
        assert_eq!(conv2d(&x, &wt, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(stride, k) in &[(1, 3), (2, 3), (1, 1), (2, 1)] {
            let x = random_tensor(&mut rng, vec![1, 2, 5, 5]);
            let wt = random_tensor(&mut rng, vec![3, 2, k, k]);
            let pad = (k - 1) / 2;
            let y = conv2d(&x, &wt, stride, pad).unwrap();
            let r = conv_reference(&x, &wt, stride, pad);
            assert_eq!(y.len(), r.len());
            for (a, b) in y.data().iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "stride {stride} k {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn jet_conv_is_componentwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(stride, k, pad) in &[(1, 3, 1), (2, 3, 1), (1, 1, 0), (2, 2, 0), (1, 3, 0)] {
            let parts: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut rng, vec![1, 3, 6, 6])).collect();
            let x = Tensor::new(
                vec![1, 3, 6, 6],
                (0..parts[0].len()).map(|i| Jet2::new(parts[0].data()[i], parts[1].data()[i], parts[2].data()[i])).collect(),
            )
            .unwrap();
            let wt = random_tensor(&mut rng, vec![2, 3, k, k]);
            let y = conv2d(&x, &wt, stride, pad).unwrap();
            let refs: Vec<Vec<f64>> = parts.iter().map(|p| conv_reference(p, &wt, stride, pad)).collect();
            for (i, j) in y.data().iter().enumerate() {
                for (got, r) in [j.v, j.d1, j.d2].iter().zip(&refs) {
                    assert!((got - r[i]).abs() < 1e-12, "stride {stride} k {k}");
                }
            }
        }
    }

    #[test]
    fn conv_shape_errors_name_dims() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 4, 4]);
        let wt = Tensor::zeros(vec![3, 5, 3, 3]);
        let err = conv2d(&x, &wt, 1, 1).unwrap_err().to_string();
        assert!(err.contains("2 channels") && err.contains("expects 5"), "{err}");
        let flat = Tensor::<f64>::zeros(vec![8]);
        assert!(conv2d(&flat, &wt, 1, 1).is_err());
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn pooling_and_norm() {
        let x = Tensor::<f64>::from_values(vec![1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = avg_pool3x3(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 10.0 / 9.0).abs() < 1e-15));
        assert_eq!(avg_pool2x2(&x).unwrap().data(), &[2.5]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let n = instance_norm(&x).unwrap();
        let mean: f64 = n.data().iter().sum::<f64>() / 4.0;
        let var: f64 = n.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.25 / (1.25 + NORM_EPS)).abs() < 1e-12);
    }

    #[test]
    fn linear_and_add() {
        let x = Tensor::<f64>::from_values(vec![2], &[1.0, -2.0]).unwrap();
        let wt = Tensor::from_values(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = linear(&x, &wt, &[0.5, 0.0]).unwrap();
        assert_eq!(y.data(), &[-2.5, -5.0]);
        assert_eq!(add(&y, &y).unwrap().data(), &[-5.0, -10.0]);
        assert!(add(&x, &Tensor::zeros(vec![3])).is_err());
        assert!(zeroize(&y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, vec![1, 2, 3, 3]);
        let once = relu(&x);
        assert_eq!(relu(&once), once);
    }
}
