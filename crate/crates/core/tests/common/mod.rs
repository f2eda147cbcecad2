//! Reference implementations used only as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of eigenvalues of the symmetric `a` (n×n, row-major) strictly below `sigma`,
/// by Sylvester's law of inertia: count negative pivots of the LDLᵀ factorization of A − σI.
pub fn count_below(a: &[f64], n: usize, sigma: f64) -> usize {
    let mut m: Vec<f64> = a.to_vec();
    for i in 0..n {
        m[i * n + i] -= sigma;
    }
    let scale = a.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let mut neg = 0;
    for k in 0..n {
        let mut p = m[k * n + k];
        if p == 0.0 {
            // nudge an exact zero pivot; it moves the count by at most one eigenvalue at σ
            p = -f64::EPSILON * scale;
        }
        if p < 0.0 {
            neg += 1;
        }
        for i in (k + 1)..n {
            let l = m[i * n + k] / p;
            for j in (k + 1)..n {
                m[i * n + j] -= l * m[k * n + j];
            }
        }
    }
    neg
}

/// All eigenvalues (ascending) by bisection on the inertia count.
pub fn eigenvalues_bisection(a: &[f64], n: usize) -> Vec<f64> {
    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum();
        lo = lo.min(a[i * n + i] - r);
        hi = hi.max(a[i * n + i] + r);
    }
    let (lo, hi) = (lo - 1.0, hi + 1.0);
    (0..n)
        .map(|k| {
            // smallest x with count_below(x) > k
            let (mut l, mut h) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (l + h);
                if mid == l || mid == h {
                    break;
                }
                if count_below(a, n, mid) > k {
                    h = mid;
                } else {
                    l = mid;
                }
            }
            0.5 * (l + h)
        })
        .collect()
}

/// Singular values (descending) of the r×c matrix `x` as the non-negative
/// eigenvalues of the augmented matrix [[0, X], [Xᵀ, 0]].
pub fn singular_values_oracle(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let n = r + c;
    let mut aug = vec![0.0; n * n];
    for i in 0..r {
        for j in 0..c {
            aug[i * n + r + j] = x[i * c + j];
            aug[(r + j) * n + i] = x[i * c + j];
        }
    }
    let eig = eigenvalues_bisection(&aug, n);
    // the top min(r, c) eigenvalues are +σ_i
    let k = r.min(c);
    let mut s: Vec<f64> = eig[n - k..].iter().map(|v| v.max(0.0)).collect();
    s.reverse();
    s
}

/// Ranks by pairwise counting: 1 + #{smaller} + ½·#{equal, other}.
pub fn pairwise_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut r = 1.0;
            for (j, &y) in xs.iter().enumerate() {
                if j != i {
                    if y < x {
                        r += 1.0;
                    } else if y == x {
                        r += 0.5;
                    }
                }
            }
            r
        })
        .collect()
}

/// Closed-form E_w[𝕀{wᵀx ≥ 0, wᵀy ≥ 0}]·xᵀy for w ~ N(0, I): xᵀy(π − θ)/(2π).
pub fn arccos_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    let theta = (dot / (nx * ny)).clamp(-1.0, 1.0).acos();
    dot * (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Relative agreement on values of magnitude ≥ `floor`; smaller values are not compared.
pub fn rel_close(got: f64, want: f64, rel: f64, floor: f64) -> bool {
    want.abs() < floor || (got - want).abs() <= rel * want.abs()
}

pub mod pipeline {
    //! Random conv→norm→relu→pool→linear stacks built directly from the tensor ops,
    //! checked against central differences of the plain-f64 forward pass.

    use super::{normal_vec, rng};
    use dextr::jet::{Jet2, Scalar};
    use dextr::proxy::{circular_input, CircularInputConfig};
    use dextr::tensor::{avg_pool2x2, avg_pool3x3, conv2d, instance_norm, linear, relu, Tensor};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub const FD_STEP: f64 = 1e-4;
    pub const FD_REL: f64 = 1e-5;
    pub const FD_FLOOR: f64 = 1e-3;

    struct ConvLayer {
        weight: Tensor<f64>,
        stride: usize,
        pad: usize,
        norm: bool,
    }

    enum Pool {
        None,
        Avg3,
        Avg2,
    }

    pub struct Pipeline {
        dims: [usize; 3],
        convs: Vec<ConvLayer>,
        pool: Pool,
        fc: Tensor<f64>,
        bias: Vec<f64>,
    }

    impl Pipeline {
        pub fn random(r: &mut ChaCha8Rng) -> Pipeline {
            let c = r.random_range(1..=3);
            let (mut h, mut w) = (r.random_range(4..=8), r.random_range(4..=8));
            let dims = [c, h, w];
            let mut cin = c;
            let mut convs = Vec::new();
            for _ in 0..r.random_range(1..=2) {
                let k = r.random_range(1..=3);
                let stride = if h >= 6 && w >= 6 { r.random_range(1..=2) } else { 1 };
                let pad = k / 2;
                let cout = r.random_range(2..=4);
                let std = (2.0 / (cin * k * k) as f64).sqrt();
                let data = normal_vec(r, cout * cin * k * k).into_iter().map(|x| x * std).collect();
                convs.push(ConvLayer {
                    weight: Tensor::new(vec![cout, cin, k, k], data).unwrap(),
                    stride,
                    pad,
                    norm: r.random_bool(0.5),
                });
                h = (h + 2 * pad - k) / stride + 1;
                w = (w + 2 * pad - k) / stride + 1;
                cin = cout;
            }
            let pool = match r.random_range(0..3) {
                0 => Pool::None,
                1 => Pool::Avg3,
                _ => {
                    if h >= 2 && w >= 2 {
                        (h, w) = (h / 2, w / 2);
                        Pool::Avg2
                    } else {
                        Pool::None
                    }
                }
            };
            let nin = cin * h * w;
            let nout = r.random_range(2..=5);
            let fc = Tensor::new(vec![nout, nin], normal_vec(r, nout * nin)).unwrap();
            let bias = normal_vec(r, nout);
            Pipeline { dims, convs, pool, fc, bias }
        }

        pub fn n1(&self) -> usize {
            self.dims.iter().product()
        }

        /// Output plus the sign of every pre-activation.
        pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<bool>) {
            let [c, h, w] = self.dims;
            let mut t = Tensor::new(vec![1, c, h, w], x.data().to_vec()).unwrap();
            let mut signs = Vec::new();
            for l in &self.convs {
                t = conv2d(&t, &l.weight, l.stride, l.pad).unwrap();
                if l.norm {
                    t = instance_norm(&t).unwrap();
                }
                signs.extend(t.data().iter().map(|v| v.value() > 0.0));
                t = relu(&t);
            }
            t = match self.pool {
                Pool::None => t,
                Pool::Avg3 => avg_pool3x3(&t).unwrap(),
                Pool::Avg2 => avg_pool2x2(&t).unwrap(),
            };
            (linear(&t, &self.fc, &self.bias).unwrap(), signs)
        }
    }

    fn at(circ: &CircularInputConfig, theta: f64) -> Tensor<Jet2> {
        circular_input(&circ.clone().with_theta(theta)).unwrap()
    }

    fn values(t: &Tensor<Jet2>) -> Tensor<f64> {
        Tensor::new(t.shape().to_vec(), t.values()).unwrap()
    }

    /// Worst relative error over checked components, or `None` if every θ tried sat near a ReLU kink.
    ///
    /// First derivatives are compared with central differences of the f64 pass; second
    /// derivatives with central differences of the (already checked) first derivatives,
    /// which keeps rounding at `eps/h` instead of `eps/h²`.
    pub fn check(p: &Pipeline, seed: u64) -> Option<f64> {
        let mut r = rng(seed ^ 0xfd);
        let h = FD_STEP;
        for _ in 0..20 {
            let circ = CircularInputConfig { n1: p.n1(), q: 1.0, theta: r.random::<f64>() * std::f64::consts::TAU, seed };
            let th = circ.theta;
            let (jet, s0) = p.forward(&at(&circ, th));
            let (fp, sp) = p.forward(&values(&at(&circ, th + h)));
            let (fm, sm) = p.forward(&values(&at(&circ, th - h)));
            if s0 != sp || s0 != sm {
                continue;
            }
            let (jp, _) = p.forward(&at(&circ, th + h));
            let (jm, _) = p.forward(&at(&circ, th - h));
            let (f0, _) = p.forward(&values(&at(&circ, th)));
            let mut worst = 0.0f64;
            for i in 0..jet.len() {
                let j = jet.data()[i];
                let mut cmp = |got: f64, want: f64| {
                    if want.abs() >= FD_FLOOR {
                        worst = worst.max((got - want).abs() / want.abs());
                    }
                };
                cmp(j.v, f0.data()[i]);
                cmp(j.d1, (fp.data()[i] - fm.data()[i]) / (2.0 * h));
                cmp(j.d2, (jp.data()[i].d1 - jm.data()[i].d1) / (2.0 * h));
            }
            return Some(worst);
        }
        None
    }
}
