//! Desk-scale checks of the theory behind the proxy: a two-layer ReLU
//! network trained by gradient descent on inputs of controlled collinearity,
//! and the σ_max ≥ 1 incidence of layer feature matrices in the cell space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::arch::sample_with;
use crate::engine::{self, RecordingSink};
use crate::error::{Error, Result};
use crate::eval::{spearman, with_threads};
use crate::linalg::{spectrum, FeatureMatrix, SymMatrix};
use crate::proxy::random_data_sample;
use crate::space::{instantiate, SpaceConfig};

/// Losses above this end a run and flag it as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e8;
/// Mixing weights toward the rank-1 projection; the last cohort is exactly rank 1.
pub const ALPHAS: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 0.95, 1.0];

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f(x) = m^{-1/2} Σ_r a_r relu(w_rᵀx)`; only `w` is trained.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    pub d: usize,
    pub m: usize,
    /// Row r is w_r.
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

impl TwoLayerNet {
    pub fn new(d: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(&mut rng, d * m);
        let a = (0..m).map(|_| if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 }).collect();
        TwoLayerNet { d, m, w, a }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.d..(r + 1) * self.d]
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        let s: f64 = (0..self.m).map(|r| self.a[r] * dot(self.row(r), x).max(0.0)).sum();
        s / (self.m as f64).sqrt()
    }

    pub fn outputs(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.output(x.row(i))).collect()
    }

    /// `½ Σ_i (f(x_i) − y_i)²`.
    pub fn loss(&self, x: &FeatureMatrix, y: &[f64]) -> f64 {
        0.5 * self.outputs(x).iter().zip(y).map(|(u, y)| (u - y) * (u - y)).sum::<f64>()
    }

    /// ∂L/∂w_r = m^{-1/2} a_r Σ_i (u_i − y_i) 𝕀{w_rᵀx_i > 0} x_i, flattened like `w`.
    pub fn gradient(&self, x: &FeatureMatrix, y: &[f64]) -> Vec<f64> {
        let resid: Vec<f64> = self.outputs(x).iter().zip(y).map(|(u, y)| u - y).collect();
        let scale = 1.0 / (self.m as f64).sqrt();
        let mut g = vec![0.0; self.w.len()];
        for r in 0..self.m {
            let gr = &mut g[r * self.d..(r + 1) * self.d];
            for (i, e) in resid.iter().enumerate() {
                let xi = x.row(i);
                if dot(self.row(r), xi) > 0.0 {
                    let k = scale * self.a[r] * e;
                    for (g, xv) in gr.iter_mut().zip(xi) {
                        *g += k * xv;
                    }
                }
            }
        }
        g
    }
}

/// Monte Carlo estimate of `H∞_ij = E_w[x_iᵀx_j 𝕀{wᵀx_i ≥ 0, wᵀx_j ≥ 0}]`, `w ~ N(0, I)`.
pub fn gram_h_infty(x: &FeatureMatrix, samples: usize, seed: u64) -> Result<SymMatrix> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
    }
    let (n, d) = (x.rows(), x.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut both = vec![0usize; n * n];
    let mut active = vec![false; n];
    for _ in 0..samples {
        let w = gaussian(&mut rng, d);
        for (i, a) in active.iter_mut().enumerate() {
            *a = dot(&w, x.row(i)) >= 0.0;
        }
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i..n {
                if active[j] {
                    both[i * n + j] += 1;
                }
            }
        }
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(x.row(i), x.row(j)) * both[i * n + j] as f64 / samples as f64;
            h[i * n + j] = v;
            h[j * n + i] = v;
        }
    }
    SymMatrix::new(n, h)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRun {
    /// Loss before each step and after the last one.
    pub losses: Vec<f64>,
    pub diverged: bool,
    /// First step whose loss is at most `tau · loss₀`.
    pub steps_to_threshold: Option<usize>,
    /// Least-squares slope of −ln(loss) per step up to the threshold (or the end).
    pub decay_rate: f64,
}

pub fn train_two_layer(net: &mut TwoLayerNet, x: &FeatureMatrix, y: &[f64], gamma: f64, steps: usize, tau: f64) -> Result<TrainRun> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {gamma}")));
    }
    if x.cols() != net.d || y.len() != x.rows() {
        return Err(Error::InvalidArgument(format!(
            "data is {}x{} with {} labels, network expects d = {}",
            x.rows(),
            x.cols(),
            y.len(),
            net.d
        )));
    }
    let mut losses = vec![net.loss(x, y)];
    let mut diverged = false;
    for _ in 0..steps {
        let g = net.gradient(x, y);
        for (w, g) in net.w.iter_mut().zip(&g) {
            *w -= gamma * g;
        }
        let l = net.loss(x, y);
        losses.push(l);
        if !l.is_finite() || l > DIVERGENCE_LOSS {
            diverged = true;
            break;
        }
    }
    let l0 = losses[0];
    let steps_to_threshold = if diverged { None } else { losses.iter().position(|&l| l <= tau * l0) };
    let end = steps_to_threshold.unwrap_or(losses.len() - 1);
    Ok(TrainRun { decay_rate: decay_rate(&losses[..=end]), losses, diverged, steps_to_threshold })
}

fn decay_rate(losses: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        losses.iter().enumerate().filter(|(_, l)| **l > 0.0).map(|(t, l)| (t as f64, -l.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    sxy / sxx
}

fn normalize_rows(x: &mut [f64], d: usize) {
    for row in x.chunks_exact_mut(d) {
        let n = dot(row, row).sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Top right singular vector of `x` by power iteration on XᵀX.
fn top_right_singular(x: &FeatureMatrix) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..10_000 {
        let xv: Vec<f64> = (0..n).map(|i| dot(x.row(i), &v)).collect();
        let mut next = vec![0.0; d];
        for (i, s) in xv.iter().enumerate() {
            for (nv, xi) in next.iter_mut().zip(x.row(i)) {
                *nv += s * xi;
            }
        }
        let norm = dot(&next, &next).sqrt();
        next.iter_mut().for_each(|a| *a /= norm);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    v
}

/// `(1−α)·X + α·X v vᵀ` with unit-norm rows; `v` is X's top right singular vector.
pub fn collinear_mix(x: &FeatureMatrix, alpha: f64) -> Result<FeatureMatrix> {
    let (n, d) = (x.rows(), x.cols());
    let v = top_right_singular(x);
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = x.row(i);
        let p = dot(row, &v);
        out.extend(row.iter().zip(&v).map(|(a, vj)| (1.0 - alpha) * a + alpha * p * vj));
    }
    normalize_rows(&mut out, d);
    FeatureMatrix::new(n, d, out)
}

pub fn random_unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<FeatureMatrix> {
    let mut x = gaussian(rng, n * d);
    normalize_rows(&mut x, d);
    FeatureMatrix::new(n, d, x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConfig {
    /// Number of input sets; set `s` uses group `s / ALPHAS.len()` and mix `ALPHAS[s % ALPHAS.len()]`.
    pub sets: usize,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub steps: usize,
    pub tau: f64,
    pub test_samples: usize,
    pub teacher_width: usize,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            sets: 30,
            m: 512,
            n: 16,
            d: 20,
            gamma: 0.1,
            steps: 2000,
            tau: 0.1,
            test_samples: 200,
            teacher_width: 64,
            seed: 42,
        }
    }
}

impl TheoryConfig {
    fn validate(&self) -> Result<()> {
        if self.sets < 10 {
            return Err(Error::InvalidArgument(format!("need at least 10 input sets, got {}", self.sets)));
        }
        if self.n < 2 || self.d < 2 || self.m == 0 {
            return Err(Error::InvalidArgument("n and d must be >= 2 and m >= 1".into()));
        }
        Ok(())
    }

    /// Every set trains from the same initialization.
    fn student_seed(&self) -> u64 {
        self.seed ^ 0x5eed_0003
    }

    fn group_seed(&self, group: usize, stream: u64) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((group as u64) << 8) ^ stream
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CohortRow {
    pub set: usize,
    pub group: usize,
    pub alpha: f64,
    pub inv_cond: f64,
    pub steps_to_threshold: Option<usize>,
    /// `1 / steps_to_threshold`, 0 when the threshold was never reached.
    pub speed: f64,
    pub decay_rate: f64,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub rho: f64,
    pub rows: Vec<CohortRow>,
}

impl ExperimentResult {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["set", "group", "alpha", "inv_cond", "steps_to_threshold", "speed", "decay_rate", "diverged", "test_mse"])?;
        for r in &self.rows {
            out.write_record([
                r.set.to_string(),
                r.group.to_string(),
                r.alpha.to_string(),
                r.inv_cond.to_string(),
                r.steps_to_threshold.map(|s| s.to_string()).unwrap_or_default(),
                r.speed.to_string(),
                r.decay_rate.to_string(),
                r.diverged.to_string(),
                r.test_mse.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Cohort {
    set: usize,
    group: usize,
    alpha: f64,
    x: FeatureMatrix,
    inv_cond: f64,
}

fn cohorts(cfg: &TheoryConfig) -> Result<Vec<Cohort>> {
    (0..cfg.sets)
        .map(|set| {
            let group = set / ALPHAS.len();
            let alpha = ALPHAS[set % ALPHAS.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.group_seed(group, 1));
            let base = random_unit_rows(cfg.n, cfg.d, &mut rng)?;
            let x = collinear_mix(&base, alpha)?;
            let inv_cond = spectrum(&x)?.inv_cond;
            Ok(Cohort { set, group, alpha, x, inv_cond })
        })
        .collect()
}

/// Trains one student per input set on random Gaussian labels and correlates
/// `inv_cond²` with convergence speed. Sets in a group share base inputs,
/// labels and initialization; only the collinearity mix differs.
pub fn convergence_experiment(cfg: &TheoryConfig, threads: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sets = cohorts(cfg)?;
    let rows = with_threads(threads, || {
        sets.par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.group_seed(c.group, 2));
                let y = gaussian(&mut rng, cfg.n);
                let mut net = TwoLayerNet::new(cfg.d, cfg.m, cfg.student_seed());
                let run = train_two_layer(&mut net, &c.x, &y, cfg.gamma, cfg.steps, cfg.tau)?;
                Ok(row(c, &run, None))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    if rows.iter().all(|r| r.diverged) {
        return Err(Error::AllDiverged);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.inv_cond * r.inv_cond).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.speed).collect();
    Ok(ExperimentResult { rho: spearman(&xs, &ys)?, rows })
}

/// Fits a fixed random ReLU teacher on each input set and correlates
/// `inv_cond` with −(test MSE) on isotropic held-out inputs drawn from `split`.
pub fn generalisation_experiment(cfg: &TheoryConfig, split: u64, threads: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sets = cohorts(cfg)?;
    let teacher = TwoLayerNet::new(cfg.d, cfg.teacher_width, cfg.group_seed(usize::MAX >> 8, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ split.wrapping_mul(0xa076_1d64_78bd_642f) ^ 5);
    let test = random_unit_rows(cfg.test_samples, cfg.d, &mut rng)?;
    let test_y = teacher.outputs(&test);
    let rows = with_threads(threads, || {
        sets.par_iter()
            .map(|c| {
                let y = teacher.outputs(&c.x);
                let mut net = TwoLayerNet::new(cfg.d, cfg.m, cfg.student_seed());
                let run = train_two_layer(&mut net, &c.x, &y, cfg.gamma, cfg.steps, cfg.tau)?;
                let mse = if run.diverged {
                    f64::NAN
                } else {
                    net.outputs(&test).iter().zip(&test_y).map(|(u, t)| (u - t) * (u - t)).sum::<f64>()
                        / test_y.len() as f64
                };
                Ok(row(c, &run, Some(mse)))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let kept: Vec<&CohortRow> = rows.iter().filter(|r| !r.diverged).collect();
    if kept.is_empty() {
        return Err(Error::AllDiverged);
    }
    let xs: Vec<f64> = kept.iter().map(|r| r.inv_cond).collect();
    let ys: Vec<f64> = kept.iter().map(|r| -r.test_mse.unwrap()).collect();
    Ok(ExperimentResult { rho: spearman(&xs, &ys)?, rows })
}

fn row(c: &Cohort, run: &TrainRun, test_mse: Option<f64>) -> CohortRow {
    CohortRow {
        set: c.set,
        group: c.group,
        alpha: c.alpha,
        inv_cond: c.inv_cond,
        steps_to_threshold: run.steps_to_threshold,
        speed: run.steps_to_threshold.map_or(0.0, |s| 1.0 / s.max(1) as f64),
        decay_rate: run.decay_rate,
        diverged: run.diverged,
        test_mse,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    /// Mean over networks of the per-network fraction.
    pub fraction: f64,
    pub per_net: Vec<f64>,
    pub nets: usize,
}

/// Share of qualifying layers whose feature matrix has σ_max ≥ 1, for
/// `num_nets` random cells each fed its own uniform data sample.
pub fn lemma1_check(space: &SpaceConfig, num_nets: usize, seed: u64, threads: usize) -> Result<LemmaReport> {
    if num_nets < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 networks, got {num_nets}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<_> = (0..num_nets)
        .map(|_| (sample_with(&mut rng), rand::Rng::random::<u64>(&mut rng), rand::Rng::random::<u64>(&mut rng)))
        .collect();
    let per_net = with_threads(threads, || {
        jobs.par_iter()
            .map(|&(arch, init, data)| {
                let net = instantiate(&arch, space, init)?;
                let mut sink = RecordingSink::default();
                engine::run(&net, &random_data_sample(space, data), &mut sink)?;
                let q: Vec<_> = sink.records.iter().filter(|r| r.qualifying).collect();
                Ok(q.iter().filter(|r| r.sigma_max >= 1.0).count() as f64 / q.len().max(1) as f64)
            })
            .collect::<Result<Vec<f64>>>()
    })??;
    Ok(LemmaReport { fraction: per_net.iter().sum::<f64>() / num_nets as f64, nets: num_nets, per_net })
}
