//! The Dextr score.
//!
//! Two forward passes over one instantiated network:
//!
//! 1. a single label-free data sample (no derivatives) — every qualifying
//!    layer contributes σ_min/σ_max of its channels × spatial matrix to
//!    `cond_sum`;
//! 2. a point on a great circle `g(θ) = √(n1·q)·(o⁰cosθ + o¹sinθ)` carried as
//!    jets, so the logits arrive with exact velocity and acceleration along θ
//!    and yield the extrinsic curvature κ.
//!
//! With `C = ln(1 + cond_sum)` and `K = ln(1 + κ)` the score is `C·K/(C+K)`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Serialize, Serializer};

use crate::arch::CellArch;
use crate::engine::{self, feature_matrix, LayerKind, LayerRecord, LayerSink, NoSink, RecordingSink};
use crate::error::{Error, Result};
use crate::jet::{Jet2, Scalar};
use crate::linalg::spectrum;
use crate::space::{arch_cost, instantiate, NetworkSpec, SpaceConfig};
use crate::tensor::Tensor;

/// Below this squared speed the output curve is treated as stationary.
pub const STATIONARY_SPEED_SQ: f64 = 1e-18;
/// Default number of equally spaced angles κ is averaged over.
pub const KAPPA_GRID: usize = 8;

/// Point on a great circle through input space.
#[derive(Clone, Debug, PartialEq)]
pub struct CircularInputConfig {
    /// Input dimensionality.
    pub n1: usize,
    pub q: f64,
    pub theta: f64,
    /// Draws the orthonormal pair o⁰, o¹ (and θ, for [`CircularInputConfig::random`]).
    pub seed: u64,
}

impl CircularInputConfig {
    /// θ drawn uniformly from [0, 2π) using the same seed stream as the basis.
    pub fn random(n1: usize, q: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // burn the basis draws so θ is independent of n1's prefix
        let _ = draw_basis(n1, &mut rng);
        let theta = rng.random::<f64>() * TAU;
        CircularInputConfig { n1, q, theta, seed }
    }

    pub fn with_theta(self, theta: f64) -> Self {
        CircularInputConfig { theta, ..self }
    }

    /// Orthonormal o⁰, o¹ by Gram-Schmidt on two Gaussian vectors.
    pub fn basis(&self) -> (Vec<f64>, Vec<f64>) {
        draw_basis(self.n1, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }
}

fn draw_basis(n1: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut a: Vec<f64> = (0..n1).map(|_| rng.sample(StandardNormal)).collect();
    let mut b: Vec<f64> = (0..n1).map(|_| rng.sample(StandardNormal)).collect();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter_mut().for_each(|x| *x /= na);
    let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    b.iter_mut().for_each(|x| *x /= nb);
    (a, b)
}

/// `g(θ)` as a flat jet tensor of length `n1`; `d2 = −v` exactly.
pub fn circular_input(cfg: &CircularInputConfig) -> Result<Tensor<Jet2>> {
    if cfg.n1 < 2 {
        return Err(Error::InvalidArgument(format!("circular input needs n1 >= 2, got {}", cfg.n1)));
    }
    if !(cfg.q > 0.0 && cfg.q.is_finite()) {
        return Err(Error::InvalidArgument(format!("q must be positive, got {}", cfg.q)));
    }
    let (o0, o1) = cfg.basis();
    let r = (cfg.n1 as f64 * cfg.q).sqrt();
    let (s, c) = cfg.theta.sin_cos();
    let data = o0
        .iter()
        .zip(&o1)
        .map(|(&a, &b)| {
            let v = r * (a * c + b * s);
            Jet2::new(v, r * (-a * s + b * c), -v)
        })
        .collect();
    Tensor::new(vec![cfg.n1], data)
}

/// Extrinsic curvature of the curve traced by `output` as θ varies.
///
/// `κ = (v·v)^{-3/2} · sqrt(max(0, (v·v)(a·a) − (v·a)²))` with `v = d1`,
/// `a = d2`. Returns 0 at a stationary point and NaN for non-finite jets.
pub fn curvature(output: &Tensor<Jet2>) -> Result<f64> {
    if output.len() < 2 {
        return Err(Error::InvalidArgument("curvature needs at least 2 output elements".into()));
    }
    if !output.all_finite() {
        return Ok(f64::NAN);
    }
    let (mut vv, mut aa, mut va) = (0.0, 0.0, 0.0);
    for j in output.data() {
        vv += j.d1 * j.d1;
        aa += j.d2 * j.d2;
        va += j.d1 * j.d2;
    }
    if vv < STATIONARY_SPEED_SQ {
        return Ok(0.0);
    }
    let radicand = (vv * aa - va * va).max(0.0);
    Ok(radicand.sqrt() / (vv * vv.sqrt()))
}

/// `C·K/(C+K)` for positive terms, else 0.
pub fn combine(cond_term: f64, curv_term: f64) -> f64 {
    if cond_term > 0.0 && curv_term > 0.0 {
        cond_term * curv_term / (cond_term + curv_term)
    } else {
        0.0
    }
}

/// Seeds consumed by one score.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProxySeeds {
    /// Network weights.
    pub init: u64,
    /// Default data sample.
    pub data: u64,
    /// Circular basis and θ.
    pub circular: u64,
}

impl ProxySeeds {
    /// Three independent seeds from one master seed.
    pub fn from_master(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        ProxySeeds { init: rng.random(), data: rng.random(), circular: rng.random() }
    }
}

/// Seeded uniform noise in [0, 1) shaped like the network input.
pub fn random_data_sample(cfg: &SpaceConfig, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..cfg.input_len()).map(|_| rng.random::<f64>()).collect();
    Tensor::new(cfg.input_dims(), v).expect("input dims match length")
}

fn nan_as_null<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProxyReport {
    pub arch: CellArch,
    #[serde(serialize_with = "nan_as_null")]
    pub dextr: f64,
    #[serde(serialize_with = "nan_as_null")]
    pub cond_sum: f64,
    #[serde(serialize_with = "nan_as_null")]
    pub cond_term: f64,
    #[serde(serialize_with = "nan_as_null")]
    pub kappa: f64,
    #[serde(serialize_with = "nan_as_null")]
    pub curv_term: f64,
    pub params: u64,
    pub flops: u64,
    pub valid: bool,
    pub seeds: ProxySeeds,
    pub theta: f64,
    /// Angles κ was averaged over.
    pub kappa_points: usize,
    pub q: f64,
    /// Channels sampled per layer for the subsampled variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<usize>,
    pub layers: Vec<LayerRecord>,
}

impl ProxyReport {
    pub fn qualifying(&self) -> impl Iterator<Item = &LayerRecord> {
        self.layers.iter().filter(|r| r.qualifying)
    }

    /// Dextr for ranking: invalid reports map to −∞ so they rank last.
    pub fn rank_key(&self) -> f64 {
        if self.valid {
            self.dextr
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn ablation(&self) -> AblationScores {
        AblationScores { cond_only: self.cond_term, curv_only: self.curv_term, n_params: self.params, flops: self.flops }
    }

    fn invalidate(&mut self) {
        self.valid = false;
        self.dextr = f64::NAN;
    }
}

/// The two log-terms and the cost counts, from the same two passes as Dextr.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct AblationScores {
    pub cond_only: f64,
    pub curv_only: f64,
    pub n_params: u64,
    pub flops: u64,
}

impl AblationScores {
    pub fn recombine(&self) -> f64 {
        combine(self.cond_only, self.curv_only)
    }
}

/// How the curvature pass picks θ.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum KappaMode {
    /// κ at the configured θ.
    Single,
    /// Mean κ over θ + 2πk/K for k in 0..K.
    MeanOverGrid(usize),
}

impl Default for KappaMode {
    /// A single θ leaves κ dominated by the angle draw at small widths.
    fn default() -> Self {
        KappaMode::MeanOverGrid(KAPPA_GRID)
    }
}

impl KappaMode {
    /// Number of angles evaluated.
    pub fn points(self) -> usize {
        match self {
            KappaMode::Single => 1,
            KappaMode::MeanOverGrid(k) => k.max(1),
        }
    }

    /// `1` selects a single angle.
    pub fn from_points(k: usize) -> Self {
        if k <= 1 {
            KappaMode::Single
        } else {
            KappaMode::MeanOverGrid(k)
        }
    }
}

/// Feature-map handling in the data pass.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum ChannelMode {
    Full,
    /// Sample `beta` channels per layer and weight the term by channels/beta.
    Sampled { beta: usize, seed: u64 },
}

struct SampledSink {
    beta: usize,
    rng: ChaCha8Rng,
    inner: RecordingSink,
    weighted_sum: f64,
}

impl<T: Scalar> LayerSink<T> for SampledSink {
    fn observe(&mut self, layer_id: usize, kind: LayerKind, output: &Tensor<T>) {
        LayerSink::<T>::observe(&mut self.inner, layer_id, kind, output);
        if self.inner.failed {
            return;
        }
        let (c, hw) = (output.channels(), output.spatial());
        if c < 2 || hw < 2 {
            return;
        }
        let Some(m) = feature_matrix(output) else {
            self.inner.failed = true;
            return;
        };
        let take = self.beta.min(c);
        let mut idx = rand::seq::index::sample(&mut self.rng, c, take).into_vec();
        idx.sort_unstable();
        match spectrum(&m.select_rows(&idx)) {
            Ok(s) => self.weighted_sum += c as f64 / self.beta as f64 * s.inv_cond,
            Err(_) => self.inner.failed = true,
        }
    }
}

/// Scores an already-instantiated network.
pub fn score_network(
    net: &NetworkSpec,
    data_sample: &Tensor<f64>,
    circ: &CircularInputConfig,
    channels: ChannelMode,
    kappa_mode: KappaMode,
    seeds: ProxySeeds,
) -> Result<ProxyReport> {
    // pass 1: condition numbers from the data sample
    let (layers, cond_sum, pass1_ok, beta) = match channels {
        ChannelMode::Full => {
            let mut sink = RecordingSink::default();
            let (_, finite) = engine::run(net, data_sample, &mut sink)?;
            let sum = sink.records.iter().filter(|r| r.qualifying).map(|r| r.inv_cond).sum::<f64>();
            (sink.records, sum, finite && !sink.failed, None)
        }
        ChannelMode::Sampled { beta, seed } => {
            if beta < 2 {
                return Err(Error::InvalidArgument(format!("beta must be >= 2, got {beta}")));
            }
            let mut sink =
                SampledSink { beta, rng: ChaCha8Rng::seed_from_u64(seed), inner: RecordingSink::default(), weighted_sum: 0.0 };
            let (_, finite) = engine::run(net, data_sample, &mut sink)?;
            (sink.inner.records, sink.weighted_sum, finite && !sink.inner.failed, Some(beta))
        }
    };

    // pass 2: curvature of the logits along the circle
    let k = kappa_mode.points();
    let thetas: Vec<f64> = (0..k).map(|i| (circ.theta + TAU * i as f64 / k as f64) % TAU).collect();
    let mut kappa = 0.0;
    let mut pass2_ok = true;
    let input_dims = net.config.input_dims();
    for &theta in &thetas {
        let g = circular_input(&circ.clone().with_theta(theta))?;
        let g = Tensor::new(input_dims.clone(), g.into_data())?;
        let (logits, finite) = engine::run(net, &g, &mut NoSink)?;
        let k = curvature(&logits)?;
        pass2_ok &= finite && k.is_finite();
        kappa += k;
    }
    kappa /= thetas.len() as f64;

    let cond_term = cond_sum.ln_1p();
    let curv_term = kappa.ln_1p();
    let (params, flops) = arch_cost(&net.cell, &net.config);
    let mut report = ProxyReport {
        arch: net.cell,
        dextr: combine(cond_term, curv_term),
        cond_sum,
        cond_term,
        kappa,
        curv_term,
        params,
        flops,
        valid: true,
        seeds,
        theta: circ.theta,
        kappa_points: thetas.len(),
        q: circ.q,
        beta,
        layers,
    };
    if !(pass1_ok && pass2_ok && report.dextr.is_finite()) {
        report.invalidate();
    }
    Ok(report)
}

/// Dextr for `arch` with weights from `seed`.
pub fn dextr_score(
    arch: &CellArch,
    cfg: &SpaceConfig,
    data_sample: &Tensor<f64>,
    circ: &CircularInputConfig,
    seed: u64,
) -> Result<ProxyReport> {
    let net = instantiate(arch, cfg, seed)?;
    let seeds = ProxySeeds { init: seed, data: 0, circular: circ.seed };
    score_network(&net, data_sample, circ, ChannelMode::Full, KappaMode::Single, seeds)
}

/// Channel-subsampled Dextr: each qualifying layer contributes
/// `channels/beta · σ_min/σ_max` of `min(beta, channels)` sampled channels.
pub fn dextr_opt_score(
    arch: &CellArch,
    cfg: &SpaceConfig,
    data_sample: &Tensor<f64>,
    circ: &CircularInputConfig,
    seed: u64,
    beta: usize,
    sample_seed: u64,
) -> Result<ProxyReport> {
    let net = instantiate(arch, cfg, seed)?;
    let seeds = ProxySeeds { init: seed, data: 0, circular: circ.seed };
    score_network(&net, data_sample, circ, ChannelMode::Sampled { beta, seed: sample_seed }, KappaMode::Single, seeds)
}

/// Ablation sub-scores from one Dextr evaluation.
pub fn ablation_scores(
    arch: &CellArch,
    cfg: &SpaceConfig,
    data_sample: &Tensor<f64>,
    circ: &CircularInputConfig,
    seed: u64,
) -> Result<AblationScores> {
    Ok(dextr_score(arch, cfg, data_sample, circ, seed)?.ablation())
}

/// Which number a scoring run ranks architectures by.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Dextr,
    DextrOpt,
    CondOnly,
    CurvOnly,
    Params,
    Flops,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Dextr, Variant::DextrOpt, Variant::CondOnly, Variant::CurvOnly, Variant::Params, Variant::Flops];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Dextr => "dextr",
            Variant::DextrOpt => "dextr_opt",
            Variant::CondOnly => "cond_only",
            Variant::CurvOnly => "curv_only",
            Variant::Params => "params",
            Variant::Flops => "flops",
        }
    }

    /// The variant's value, or `None` for an invalid report.
    pub fn value(self, r: &ProxyReport) -> Option<f64> {
        let v = match self {
            Variant::Dextr | Variant::DextrOpt => r.dextr,
            Variant::CondOnly => r.cond_term,
            Variant::CurvOnly => r.curv_term,
            Variant::Params => return Some(r.params as f64),
            Variant::Flops => return Some(r.flops as f64),
        };
        (r.valid && v.is_finite()).then_some(v)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// Default channel sample size for [`Variant::DextrOpt`].
pub const DEFAULT_BETA: usize = 8;

/// Everything needed to score any architecture reproducibly.
#[derive(Clone, Debug)]
pub struct Scorer {
    pub space: SpaceConfig,
    pub seeds: ProxySeeds,
    pub q: f64,
    /// Fixed θ; drawn from the circular seed when `None`.
    pub theta: Option<f64>,
    pub variant: Variant,
    pub beta: usize,
    pub kappa_mode: KappaMode,
    /// Explicit data sample; seeded uniform noise when `None`.
    pub data: Option<Tensor<f64>>,
}

impl Scorer {
    pub fn new(space: SpaceConfig, master_seed: u64) -> Self {
        Scorer {
            space,
            seeds: ProxySeeds::from_master(master_seed),
            q: 1.0,
            theta: None,
            variant: Variant::Dextr,
            beta: DEFAULT_BETA,
            kappa_mode: KappaMode::default(),
            data: None,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seeds(mut self, seeds: ProxySeeds) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn circular(&self) -> CircularInputConfig {
        let c = CircularInputConfig::random(self.space.input_len(), self.q, self.seeds.circular);
        match self.theta {
            Some(t) => c.with_theta(t),
            None => c,
        }
    }

    pub fn data_sample(&self) -> Tensor<f64> {
        self.data.clone().unwrap_or_else(|| random_data_sample(&self.space, self.seeds.data))
    }

    pub fn report(&self, arch: &CellArch) -> Result<ProxyReport> {
        let net = instantiate(arch, &self.space, self.seeds.init)?;
        self.report_network(&net)
    }

    pub fn report_network(&self, net: &NetworkSpec) -> Result<ProxyReport> {
        let channels = match self.variant {
            Variant::DextrOpt => ChannelMode::Sampled { beta: self.beta, seed: self.seeds.data ^ 0x5eed },
            _ => ChannelMode::Full,
        };
        let data = match &self.data {
            Some(d) => std::borrow::Cow::Borrowed(d),
            None => std::borrow::Cow::Owned(random_data_sample(&self.space, self.seeds.data)),
        };
        score_network(net, &data, &self.circular(), channels, self.kappa_mode, self.seeds)
    }

    /// The variant value for `arch`, `None` when the score is invalid.
    pub fn value(&self, arch: &CellArch) -> Result<Option<f64>> {
        if matches!(self.variant, Variant::Params | Variant::Flops) {
            let (p, f) = arch_cost(arch, &self.space);
            return Ok(Some(if self.variant == Variant::Params { p } else { f } as f64));
        }
        Ok(self.variant.value(&self.report(arch)?))
    }
}
