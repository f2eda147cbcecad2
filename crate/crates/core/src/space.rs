//! Macro skeleton around a cell: stem, three stages of cells separated by
//! residual reduction blocks, final norm + ReLU, global pooling, classifier.
//!
//! ```text
//! stem: conv3x3(3→C) · norm
//! stage 1: N cells @ C          reduction C→2C (stride 2)
//! stage 2: N cells @ 2C         reduction 2C→4C (stride 2)
//! stage 3: N cells @ 4C
//! norm · relu · global_avg_pool · linear(4C→classes)
//! ```
//!
//! The reduction block is `relu·conv3x3/2·norm · relu·conv3x3·norm` plus an
//! `avg_pool2x2 · conv1x1` shortcut. Conv weights are i.i.d. N(0, 2/fan_in);
//! the classifier uses the same rule with a zero bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::{CellArch, Op, NUM_EDGES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub stem_channels: usize,
    pub cells_per_stage: usize,
    pub num_stages: usize,
    pub num_classes: usize,
    /// `[C, H, W]` of a single input image.
    pub input_shape: [usize; 3],
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig { stem_channels: 8, cells_per_stage: 1, num_stages: 3, num_classes: 10, input_shape: [3, 32, 32] }
    }
}

impl SpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if self.stem_channels == 0 || self.num_stages == 0 || self.num_classes == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("space config has a zero extent: {self:?}")));
        }
        let shrink = 1usize << (self.num_stages - 1);
        if h < 2 * shrink || w < 2 * shrink {
            return Err(Error::InvalidArgument(format!(
                "input {h}x{w} too small for {} reduction blocks",
                self.num_stages - 1
            )));
        }
        Ok(())
    }

    /// Input tensor shape `[1, C, H, W]`.
    pub fn input_dims(&self) -> Vec<usize> {
        let [c, h, w] = self.input_shape;
        vec![1, c, h, w]
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    /// `[Cout, Cin, k, k]`.
    pub weight: Tensor<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    fn kaiming(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let data = (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect();
        Conv {
            weight: Tensor::new(vec![cout, cin, k, k], data).expect("consistent shape"),
            stride,
            pad: (k - 1) / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        ((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1)
    }
}

/// One instantiated cell edge.
#[derive(Clone, Debug, PartialEq)]
pub enum Edge {
    Zero,
    Identity,
    /// relu · conv · norm
    ReluConvNorm(Conv),
    AvgPool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub shortcut: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Cell([Edge; NUM_EDGES]),
    Reduction(Reduction),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub config: SpaceConfig,
    pub cell: CellArch,
    pub init_seed: u64,
    pub stem: Conv,
    pub blocks: Vec<Block>,
    /// `[classes, 4C]`.
    pub classifier: Tensor<f64>,
    pub classifier_bias: Vec<f64>,
}

impl NetworkSpec {
    pub fn convs(&self) -> impl Iterator<Item = &Conv> {
        std::iter::once(&self.stem).chain(self.blocks.iter().flat_map(|b| -> Box<dyn Iterator<Item = &Conv>> {
            match b {
                Block::Cell(edges) => Box::new(edges.iter().filter_map(|e| match e {
                    Edge::ReluConvNorm(c) => Some(c),
                    _ => None,
                })),
                Block::Reduction(r) => Box::new([&r.conv_a, &r.conv_b, &r.shortcut].into_iter()),
            }
        }))
    }

    pub fn final_channels(&self) -> usize {
        self.config.stem_channels << (self.config.num_stages - 1)
    }
}

/// Builds the network for `arch` with weights drawn from `seed`.
pub fn instantiate(arch: &CellArch, cfg: &SpaceConfig, seed: u64) -> Result<NetworkSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0 = cfg.stem_channels;
    let stem = Conv::kaiming(&mut rng, cfg.input_shape[0], c0, 3, 1);
    let mut blocks = Vec::new();
    let mut c = c0;
    for stage in 0..cfg.num_stages {
        if stage > 0 {
            blocks.push(Block::Reduction(Reduction {
                conv_a: Conv::kaiming(&mut rng, c, 2 * c, 3, 2),
                conv_b: Conv::kaiming(&mut rng, 2 * c, 2 * c, 3, 1),
                shortcut: Conv::kaiming(&mut rng, c, 2 * c, 1, 1),
            }));
            c *= 2;
        }
        for _ in 0..cfg.cells_per_stage {
            let edges = arch.edges.map(|op| match op {
                Op::None => Edge::Zero,
                Op::SkipConnect => Edge::Identity,
                Op::AvgPool3x3 => Edge::AvgPool,
                Op::NorConv1x1 | Op::NorConv3x3 => {
                    Edge::ReluConvNorm(Conv::kaiming(&mut rng, c, c, op.kernel().expect("conv op"), 1))
                }
            });
            blocks.push(Block::Cell(edges));
        }
    }
    let normal = Normal::new(0.0, (2.0 / c as f64).sqrt()).expect("positive std");
    let classifier = Tensor::new(vec![cfg.num_classes, c], (0..cfg.num_classes * c).map(|_| normal.sample(&mut rng)).collect())?;
    Ok(NetworkSpec {
        config: cfg.clone(),
        cell: *arch,
        init_seed: seed,
        stem,
        blocks,
        classifier,
        classifier_bias: vec![0.0; cfg.num_classes],
    })
}

/// Total number of weight and bias entries.
pub fn count_params(net: &NetworkSpec) -> u64 {
    let conv: usize = net.convs().map(|c| c.weight.len()).sum();
    (conv + net.classifier.len() + net.classifier_bias.len()) as u64
}

/// Multiply-accumulates ×2 over every conv and the classifier for an input of
/// spatial size `h × w`.
pub fn count_flops(net: &NetworkSpec, input_hw: (usize, usize)) -> u64 {
    let (mut h, mut w) = input_hw;
    let mut macs = 0usize;
    let mut conv_macs = |conv: &Conv, h: usize, w: usize| -> (usize, usize) {
        let (oh, ow) = conv.output_hw(h, w);
        macs += oh * ow * conv.out_channels() * conv.in_channels() * conv.kernel() * conv.kernel();
        (oh, ow)
    };
    (h, w) = conv_macs(&net.stem, h, w);
    for block in &net.blocks {
        match block {
            Block::Cell(edges) => {
                for e in edges {
                    if let Edge::ReluConvNorm(conv) = e {
                        conv_macs(conv, h, w);
                    }
                }
            }
            Block::Reduction(r) => {
                let (oh, ow) = conv_macs(&r.conv_a, h, w);
                conv_macs(&r.conv_b, oh, ow);
                conv_macs(&r.shortcut, h / 2, w / 2);
                (h, w) = (oh, ow);
            }
        }
    }
    macs += net.classifier.len();
    2 * macs as u64
}

/// Parameter and FLOP counts straight from the architecture, without drawing weights.
pub fn arch_cost(arch: &CellArch, cfg: &SpaceConfig) -> (u64, u64) {
    let [cin, mut h, mut w] = cfg.input_shape;
    let mut c = cfg.stem_channels;
    let mut params = 9 * cin * c;
    let mut macs = h * w * 9 * cin * c;
    let k2: usize = arch.edges.iter().filter_map(|op| op.kernel()).map(|k| k * k).sum();
    for stage in 0..cfg.num_stages {
        if stage > 0 {
            let (oh, ow) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
            let block = 9 * c * 2 * c + 9 * 4 * c * c;
            params += block + 2 * c * c;
            macs += oh * ow * block + (h / 2) * (w / 2) * 2 * c * c;
            (h, w) = (oh, ow);
            c *= 2;
        }
        params += cfg.cells_per_stage * k2 * c * c;
        macs += cfg.cells_per_stage * k2 * c * c * h * w;
    }
    params += cfg.num_classes * c + cfg.num_classes;
    macs += cfg.num_classes * c;
    (params as u64, 2 * macs as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{enumerate, parse_encoding};

    fn single_conv_net(cin: usize, cout: usize) -> NetworkSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SpaceConfig { stem_channels: cout, num_stages: 1, cells_per_stage: 0, num_classes: 10, input_shape: [cin, 8, 8] };
        NetworkSpec {
            stem: Conv::kaiming(&mut rng, cin, cout, 3, 1),
            blocks: vec![],
            classifier: Tensor::zeros(vec![10, 16]),
            classifier_bias: vec![0.0; 10],
            config: cfg,
            cell: CellArch::uniform(Op::None),
            init_seed: 0,
        }
    }

    #[test]
    fn counting_examples() {
        let net = single_conv_net(2, 4);
        assert_eq!(net.stem.weight.len(), 72);
        // linear 16 → 10 with bias
        assert_eq!(net.classifier.len() + net.classifier_bias.len(), 170);
        assert_eq!(count_params(&net), 72 + 170);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = single_conv_net(4, 4);
        net.stem = Conv::kaiming(&mut rng, 4, 4, 3, 1);
        net.classifier = Tensor::zeros(vec![1, 1]);
        assert_eq!(count_flops(&net, (8, 8)), 18432 + 2);
    }

    #[test]
    fn all_skip_params_are_skeleton_only() {
        let cfg = SpaceConfig::default();
        let net = instantiate(&CellArch::uniform(Op::SkipConnect), &cfg, 1).unwrap();
        let c = cfg.stem_channels;
        let stem = 3 * c * 9;
        let red1 = 9 * c * 2 * c + 9 * 4 * c * c + 2 * c * c;
        let red2 = 9 * 2 * c * 4 * c + 9 * 16 * c * c + 8 * c * c;
        let cls = 10 * 4 * c + 10;
        assert_eq!(count_params(&net), (stem + red1 + red2 + cls) as u64);
    }

    #[test]
    fn instantiate_is_reproducible() {
        let a = parse_encoding("|nor_conv_3x3~0|+|nor_conv_1x1~0|skip_connect~1|+|none~0|avg_pool_3x3~1|nor_conv_3x3~2|").unwrap();
        let cfg = SpaceConfig::default();
        assert_eq!(instantiate(&a, &cfg, 9).unwrap(), instantiate(&a, &cfg, 9).unwrap());
        assert_ne!(instantiate(&a, &cfg, 9).unwrap(), instantiate(&a, &cfg, 10).unwrap());
    }

    #[test]
    fn analytic_cost_matches_instantiated() {
        let cfg = SpaceConfig { cells_per_stage: 2, ..SpaceConfig::default() };
        for a in enumerate(usize::MAX).step_by(97) {
            let net = instantiate(&a, &cfg, 3).unwrap();
            let (p, f) = arch_cost(&a, &cfg);
            assert_eq!(p, count_params(&net), "{a}");
            assert_eq!(f, count_flops(&net, (32, 32)), "{a}");
        }
    }

    #[test]
    fn rejects_tiny_inputs() {
        let cfg = SpaceConfig { input_shape: [3, 2, 2], ..SpaceConfig::default() };
        assert!(instantiate(&CellArch::uniform(Op::None), &cfg, 0).is_err());
    }
}
