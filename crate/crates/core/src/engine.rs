//! Forward pass over an instantiated [`NetworkSpec`].
//!
//! Every layer output is handed to a [`LayerSink`] as it is produced.
//! Outputs that are structurally zero (fed only by `none` edges) are never
//! materialized and produce no layer.

use serde::Serialize;

use crate::arch::{EDGES, NUM_NODES};
use crate::error::Result;
use crate::jet::{Jet2, Scalar};
use crate::linalg::{spectrum, FeatureMatrix};
use crate::space::{Block, Conv, Edge, NetworkSpec};
use crate::tensor::{self, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Norm,
    Relu,
    AvgPool,
    Add,
    GlobalPool,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRecord {
    pub layer_id: usize,
    pub kind: LayerKind,
    pub channels: usize,
    pub spatial: usize,
    /// σ_min / σ_max of the channels × spatial matrix.
    pub inv_cond: f64,
    pub sigma_max: f64,
    /// Both matrix dimensions are at least 2.
    pub qualifying: bool,
}

/// Receives each layer output in execution order.
pub trait LayerSink<T: Scalar> {
    fn observe(&mut self, layer_id: usize, kind: LayerKind, output: &Tensor<T>);
}

/// Discards everything.
pub struct NoSink;

impl<T: Scalar> LayerSink<T> for NoSink {
    fn observe(&mut self, _: usize, _: LayerKind, _: &Tensor<T>) {}
}

/// The channels × spatial matrix of a tensor's values.
pub fn feature_matrix<T: Scalar>(t: &Tensor<T>) -> Option<FeatureMatrix> {
    FeatureMatrix::new(t.channels(), t.spatial(), t.values()).ok()
}

/// Computes a [`LayerRecord`] per layer; marks itself failed on non-finite
/// values or an eigensolver failure.
#[derive(Default)]
pub struct RecordingSink {
    pub records: Vec<LayerRecord>,
    pub failed: bool,
}

impl<T: Scalar> LayerSink<T> for RecordingSink {
    fn observe(&mut self, layer_id: usize, kind: LayerKind, output: &Tensor<T>) {
        if self.failed {
            return;
        }
        let Some(spec) = feature_matrix(output).and_then(|m| spectrum(&m).ok()) else {
            self.failed = true;
            return;
        };
        let (channels, spatial) = (output.channels(), output.spatial());
        self.records.push(LayerRecord {
            layer_id,
            kind,
            channels,
            spatial,
            inv_cond: spec.inv_cond,
            sigma_max: spec.sigma_max,
            qualifying: channels >= 2 && spatial >= 2,
        });
    }
}

/// Output of [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub output: Tensor<Jet2>,
    pub records: Vec<LayerRecord>,
    pub valid: bool,
}

/// Runs the network on a jet input and records every layer's spectrum.
pub fn forward(net: &NetworkSpec, input: &Tensor<Jet2>) -> Result<ForwardResult> {
    let mut sink = RecordingSink::default();
    let (output, finite) = run(net, input, &mut sink)?;
    Ok(ForwardResult { valid: finite && !sink.failed, output, records: sink.records })
}

struct Runner<'s, S> {
    sink: &'s mut S,
    next_id: usize,
    finite: bool,
}

impl<S> Runner<'_, S> {
    fn emit<T: Scalar>(&mut self, kind: LayerKind, t: Tensor<T>) -> Tensor<T>
    where
        S: LayerSink<T>,
    {
        if self.finite && !t.all_finite() {
            self.finite = false;
        }
        self.sink.observe(self.next_id, kind, &t);
        self.next_id += 1;
        t
    }

    fn conv<T: Scalar>(&mut self, conv: &Conv, x: &Tensor<T>) -> Result<Tensor<T>>
    where
        S: LayerSink<T>,
    {
        let y = tensor::conv2d(x, &conv.weight, conv.stride, conv.pad)?;
        Ok(self.emit(LayerKind::Conv, y))
    }

    fn norm<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>
    where
        S: LayerSink<T>,
    {
        let y = tensor::instance_norm(x)?;
        Ok(self.emit(LayerKind::Norm, y))
    }

    fn relu<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T>
    where
        S: LayerSink<T>,
    {
        let y = tensor::relu(x);
        self.emit(LayerKind::Relu, y)
    }

    fn relu_conv_norm<T: Scalar>(&mut self, conv: &Conv, x: &Tensor<T>) -> Result<Tensor<T>>
    where
        S: LayerSink<T>,
    {
        let r = self.relu(x);
        let c = self.conv(conv, &r)?;
        self.norm(&c)
    }

    fn cell<T: Scalar>(&mut self, edges: &[Edge], input: Tensor<T>) -> Result<Option<Tensor<T>>>
    where
        S: LayerSink<T>,
    {
        let mut nodes: Vec<Option<Tensor<T>>> = Vec::with_capacity(NUM_NODES);
        nodes.push(Some(input));
        for node in 1..NUM_NODES {
            let mut terms: Vec<Tensor<T>> = Vec::new();
            for ((src, _), edge) in EDGES.iter().zip(edges).filter(|((_, t), _)| *t == node) {
                let Some(x) = &nodes[*src] else { continue };
                match edge {
                    Edge::Zero => {}
                    Edge::Identity => terms.push(x.clone()),
                    Edge::AvgPool => {
                        let y = tensor::avg_pool3x3(x)?;
                        terms.push(self.emit(LayerKind::AvgPool, y));
                    }
                    Edge::ReluConvNorm(conv) => terms.push(self.relu_conv_norm(conv, x)?),
                }
            }
            let value = match terms.len() {
                0 => None,
                1 => terms.pop(),
                _ => {
                    let mut acc = terms[0].clone();
                    for t in &terms[1..] {
                        acc = tensor::add(&acc, t)?;
                    }
                    Some(self.emit(LayerKind::Add, acc))
                }
            };
            nodes.push(value);
        }
        Ok(nodes.pop().flatten())
    }
}

/// Generic forward pass. Returns the logits and whether every layer output was finite.
pub fn run<T, S>(net: &NetworkSpec, input: &Tensor<T>, sink: &mut S) -> Result<(Tensor<T>, bool)>
where
    T: Scalar,
    S: LayerSink<T>,
{
    let expected = net.config.input_dims();
    if input.shape() != expected.as_slice() {
        return Err(crate::error::Error::Shape {
            op: "forward",
            detail: format!("network expects input {expected:?}, got {:?}", input.shape()),
        });
    }
    let mut r = Runner { sink, next_id: 0, finite: input.all_finite() };
    let stem = r.conv(&net.stem, input)?;
    let mut x = Some(r.norm(&stem)?);
    for block in &net.blocks {
        let Some(inp) = x.take() else { break };
        x = match block {
            Block::Cell(edges) => r.cell(edges, inp)?,
            Block::Reduction(red) => {
                let a = r.relu_conv_norm(&red.conv_a, &inp)?;
                let b = r.relu_conv_norm(&red.conv_b, &a)?;
                let pooled = tensor::avg_pool2x2(&inp)?;
                let pooled = r.emit(LayerKind::AvgPool, pooled);
                let sc = r.conv(&red.shortcut, &pooled)?;
                let sum = tensor::add(&b, &sc)?;
                Some(r.emit(LayerKind::Add, sum))
            }
        };
    }
    let logits = match x {
        Some(feat) => {
            let n = r.norm(&feat)?;
            let a = r.relu(&n);
            let g = tensor::global_avg_pool(&a)?;
            let g = r.emit(LayerKind::GlobalPool, g);
            let y = tensor::linear(&g, &net.classifier, &net.classifier_bias)?;
            r.emit(LayerKind::Linear, y)
        }
        // a dead cell zeroes everything downstream; the classifier only adds its bias
        None => Tensor::from_values(vec![net.config.num_classes], &net.classifier_bias)?,
    };
    Ok((logits, r.finite))
}
