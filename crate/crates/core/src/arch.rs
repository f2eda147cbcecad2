//! Cell architectures of the 4-node, 6-edge NAS-Bench-201 style space and
//! their `|op~0|+|op~0|op~1|+|op~0|op~1|op~2|` string encoding.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_EDGES: usize = 6;
pub const NUM_NODES: usize = 4;
/// 5^6 cells.
pub const SPACE_SIZE: usize = 15_625;

/// (source, target) node of each edge, in encoding order.
pub const EDGES: [(usize, usize); NUM_EDGES] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    None,
    SkipConnect,
    NorConv1x1,
    NorConv3x3,
    AvgPool3x3,
}

impl Op {
    pub const ALL: [Op; 5] = [Op::None, Op::SkipConnect, Op::NorConv1x1, Op::NorConv3x3, Op::AvgPool3x3];

    pub fn tag(self) -> &'static str {
        match self {
            Op::None => "none",
            Op::SkipConnect => "skip_connect",
            Op::NorConv1x1 => "nor_conv_1x1",
            Op::NorConv3x3 => "nor_conv_3x3",
            Op::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Kernel size for the convolution ops.
    pub fn kernel(self) -> Option<usize> {
        match self {
            Op::NorConv1x1 => Some(1),
            Op::NorConv3x3 => Some(3),
            _ => None,
        }
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Op> {
        Op::ALL.into_iter().find(|op| op.tag() == s).ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Operation assignment for the six edges, ordered as [`EDGES`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellArch {
    pub edges: [Op; NUM_EDGES],
}

impl CellArch {
    pub fn new(edges: [Op; NUM_EDGES]) -> Self {
        CellArch { edges }
    }

    pub fn uniform(op: Op) -> Self {
        CellArch { edges: [op; NUM_EDGES] }
    }

    /// Position in the base-5 enumeration order (edge 0 is the most significant digit).
    pub fn index(&self) -> usize {
        self.edges.iter().fold(0, |acc, op| acc * 5 + op.index())
    }

    pub fn from_index(mut index: usize) -> Self {
        assert!(index < SPACE_SIZE, "cell index {index} out of range");
        let mut edges = [Op::None; NUM_EDGES];
        for e in edges.iter_mut().rev() {
            *e = Op::ALL[index % 5];
            index /= 5;
        }
        CellArch { edges }
    }

    /// Ops feeding `node` (1..=3), paired with their source node.
    pub fn inputs(&self, node: usize) -> impl Iterator<Item = (usize, Op)> + '_ {
        EDGES.iter().zip(self.edges).filter(move |((_, t), _)| *t == node).map(|((s, _), op)| (*s, op))
    }

    pub fn encode(&self) -> String {
        let mut s = String::with_capacity(96);
        for node in 1..NUM_NODES {
            if node > 1 {
                s.push('+');
            }
            s.push('|');
            for (src, op) in self.inputs(node) {
                s.push_str(op.tag());
                s.push('~');
                s.push_str(&src.to_string());
                s.push('|');
            }
        }
        s
    }

    pub fn count(&self, op: Op) -> usize {
        self.edges.iter().filter(|&&e| e == op).count()
    }
}

impl fmt::Display for CellArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl FromStr for CellArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<CellArch> {
        parse_encoding(s)
    }
}

impl Serialize for CellArch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for CellArch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_encoding(&s).map_err(serde::de::Error::custom)
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Encoding { offset: self.pos, reason: reason.into() }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.src.as_bytes().get(self.pos) {
            Some(&b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(&b) => Err(self.fail(format!("expected `{}`, found `{}`", c as char, b as char))),
            None => Err(self.fail(format!("expected `{}`, found end of input", c as char))),
        }
    }

    fn take_until(&mut self, stop: u8) -> Result<&str> {
        let rest = &self.src[self.pos..];
        match rest.bytes().position(|b| b == stop || b == b'|' || b == b'+') {
            Some(n) if rest.as_bytes()[n] == stop => {
                self.pos += n;
                Ok(&rest[..n])
            }
            Some(n) => {
                self.pos += n;
                Err(self.fail(format!("expected `{}`", stop as char)))
            }
            None => {
                self.pos = self.src.len();
                Err(self.fail(format!("expected `{}`, found end of input", stop as char)))
            }
        }
    }
}

/// Parses `|op~0|+|op~0|op~1|+|op~0|op~1|op~2|`.
pub fn parse_encoding(s: &str) -> Result<CellArch> {
    let mut cur = Cursor { src: s, pos: 0 };
    let mut edges = [Op::None; NUM_EDGES];
    let mut e = 0;
    for node in 1..NUM_NODES {
        if node > 1 {
            cur.expect(b'+')?;
        }
        cur.expect(b'|')?;
        for src in 0..node {
            let tag = cur.take_until(b'~')?;
            let op = tag.parse::<Op>()?;
            cur.expect(b'~')?;
            let idx_start = cur.pos;
            let idx = cur.take_until(b'|')?;
            if idx != src.to_string() {
                return Err(Error::Encoding {
                    offset: idx_start,
                    reason: format!("edge into node {node} must come from node {src}, found `{idx}`"),
                });
            }
            cur.expect(b'|')?;
            edges[e] = op;
            e += 1;
        }
    }
    if cur.pos != s.len() {
        return Err(cur.fail("trailing characters"));
    }
    Ok(CellArch { edges })
}

/// Uniform sample from the space.
pub fn sample(seed: u64) -> CellArch {
    sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_with<R: Rng + ?Sized>(rng: &mut R) -> CellArch {
    let mut edges = [Op::None; NUM_EDGES];
    for e in &mut edges {
        *e = Op::ALL[rng.random_range(0..Op::ALL.len())];
    }
    CellArch { edges }
}

/// Resamples exactly one edge to a different operation.
pub fn mutate(a: &CellArch, seed: u64) -> CellArch {
    mutate_with(a, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn mutate_with<R: Rng + ?Sized>(a: &CellArch, rng: &mut R) -> CellArch {
    let mut child = *a;
    let edge = rng.random_range(0..NUM_EDGES);
    let old = a.edges[edge].index();
    // draw among the four other ops
    let pick = rng.random_range(0..Op::ALL.len() - 1);
    child.edges[edge] = Op::ALL[if pick >= old { pick + 1 } else { pick }];
    child
}

/// The first `max` cells of the space in index order (all 15625 when `max` is larger).
pub fn enumerate(max: usize) -> impl Iterator<Item = CellArch> {
    (0..SPACE_SIZE.min(max)).map(CellArch::from_index)
}
