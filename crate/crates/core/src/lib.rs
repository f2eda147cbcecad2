//! Training-free architecture scoring for cell-based CNN search spaces.
//!
//! The score combines two label-free measurements of an untrained network:
//! how linearly independent each layer's channel feature maps are (through
//! the singular values of the channels × spatial matrix) and how strongly
//! the logits bend when the input sweeps a great circle (extrinsic curvature,
//! obtained exactly with second-order forward-mode jets).

pub mod arch;
pub mod cli;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io;
pub mod jet;
pub mod linalg;
pub mod proxy;
pub mod search;
pub mod space;
pub mod tensor;
pub mod theory;

pub use arch::{parse_encoding, CellArch, Op};
pub use engine::{forward, LayerKind, LayerRecord};
pub use error::{Error, Result};
pub use jet::{lift_constant, Jet2, Scalar};
pub use space::{instantiate, NetworkSpec, SpaceConfig};
pub use tensor::Tensor;
