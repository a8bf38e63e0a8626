//! Unsupervised constituency parsing from text, speech and images.
//!
//! The pipeline: per-modality features ([`features`]) feed a differentiable
//! inside-outside chart ([`chart`]) whose parameters are trained with
//! reconstruction, contrastive and representation objectives
//! ([`training`]). Trees are extracted with CKY and scored with bracketing
//! F1 or the clip-aligned SCF1 ([`decode`]).

pub mod chart;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod training;

pub use chart::{Chart, Span};
pub use config::{Mode, RunConfig};
pub use corpus::{ExampleBundle, RegionSet, SpeechTrack};
pub use decode::BinaryTree;
pub use error::{Error, Result};
pub use model::ModelParams;
pub use numerics::{Graph, ParamStore, Tensor};
