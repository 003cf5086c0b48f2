//! Subpixel placement of tokens for vision transformers.
//!
//! The crate implements a tokenizer that extracts fixed-size patches at
//! continuous (subpixel) image positions via bilinear interpolation, spatial
//! priors for choosing initial placements, a small transformer classifier
//! with hand-written forward and reverse passes, and a gradient-based oracle
//! search that moves placements to minimize (or adversarially maximize) the
//! classification loss of a frozen encoder.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`imagery`] - image/mask containers and bit-exact file formats
//! * [`priors`] - placement sampling (uniform, gaussian, sobol, isotropic,
//!   center, weighted/salient, background, boundary)
//! * [`subpixel`] - differentiable patch extraction and positional embeddings
//! * [`encoder`] - the toy transformer, gradients w.r.t. params, tokens and
//!   placements
//! * [`oracle`] - per-image gradient search over placements
//! * [`metrics`] - accuracy, kNN protocol, saliency score, relative saliency
//!   gain, transfer delta
//! * [`toytask`] - synthetic shape dataset with ground-truth saliency and a
//!   trainer for the toy encoder

pub mod encoder;
pub mod error;
pub mod imagery;
pub mod metrics;
pub mod oracle;
pub mod priors;
pub mod rng;
pub mod subpixel;
pub mod toytask;

pub(crate) mod linalg;

pub use error::{Error, Result};
pub use imagery::{Image, SaliencyMask};
pub use priors::{PlacementSet, PriorKind, PriorSpec};
pub use subpixel::{Token, TokenizerConfig};
