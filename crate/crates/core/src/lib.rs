//! Motion-primitive dictionaries for in-hand manipulation: preprocessing of
//! recorded demonstrations, dictionary learning, constrained trajectory
//! generation and post-hoc constraint checks.

pub mod bench;
pub mod container;
pub mod error;
pub mod geometry;
pub mod io;
pub mod manifest;
pub mod model;
pub mod nmf;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod qp;
pub mod report;
pub mod synth;
pub mod trajgen;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ActivationPrior, ActivationVector, Dictionary, Frame, OffsetSpec, Representation, Trajectory};
