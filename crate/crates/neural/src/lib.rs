//! Minimal dense-tensor math with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass as a
//! node in a flat tape; [`Graph::backward`] walks that tape in reverse and
//! accumulates exact analytic gradients. Learnable values live in a
//! [`ParamStore`] and are copied onto a fresh tape for every step, so a graph
//! never outlives a single forward/backward pair.
//!
//! Everything is generic over [`Real`] (`f32` for training, `f64` for
//! finite-difference verification).

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod init;
mod params;
mod real;
mod schedule;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
pub use error::{NeuralError, Result};
pub use graph::{ctc_min_frames, Graph, Segment, Var};
pub use init::{xavier_uniform, Init};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use schedule::LrSchedule;
pub use tensor::Tensor;
