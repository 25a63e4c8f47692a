//! Audio-visual masked cluster prediction at desk scale.

mod bytes;
pub mod clusterlab;
pub mod decode;
pub mod error;
pub mod seed;
pub mod selftest;
pub mod features;
pub mod masking;
pub mod model;
pub mod synthcorpus;
pub mod trainer;

pub use error::{Error, Result};
