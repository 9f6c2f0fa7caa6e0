//! Multi-scale temporal (MTCM) and group spatial (GSCM) attention for video
//! feature maps, with hand-written adjoints, a finite-difference gradient checker,
//! an analytic parameter/MAC counter and a synthetic motion benchmark.

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gscm;
pub mod mtcm;
pub mod network;
pub mod nn;
pub mod ops;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, Real, VideoTensor};
