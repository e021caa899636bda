//! Dilated local/global windowed 3D transformer for volumetric segmentation,
//! with an analytic complexity analyzer and a synthetic-data training harness.

pub mod analyzer;
pub mod architecture;
pub mod attention;
pub mod blocks;
pub mod dims;
pub mod error;
pub mod harness;
pub mod loss;
pub mod oracle;
pub mod params;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
