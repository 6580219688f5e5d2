//! Tropical convolutional networks.
//!
//! Min-plus and max-plus convolution layers in 1D/2D/3D, their compound and
//! parallel mixed forms, the LeNet-style model zoo built from them, sub-gradient
//! training, classification metrics and closed-form operation counting.

pub mod checkpoint;
pub mod complexity;
pub mod data;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod mixed;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod tropical;
pub mod zoo;

pub use error::{Error, Result};
pub use geometry::ConvSpec;
pub use tensor::{Shape, Tensor};
