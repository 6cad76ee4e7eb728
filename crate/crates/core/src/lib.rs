//! 2D Gaussian splatting image codec.
//!
//! An image is represented as a sum of anisotropic colored Gaussians fitted
//! by gradient descent. The crate covers fitting, luminance pruning, a
//! compact float16 container (`.gsf`) and reconstruction.

pub mod cli;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod fit;
pub mod grad;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod prune;
pub mod render;

pub use error::{Error, Result};
pub use fit::{fit, fit_batch, FitConfig, FitReport, InitStrategy};
pub use model::{Gaussian2D, ImageBuffer, SplatSet};
