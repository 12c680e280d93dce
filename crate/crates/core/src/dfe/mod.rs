//! Invertible detail feature extractor.
//!
//! A 3x3 convolution expands the RGB image to `N` channels, a cascade of
//! affine coupling layers transforms them bijectively, and each of the `N`
//! output channels becomes one detail map.

mod cnn;
pub mod container;
mod coupling;
mod model;
mod stack;

pub use cnn::ShallowCnn;
pub use coupling::CouplingLayer;
pub use model::{dfe_extract, dfe_vjp, DfeCache, DfeConfig, DfeModel, ParamReport, REFERENCE_PARAM_COUNT};
pub use stack::FeatureStack;
