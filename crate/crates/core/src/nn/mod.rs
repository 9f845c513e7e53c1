//! Minimal CPU neural-network machinery for the feature extractor: batched
//! convolution, group normalization, residual blocks, Adam.

mod adam;
mod encoder;
mod layers;
mod params;

pub use adam::{Adam, Scalar};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use params::{Grads, Param, ParamSet};
