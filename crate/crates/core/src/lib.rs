// `Float as f64` is a no-op only when the feature widens `Float`.
#![cfg_attr(feature = "f64", allow(clippy::unnecessary_cast))]

pub mod crfdecode;
pub mod embedding;
pub mod error;
pub mod graphrev;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthdoc;
pub mod tensor;

pub use error::{Error, Result};
