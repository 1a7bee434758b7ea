pub mod error;
pub mod imagio;
pub mod metrics;
pub mod noise;
pub mod ocsvm;
pub mod perturb;
pub mod pipeline;
pub mod raster;
pub mod registry;
pub mod scene;
pub mod simgen;
pub mod spectrum;

pub use error::{Error, Result};
