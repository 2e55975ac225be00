pub mod cascade;
pub mod error;
pub mod eval;
pub mod featmap;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod refine;
pub mod scoring;
pub mod synth;
pub mod training;
pub mod tubes;
pub mod windowing;

pub use error::{Error, Result};
