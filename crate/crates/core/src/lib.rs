pub mod bbox;
pub mod classifier;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod image;
pub mod mil;
pub mod mining;
pub mod pipeline;
pub mod refine;

pub use bbox::BoundingBox;
pub use error::{Error, Result};
