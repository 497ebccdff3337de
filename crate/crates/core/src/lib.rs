pub mod assignment;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod labels;
pub mod model;
mod optim;
pub mod pipeline;
pub mod segmentation;
pub mod verify;

pub use error::{CoreError, Result};
