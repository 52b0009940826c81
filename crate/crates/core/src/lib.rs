//! Character-level attentional encoder–decoder for historical spelling
//! normalization, with hard parameter sharing across auxiliary tasks.

pub mod data;
mod error;
pub mod model;

pub use error::{Error, Result};
pub mod evalkit;
pub mod training;
