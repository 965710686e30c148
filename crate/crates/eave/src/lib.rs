//! Efficient attribute value extraction with a heavy/light dual encoder.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
