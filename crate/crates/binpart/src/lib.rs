//! Command-line driver for `binpart-core`: file formats, the end-to-end
//! flow and stable exit codes.

pub mod error;
pub mod flow;
pub mod formats;

pub use error::{code, Error};
