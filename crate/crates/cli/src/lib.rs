//! Command-line front end and embedding file format.

pub mod app;
pub mod format;

pub use app::run;
