pub mod adapter;
pub mod diagnostics;
pub mod harness;
pub mod linalg;
pub mod metrics;
