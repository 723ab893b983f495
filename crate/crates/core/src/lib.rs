pub mod ba;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod geometry;
pub mod pipeline;
pub mod probmap;
pub mod rng;
pub mod simulator;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
