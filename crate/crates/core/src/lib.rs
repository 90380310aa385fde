//! Simulation engine and certification harness for conventions, sanctions
//! and norms among actors that decide by pattern completion.

pub mod rng;
pub mod actor;
pub mod backend;
pub mod experiments;
pub mod certify;
pub mod lmae;
pub mod prefs;
pub mod seq;
