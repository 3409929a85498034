//! Compiler, lookup-table packer and cycle-level simulator for a streaming
//! gate-sequence controller.

pub mod bench;
pub mod compile;
pub mod config;
pub mod dds;
pub mod error;
pub mod file;
pub mod jaqal;
pub mod lut;
pub mod provider;
pub mod pulse;
pub mod sched;
pub mod sim;
pub mod spline;
pub mod word;

pub use compile::{compile, compile_source, CompileError, CompileOptions, Compiled};
pub use error::Error;
