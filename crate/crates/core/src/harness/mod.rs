//! Synthetic data, file formats, benchmarks and the command line.

pub mod bench;
pub mod cli;
pub mod io;
pub mod synth;
