//! Benchmark harness for the `sparsecode` solvers: dataset generation and
//! file formats, the experiment runners, and CSV emission. The `bench` binary
//! wraps these in a CLI.

pub mod data;
pub mod error;
pub mod idx;
pub mod run;
