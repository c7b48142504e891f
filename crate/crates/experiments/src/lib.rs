//! Experiment harness for the `hypercardio` solvers: declarative run
//! configurations, measurement of activation and conduction velocity,
//! CSV/VTK output and the numerical studies exposed by the CLI.

pub mod config;
pub mod io;
pub mod measure;
pub mod studies;
