//! Files, services and the command line around `promptrevert-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
pub mod remote;
pub mod run;

pub use promptrevert_core as core;
