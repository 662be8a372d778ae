//! Command-line tool and HTTP backend for the fault-diagnosis workbench.

pub mod commands;
pub mod server;
