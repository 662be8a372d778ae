//! Fault-diagnosis workbench for a simulated industrial vacuum robot.

pub mod codec;
pub mod error;
pub mod eval;
pub mod lstm;
pub mod operator;
pub mod pipeline;
pub mod robot;
pub mod sim;
