//! Experiment harness: configuration documents, reports, curve fits,
//! sweeps, diagnostic checks, and the command implementations behind the
//! `pavi` binary.

pub mod check;
pub mod commands;
pub mod config;
pub mod fit;
pub mod report;
pub mod sweep;
