//! `svs`: command-line tools and an HTTP editing service around the acoustic model.
//!
//! The service runs the edit loop: generate from a score, inspect the style scores and
//! the analysed f0, edit either, regenerate.

pub mod cli;
pub mod config;
pub mod diag;
pub mod server;
pub mod session;
