//! Expressive singing voice synthesis: a source–filter acoustic model with local style
//! tokens and a dual-path pitch encoder, built on a small reverse-mode tensor engine,
//! plus the signal tools around it.

pub mod dpe;
pub mod dsp;
pub mod error;
pub mod lst;
pub mod model;
pub mod nn;
pub mod par;
pub mod score;

pub use error::{Error, Result};
