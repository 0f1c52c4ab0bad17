//! Deterministic audit of which hand-crafted EEG features a frozen model
//! encodes, which of those it uses, and how much of its behaviour the used
//! features explain.

pub mod adapter;
pub mod erasure;
pub mod closure;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod lexicon;
pub mod numeric;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod seed;
pub mod signal;
pub mod stages;
pub mod stats;
pub mod taxonomy;

pub use error::{Error, Result};
