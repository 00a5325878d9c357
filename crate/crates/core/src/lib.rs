//! Buddy Compression memory model.
//!
//! Memory is compressed at 128-byte entry granularity. Each allocation picks a
//! target ratio that fixes how many of an entry's four 32-byte sectors stay in
//! device memory; whatever does not fit goes to a pre-assigned slot in a larger,
//! slower buddy region. This crate provides the entry codec, the buddy layout,
//! a snapshot profiler that picks per-allocation targets, a trace-driven
//! simulator, and a synthetic corpus generator.

pub mod codec;
pub mod error;
pub mod gen;
pub mod memory;
pub mod profiler;
pub mod sim;

pub use error::{Error, Result};
