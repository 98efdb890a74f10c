//! Internals of the `flory` binary, exposed as a library so integration
//! tests can reuse the config loader and artifact readers.

pub mod config;
pub mod output;
