//! Configuration types for the `mlmc` binary, exposed as a library so
//! integration tests can parse what the binary prints.

pub mod config;
