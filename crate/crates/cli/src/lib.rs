//! Command implementations behind the `tacqr` binary, exposed as a library
//! so integration tests can drive them directly.

pub mod commands;
pub mod io;
