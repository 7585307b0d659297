//! Service and command line front end for the gencache runtime.

pub mod cli;
pub mod config;
pub mod server;
