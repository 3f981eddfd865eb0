//! Support code for the `routeprobe` command-line tool.

pub mod config;
