//! Files, HTTP service and command-line front end for plot models.

pub mod api;
pub mod cli;
pub mod format;
pub mod service;
pub mod session;
