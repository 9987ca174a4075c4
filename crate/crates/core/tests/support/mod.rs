//! Oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

pub mod fd;
pub mod optics;
pub mod transport;
pub mod tv;
