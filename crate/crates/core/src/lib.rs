//! Online control of linear time-varying systems with unknown, changing
//! dynamics using disturbance-action policies, system estimation and
//! change-point detection.

pub mod controllers;
pub mod dac;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod lds_sim;
pub mod linalg;
pub mod regret;

pub use error::{Error, Result};
