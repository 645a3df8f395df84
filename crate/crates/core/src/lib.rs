//! Direct data-driven design of LPV state-feedback controllers.
//!
//! The pipeline collects noisy input/state data from a plant, estimates prior bounds from the
//! data, solves a sparse l1 linear program for a scheduled feedback law, and evaluates the
//! resulting controller in closed loop.

pub mod error;
pub mod basis;
pub mod kv;
pub mod lp;
pub mod plant;
pub mod design;
pub mod estimate;
pub mod closed_loop;
pub mod config;
pub mod pipeline;

pub use error::{Error, Result};
