//! Plant fixtures, fixed-step integration and noisy data acquisition.

mod acquire;
mod dataset;
mod duffing;
mod excitation;
mod integrate;
mod linear;
mod noise;
mod two_link;

pub use acquire::{acquire_dataset, Acquisition, AcquisitionNoise};
pub use dataset::{LpvDataset, Regressor, Rows, SchedulingMap};
pub use duffing::{duffing_dynamics, Duffing};
pub use excitation::{excitation_signal, Excitation, ExcitationSpec, TwoLinkExcitation};
pub use integrate::{advance_zoh, integrate_rk4, rk4_step, SampledInput, Trajectory, Zoh};
pub use linear::LinearPlant;
pub use noise::{NoiseKind, NoiseSpec, NoiseStream};
pub use two_link::{two_link_dynamics, TwoLinkArm};

use crate::error::Result;

/// States whose infinity norm exceeds this are treated as divergent.
pub const BLOW_UP: f64 = 1e6;

/// Continuous-time plant `dx/dt = f(x, u, t)`.
pub trait PlantModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn derivative(&self, x: &[f64], u: &[f64], t: f64, dx: &mut [f64]);
    fn parameters(&self) -> Vec<(&'static str, f64)>;
}

/// A plant advanced one sampling period at a time with the input held constant.
///
/// `e` is an additive disturbance sample of length `disturbance_dim()`.
pub trait SampledPlant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn advance(&self, x: &[f64], u: &[f64], e: &[f64], t: f64, ts: f64) -> Result<Vec<f64>>;
}

pub(crate) fn is_blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP)
}
