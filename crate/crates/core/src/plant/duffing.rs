use super::PlantModel;

/// Damped oscillator with a cubic spring:
/// `x1' = x2`, `x2' = -alpha1*x1 - alpha2*x1^3 - beta*x2 + u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duffing {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
}

impl Duffing {
    pub fn new(alpha1: f64, alpha2: f64, beta: f64) -> Self {
        Duffing { alpha1, alpha2, beta }
    }

    /// Softening spring (`alpha1 = 1`, `alpha2 = -1`). Escapes its potential well under
    /// `u = 0.4 sin t`, so it is not used for data generation.
    pub fn softening() -> Self {
        Duffing::new(1.0, -1.0, 0.2)
    }

    /// Double-well spring (`alpha1 = -1`, `alpha2 = 1`). Stays bounded under the
    /// experiment excitation.
    pub fn double_well() -> Self {
        Duffing::new(-1.0, 1.0, 0.2)
    }
}

impl Default for Duffing {
    fn default() -> Self {
        Duffing::double_well()
    }
}

pub fn duffing_dynamics(x: [f64; 2], u: f64, params: &Duffing) -> [f64; 2] {
    [
        x[1],
        -params.alpha1 * x[0] - params.alpha2 * x[0].powi(3) - params.beta * x[1] + u,
    ]
}

impl PlantModel for Duffing {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]) {
        let d = duffing_dynamics([x[0], x[1]], u[0], self);
        dx[0] = d[0];
        dx[1] = d[1];
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![("alpha1", self.alpha1), ("alpha2", self.alpha2), ("beta", self.beta)]
    }
}
