use super::{is_blown_up, PlantModel, SampledPlant};
use crate::error::{check_dim, Error, Result};

/// States at `times[k]`, including the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds x0")
    }
}

/// One classical Runge-Kutta step with `u` held over the whole step.
pub fn rk4_step<M: PlantModel + ?Sized>(model: &M, x: &[f64], u: &[f64], t: f64, dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    model.derivative(x, u, t, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    model.derivative(&tmp, u, t + 0.5 * dt, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    model.derivative(&tmp, u, t + 0.5 * dt, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    model.derivative(&tmp, u, t + dt, &mut k4);

    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates `model` from `x0` with fixed step `dt`.
///
/// The input is sampled once at the start of every step, from the current time and state, and
/// held for the step (zero-order hold). It is never evaluated at intermediate stages.
pub fn integrate_rk4<M, F>(model: &M, x0: &[f64], mut u_of_t: F, t_end: f64, dt: f64) -> Result<Trajectory>
where
    M: PlantModel + ?Sized,
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::invalid(format!("need dt > 0 and t_end >= dt (dt = {dt}, t_end = {t_end})")));
    }
    check_dim("integrate_rk4 x0", model.state_dim(), x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x0 must be finite"));
    }

    let steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());

    for k in 0..steps {
        let t = k as f64 * dt;
        let x = &states[k];
        let u = u_of_t(t, x);
        check_dim("integrate_rk4 input", model.input_dim(), u.len())?;
        let next = rk4_step(model, x, &u, t, dt);
        if is_blown_up(&next) {
            return Err(Error::Divergence { step: k + 1 });
        }
        times.push((k + 1) as f64 * dt);
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

/// Holds `u` over one sampling period `ts`, integrating with `substeps` RK4 steps.
pub fn advance_zoh<M: PlantModel + ?Sized>(
    model: &M,
    x: &[f64],
    u: &[f64],
    t: f64,
    ts: f64,
    substeps: usize,
) -> Vec<f64> {
    let dt = ts / substeps as f64;
    let mut state = x.to_vec();
    for s in 0..substeps {
        state = rk4_step(model, &state, u, t + s as f64 * dt, dt);
    }
    state
}

/// A piecewise-constant input given as samples with period `period`.
#[derive(Debug, Clone)]
pub struct SampledInput {
    pub samples: Vec<Vec<f64>>,
    pub period: f64,
}

impl SampledInput {
    pub fn at(&self, t: f64) -> Vec<f64> {
        // The small offset keeps sample boundaries on the new sample despite rounding in k*dt.
        let idx = ((t + 1e-9 * self.period) / self.period).floor() as usize;
        self.samples[idx.min(self.samples.len() - 1)].clone()
    }
}

/// A continuous plant driven through D/A (hold) and A/D (sample) converters.
#[derive(Debug, Clone)]
pub struct Zoh<M> {
    pub model: M,
    pub substeps: usize,
}

impl<M> Zoh<M> {
    /// Inner step `Ts / 10`.
    pub fn new(model: M) -> Self {
        Zoh { model, substeps: 10 }
    }
}

impl<M: PlantModel> SampledPlant for Zoh<M> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn disturbance_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn advance(&self, x: &[f64], u: &[f64], e: &[f64], t: f64, ts: f64) -> Result<Vec<f64>> {
        check_dim("plant input", self.model.input_dim(), u.len())?;
        let mut next = advance_zoh(&self.model, x, u, t, ts, self.substeps);
        for (xi, ei) in next.iter_mut().zip(e) {
            *xi += ei;
        }
        Ok(next)
    }
}
