use super::{is_blown_up, Excitation, LpvDataset, NoiseSpec, Regressor, Rows, SampledPlant, SchedulingMap};
use crate::error::{Error, Result};

/// Noise sources applied while collecting data.
///
/// `state` and `input` are measurement noises scaled against the clean sampled record.
/// `process` is added to the plant state after every sample; for it `level` is an absolute
/// std (Gaussian) or amplitude (uniform), since no clean record exists beforehand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionNoise {
    pub state: NoiseSpec,
    pub input: NoiseSpec,
    pub process: NoiseSpec,
}

impl AcquisitionNoise {
    pub const NONE: AcquisitionNoise = AcquisitionNoise {
        state: NoiseSpec::NONE,
        input: NoiseSpec::NONE,
        process: NoiseSpec::NONE,
    };

    pub fn state_only(state: NoiseSpec) -> Self {
        AcquisitionNoise { state, ..Self::NONE }
    }
}

/// A dataset together with the clean signals and noise realizations behind it.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub dataset: LpvDataset,
    /// `L + 1` true plant states.
    pub states: Rows,
    /// `L` inputs actually applied.
    pub inputs: Rows,
    pub state_noise: Rows,
    pub input_noise: Rows,
}

/// Drives `plant` from rest with `excitation`, sampling every `ts` for `length` samples.
///
/// The excitation sees the true state. Measured states are `x + state noise`, measured inputs
/// are `u + input noise`, and the scheduling parameter is computed from the measured feedback
/// vector.
pub fn acquire_dataset(
    plant: &dyn SampledPlant,
    excitation: &mut Excitation,
    ts: f64,
    length: usize,
    noise: &AcquisitionNoise,
    regressor: Regressor,
    scheduling: SchedulingMap,
) -> Result<Acquisition> {
    if length < 2 {
        return Err(Error::invalid(format!("acquisition needs L >= 2, got {length}")));
    }
    if !(ts > 0.0) {
        return Err(Error::invalid("sampling period must be positive"));
    }
    for n in [&noise.state, &noise.input, &noise.process] {
        n.validate()?;
    }
    let n_x = plant.state_dim();
    let n_u = plant.input_dim();
    let n_reg = regressor.dim(n_x);
    scheduling.validate(n_reg)?;

    let mut process = noise.process.stream(&vec![1.0; plant.disturbance_dim()]);
    let mut states = Rows::with_width(n_x);
    let mut inputs = Rows::with_width(n_u);
    let mut x = vec![0.0; n_x];
    states.push(&x);
    for k in 0..length {
        let t = k as f64 * ts;
        let u = excitation.input(k, t, &x);
        let e = process.next_sample();
        x = plant.advance(&x, &u, &e, t, ts)?;
        if is_blown_up(&x) {
            return Err(Error::Divergence { step: k + 1 });
        }
        inputs.push(&u);
        states.push(&x);
    }

    let state_noise = noise.state.realize(&states);
    let input_noise = noise.input.realize(&inputs);

    let mut measured = Rows::with_width(n_x);
    for (s, n) in states.iter().zip(state_noise.iter()) {
        measured.push(&add(s, n));
    }
    let mut u_meas = Rows::with_width(n_u);
    for (s, n) in inputs.iter().zip(input_noise.iter()) {
        u_meas.push(&add(s, n));
    }

    let mut feedback = Rows::with_width(n_reg);
    let mut p = Rows::with_width(scheduling.dim(n_reg));
    for k in 0..=length {
        let prev = (k > 0).then(|| measured.row(k - 1));
        let reg = regressor.apply(measured.row(k), prev);
        if k < length {
            p.push(&scheduling.apply(&reg));
        }
        feedback.push(&reg);
    }

    let mut dataset = LpvDataset::new(ts, p, feedback, u_meas, regressor, scheduling)?;
    let meta = &mut dataset.metadata;
    for (name, spec) in [("state", noise.state), ("input", noise.input), ("process", noise.process)] {
        meta.push(format!("noise.{name}.kind"), spec.kind.as_str())
            .push(format!("noise.{name}.level"), spec.level)
            .push(format!("noise.{name}.seed"), spec.seed);
    }
    meta.push("excitation", format!("{:?}", excitation.spec()));

    Ok(Acquisition {
        dataset,
        states,
        inputs,
        state_noise,
        input_noise,
    })
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{integrate_rk4, Duffing, ExcitationSpec, LinearPlant, SampledInput, Zoh};

    fn duffing_run(noise: AcquisitionNoise, length: usize) -> Acquisition {
        let mut ex = Excitation::new(ExcitationSpec::Sine { amplitude: 0.4, omega: 1.0 }, 1).unwrap();
        acquire_dataset(
            &Zoh::new(Duffing::default()),
            &mut ex,
            0.1,
            length,
            &noise,
            Regressor::State,
            SchedulingMap::Identity,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_linear_plant_matches_integrator() {
        let plant = LinearPlant::new(vec![vec![0.0, 1.0], vec![-1.0, -0.3]], vec![vec![0.0], vec![1.0]]).unwrap();
        let spec = ExcitationSpec::Uniform { amplitude: 1.0, seed: 3 };
        let mut ex = Excitation::new(spec.clone(), 1).unwrap();
        let acq = acquire_dataset(
            &Zoh::new(plant.clone()),
            &mut ex,
            0.1,
            30,
            &AcquisitionNoise::NONE,
            Regressor::State,
            SchedulingMap::Identity,
        )
        .unwrap();

        let mut ex = Excitation::new(spec, 1).unwrap();
        let samples: Vec<Vec<f64>> = (0..30).map(|k| ex.input(k, k as f64 * 0.1, &[])).collect();
        let input = SampledInput { samples, period: 0.1 };
        let traj = integrate_rk4(&plant, &[0.0, 0.0], |t, _| input.at(t), 3.0, 0.01).unwrap();
        for k in 0..=30 {
            assert_eq!(acq.dataset.x.row(k), traj.states[10 * k].as_slice());
        }
    }

    #[test]
    fn gaussian_ratio_statistics() {
        let acq = duffing_run(AcquisitionNoise::state_only(NoiseSpec::gaussian_ratio(0.05, 11)), 2000);
        let sig = acq.states.column_std();
        let noise = acq.state_noise.column_std();
        for j in 0..2 {
            let ratio = noise[j] / sig[j];
            assert!((0.04..=0.06).contains(&ratio), "channel {j}: {ratio}");
        }
    }

    #[test]
    fn measurement_noise_is_layered_exactly() {
        let acq = duffing_run(AcquisitionNoise::state_only(NoiseSpec::uniform(0.01, 5)), 200);
        for k in 0..=200 {
            for j in 0..2 {
                assert_eq!(acq.dataset.x.row(k)[j], acq.states.row(k)[j] + acq.state_noise.row(k)[j]);
            }
        }
    }

    #[test]
    fn identical_seeds_identical_datasets() {
        let noise = AcquisitionNoise::state_only(NoiseSpec::gaussian_ratio(0.05, 1));
        assert_eq!(duffing_run(noise, 300).dataset, duffing_run(noise, 300).dataset);
    }

    #[test]
    fn duffing_dataset_shape() {
        let acq = duffing_run(AcquisitionNoise::state_only(NoiseSpec::gaussian_ratio(0.05, 1)), 2000);
        let ds = &acq.dataset;
        assert_eq!((ds.len(), ds.x.len(), ds.ts), (2000, 2001, 0.1));
        for k in 0..ds.len() {
            assert_eq!(ds.p.row(k), ds.x.row(k));
        }
    }

    #[test]
    fn short_records_rejected() {
        let mut ex = Excitation::new(ExcitationSpec::Sine { amplitude: 0.4, omega: 1.0 }, 1).unwrap();
        let res = acquire_dataset(
            &Zoh::new(Duffing::default()),
            &mut ex,
            0.1,
            1,
            &AcquisitionNoise::NONE,
            Regressor::State,
            SchedulingMap::Identity,
        );
        assert!(res.is_err());
    }
}
