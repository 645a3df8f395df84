//! Closed-loop simulation of the scheduled feedback law, reference generation, tracking and
//! inversion metrics, and the Monte Carlo harness.

mod known;
mod monte_carlo;
mod reference;

use std::fs;
use std::path::Path;

pub use known::{
    global_inversion_error, inversion_error, lambda2_grid, verify_tracking_bound, KnownLpvSystem, TrackingBoundReport,
};
pub use monte_carlo::{monte_carlo, MonteCarloSummary, TrialMetrics, TrialOutcome};
pub use reference::{generate_reference, Companion, ReferenceKind, ReferenceSpec, SecondOrderFilter};

use crate::design::Controller;
use crate::error::{check_dim, Error, Result};
use crate::plant::{is_blown_up, NoiseSpec, Regressor, Rows, SampledPlant, SchedulingMap};

/// Root mean square over the whole sequence.
pub fn rms(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::invalid("rms of an empty sequence"));
    }
    Ok((z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt())
}

/// How the loop is closed around a sampled plant.
pub struct LoopSetup<'a> {
    pub plant: &'a dyn SampledPlant,
    /// One controller per plant input.
    pub controllers: &'a [Controller],
    pub regressor: Regressor,
    pub scheduling: SchedulingMap,
    pub ts: f64,
    /// Added to the plant state before the controller sees it. The ratio kind scales with the
    /// reference std of the matching channel (channel 0 for states beyond the reference width).
    pub measurement: NoiseSpec,
    /// Passed to the plant as its disturbance input; the ratio kind is treated as absolute.
    pub disturbance: NoiseSpec,
}

/// A simulated closed-loop trajectory of `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub ts: f64,
    /// `r_0 .. r_T`.
    pub reference: Rows,
    /// True plant states `0 .. T`.
    pub states: Rows,
    /// Feedback vectors built from the true states, `0 .. T`.
    pub feedback: Rows,
    /// Feedback vectors the controller saw, `0 .. T-1`.
    pub measured: Rows,
    pub scheduling: Rows,
    pub inputs: Rows,
    pub disturbance: Rows,
    /// `|r_t - feedback_t|_inf`, `0 .. T`.
    pub te: Vec<f64>,
    /// Per-channel RMS of `r_t - feedback_t` over `t = 1 .. T`.
    pub rms: Vec<f64>,
}

impl ClosedLoopRun {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// `t, r_1.., x_1.., u_1.., TE` with empty inputs on the final row.
    pub fn to_csv_string(&self) -> Result<String> {
        let n_x = self.feedback.width();
        let n_u = self.inputs.width();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n_x).map(|i| format!("r_{i}")));
        header.extend((1..=n_x).map(|i| format!("x_{i}")));
        header.extend((1..=n_u).map(|i| format!("u_{i}")));
        header.push("TE".into());
        let csv_err = |e: csv::Error| Error::parse("run csv", e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for t in 0..self.feedback.len() {
            let mut rec = vec![format!("{}", t as f64 * self.ts)];
            rec.extend(self.reference.row(t).iter().map(f64::to_string));
            rec.extend(self.feedback.row(t).iter().map(f64::to_string));
            if t < self.inputs.len() {
                rec.extend(self.inputs.row(t).iter().map(f64::to_string));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), n_u));
            }
            rec.push(self.te[t].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("run csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Runs `T = reference.len() - 1` steps from the zero state.
///
/// At each step the controller sees `v_t = regressor(x_t + n_t)`, schedules on
/// `p_t = scheduling(v_t)` and applies `u_t = K1(p_t) r_{t+1} - K2(p_t) v_t` for one period.
pub fn simulate_closed_loop(setup: &LoopSetup<'_>, reference: &Rows) -> Result<ClosedLoopRun> {
    let plant = setup.plant;
    let n_state = plant.state_dim();
    let n_v = setup.regressor.dim(n_state);
    let n_p = setup.scheduling.dim(n_v);
    setup.scheduling.validate(n_v)?;
    setup.measurement.validate()?;
    setup.disturbance.validate()?;
    check_dim("controllers per input", plant.input_dim(), setup.controllers.len())?;
    for k in setup.controllers {
        check_dim("controller feedback dimension", n_v, k.n_x())?;
        check_dim("controller scheduling dimension", n_p, k.basis().n_p())?;
    }
    check_dim("reference width", n_v, reference.width())?;
    if reference.len() < 2 {
        return Err(Error::invalid("closed loop needs at least one step (T >= 1)"));
    }
    if !(setup.ts > 0.0) {
        return Err(Error::invalid("sampling period must be positive"));
    }
    let steps = reference.len() - 1;

    let ref_std = reference.column_std();
    let meas_scale: Vec<f64> = (0..n_state).map(|i| ref_std.get(i).copied().unwrap_or(ref_std[0])).collect();
    let mut meas = setup.measurement.stream(&meas_scale);
    let mut dist = setup.disturbance.stream(&vec![1.0; plant.disturbance_dim()]);

    let mut run = ClosedLoopRun {
        ts: setup.ts,
        reference: reference.clone(),
        states: Rows::with_width(n_state),
        feedback: Rows::with_width(n_v),
        measured: Rows::with_width(n_v),
        scheduling: Rows::with_width(n_p),
        inputs: Rows::with_width(plant.input_dim()),
        disturbance: Rows::with_width(plant.disturbance_dim()),
        te: Vec::with_capacity(steps + 1),
        rms: Vec::new(),
    };
    let mut x = vec![0.0; n_state];
    let mut prev_true: Option<Vec<f64>> = None;
    let mut prev_meas: Option<Vec<f64>> = None;
    for t in 0..=steps {
        let v = setup.regressor.apply(&x, prev_true.as_deref());
        run.te.push(inf_gap(reference.row(t), &v));
        run.states.push(&x);
        run.feedback.push(&v);
        if t == steps {
            break;
        }
        let noise = meas.next_sample();
        let xm: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let vm = setup.regressor.apply(&xm, prev_meas.as_deref());
        let p = setup.scheduling.apply(&vm);
        let r_next = reference.row(t + 1);
        let u: Vec<f64> = setup.controllers.iter().map(|k| k.evaluate(&p, r_next, &vm)).collect();
        let e = if !setup.disturbance.is_none() {
            dist.next_sample()
        } else {
            vec![0.0; plant.disturbance_dim()]
        };
        let next = plant.advance(&x, &u, &e, t as f64 * setup.ts, setup.ts)?;
        run.measured.push(&vm);
        run.scheduling.push(&p);
        run.inputs.push(&u);
        run.disturbance.push(&e);
        if is_blown_up(&next) || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t + 1 });
        }
        prev_true = Some(x);
        prev_meas = Some(xm);
        x = next;
    }
    run.rms = (0..n_v)
        .map(|j| {
            let err: Vec<f64> = (1..=steps).map(|t| reference.row(t)[j] - run.feedback.row(t)[j]).collect();
            rms(&err)
        })
        .collect::<Result<_>>()?;
    Ok(run)
}

fn inf_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polynomial_basis;
    use crate::plant::{Duffing, Zoh};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// x+ = (0.5 + 0.2 p) x + 2 u + e with p = x.
    fn varying() -> KnownLpvSystem {
        KnownLpvSystem::new(
            vec![scalar(0.5), scalar(0.2)],
            vec![scalar(2.0), scalar(0.0)],
            vec![scalar(1.0), scalar(0.0)],
            SchedulingMap::Identity,
            vec![(-1.0, 1.0)],
            vec![(-1.0, 1.0)],
            vec![(-0.05, 0.05)],
        )
        .unwrap()
    }

    /// K1 = 0.5, K2 = 0.25 + 0.1 p: the exact inverse of `varying`.
    fn varying_inverse() -> Controller {
        let mut k = Controller::zeros(polynomial_basis(1, 1).unwrap(), 1);
        k.set_coefficient(0, 0, 0, 0.5);
        k.set_coefficient(1, 0, 0, 0.25);
        k.set_coefficient(1, 0, 1, 0.1);
        k
    }

    fn setup<'a>(plant: &'a dyn SampledPlant, ks: &'a [Controller], dist: NoiseSpec) -> LoopSetup<'a> {
        LoopSetup {
            plant,
            controllers: ks,
            regressor: Regressor::State,
            scheduling: SchedulingMap::Identity,
            ts: 1.0,
            measurement: NoiseSpec::NONE,
            disturbance: dist,
        }
    }

    fn sine_reference(len: usize) -> Rows {
        let mut r = Rows::with_width(1);
        for t in 0..len {
            r.push(&[0.8 * (0.3 * t as f64).sin()]);
        }
        r
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&[0.0; 5]).unwrap(), 0.0);
        assert!((rms(&[-2.5; 7]).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(rms(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 1.0);
        assert!(rms(&[]).is_err());
    }

    #[test]
    fn exact_inverse_tracks_in_one_step() {
        let sys = varying();
        let ks = [varying_inverse()];
        let run = simulate_closed_loop(&setup(&sys, &ks, NoiseSpec::NONE), &sine_reference(200)).unwrap();
        assert!(run.te[1..].iter().all(|&e| e <= 1e-12), "{:?}", &run.te[..5]);
        assert!(run.rms[0] <= 1e-12);
    }

    #[test]
    fn all_zero_run() {
        let sys = varying();
        let ks = [Controller::zeros(polynomial_basis(1, 2).unwrap(), 1)];
        let run = simulate_closed_loop(&setup(&sys, &ks, NoiseSpec::NONE), &Rows::from_vecs(1, &vec![vec![0.0]; 30]).unwrap()).unwrap();
        assert!(run.states.iter().flatten().all(|&v| v == 0.0));
        assert!(run.inputs.iter().flatten().all(|&v| v == 0.0));
        assert!(run.te.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_recursion() {
        let sys = varying();
        let mut k = varying_inverse();
        k.set_coefficient(0, 0, 1, 0.07);
        let ks = [k.clone()];
        let r = sine_reference(150);
        let run = simulate_closed_loop(&setup(&sys, &ks, NoiseSpec::uniform(0.05, 3)), &r).unwrap();
        let mut x = 0.0_f64;
        for t in 0..150 {
            assert!((run.states.row(t)[0] - x).abs() <= 1e-12 * (1.0 + x.abs()));
            if t + 1 == 150 {
                break;
            }
            let (k1, k2) = k.gains(&[x]);
            let a = 0.5 + 0.2 * x;
            x = (a - 2.0 * k2[0]) * x + 2.0 * k1[0] * r.row(t + 1)[0] + run.disturbance.row(t)[0];
        }
    }

    #[test]
    fn tracking_bound_holds_for_perturbed_controller() {
        let sys = varying();
        let oracle = [varying_inverse()];
        let mut k = varying_inverse();
        k.set_coefficient(1, 0, 0, 0.25 + 0.02);
        let used = [k];
        let run = simulate_closed_loop(&setup(&sys, &used, NoiseSpec::uniform(0.05, 8)), &sine_reference(300)).unwrap();
        let rep = verify_tracking_bound(&sys, &oracle, &used, &run, sys.input_gain_bound()).unwrap();
        assert!(rep.holds(1e-9), "{}", rep.min_margin);
        // With the oracle itself and no noise, both sides vanish.
        let clean = simulate_closed_loop(&setup(&sys, &oracle, NoiseSpec::NONE), &sine_reference(100)).unwrap();
        let rep = verify_tracking_bound(&sys, &oracle, &oracle, &clean, 2.0).unwrap();
        assert!(rep.margins.iter().all(|m| m.abs() <= 1e-12));
    }

    #[test]
    fn hand_computed_bound_on_scalar_recursion() {
        // K2 off by eps: x+ = 0.5 x + 2 (0.5 r - (0.25 + eps) x) = r - 2 eps x.
        let sys = KnownLpvSystem::new(
            vec![scalar(0.5), scalar(0.0)],
            vec![scalar(2.0), scalar(0.0)],
            vec![scalar(1.0), scalar(0.0)],
            SchedulingMap::Identity,
            vec![(-1.0, 1.0)],
            vec![(-1.0, 1.0)],
            vec![(0.0, 0.0)],
        )
        .unwrap();
        let exact = Controller::unflatten(polynomial_basis(1, 0).unwrap(), 1, &[0.5, 0.25]).unwrap();
        let eps = 0.1;
        let off = Controller::unflatten(polynomial_basis(1, 0).unwrap(), 1, &[0.5, 0.25 + eps]).unwrap();
        let ks = [off.clone()];
        let run = simulate_closed_loop(&setup(&sys, &ks, NoiseSpec::NONE), &sine_reference(40)).unwrap();
        let rep = verify_tracking_bound(&sys, &[exact], &ks, &run, 2.0).unwrap();
        for t in 0..39 {
            // TE_{t+1} = 2 eps |x_t| = lambda_b |eps x_t|: the bound is tight.
            assert!((run.te[t + 1] - 2.0 * eps * run.states.row(t)[0].abs()).abs() < 1e-12);
            assert!(rep.margins[t].abs() < 1e-12);
        }
    }

    #[test]
    fn tracking_bound_rejects_noisy_measurements() {
        let sys = varying();
        let ks = [varying_inverse()];
        let mut s = setup(&sys, &ks, NoiseSpec::NONE);
        s.measurement = NoiseSpec::uniform(0.01, 1);
        let run = simulate_closed_loop(&s, &sine_reference(20)).unwrap();
        assert!(verify_tracking_bound(&sys, &ks, &ks, &run, 2.0).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let sys = varying();
        // u = r+ + 5 x makes x+ roughly 10.5 x after a unit reference kick.
        let k = Controller::unflatten(polynomial_basis(1, 0).unwrap(), 1, &[1.0, -5.0]).unwrap();
        let ks = [k];
        let mut r = Rows::from_vecs(1, &[vec![0.0], vec![1.0]]).unwrap();
        for _ in 0..40 {
            r.push(&[0.0]);
        }
        match simulate_closed_loop(&setup(&sys, &ks, NoiseSpec::NONE), &r) {
            Err(Error::Divergence { step }) => assert!(step > 1 && step < 40, "{step}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_short_reference_and_bad_shapes() {
        let sys = varying();
        let ks = [varying_inverse()];
        let s = setup(&sys, &ks, NoiseSpec::NONE);
        assert!(simulate_closed_loop(&s, &sine_reference(1)).is_err());
        let wide = Rows::from_vecs(2, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(simulate_closed_loop(&s, &wide).is_err());
    }

    #[test]
    fn duffing_run_csv_layout() {
        let plant = Zoh::new(Duffing::double_well());
        let ks = [Controller::zeros(polynomial_basis(2, 1).unwrap(), 2)];
        let mut s = setup(&plant, &ks, NoiseSpec::NONE);
        s.ts = 0.1;
        s.measurement = NoiseSpec::gaussian_ratio(0.05, 2);
        let spec = ReferenceSpec {
            kind: ReferenceKind::FilteredUniform,
            amplitude: 5.0,
            cutoff: 1.0,
            positions: 1,
            companion: Companion::Derivative,
            dwell: 1,
            seed: 1,
        };
        let r = generate_reference(&spec, 0.1, 21).unwrap();
        let run = simulate_closed_loop(&s, &r).unwrap();
        let text = run.to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,r_1,r_2,x_1,x_2,u_1,TE");
        assert_eq!(lines.len(), 22);
        assert!(lines[21].contains(",,"));
        assert_eq!(run.rms.len(), 2);
        assert_ne!(run.measured.row(3), run.feedback.row(3));
    }

    #[test]
    fn delayed_output_feedback() {
        let plant = Zoh::new(Duffing::double_well());
        let ks = [Controller::zeros(polynomial_basis(2, 1).unwrap(), 2)];
        let mut s = setup(&plant, &ks, NoiseSpec::NONE);
        s.ts = 0.1;
        s.regressor = Regressor::DelayedOutput { output: 0 };
        let mut r = Rows::with_width(2);
        for t in 0..10 {
            r.push(&[t as f64, (t as f64 - 1.0).max(0.0)]);
        }
        let run = simulate_closed_loop(&s, &r).unwrap();
        assert_eq!(run.te[5], 5.0_f64.max(4.0));
        assert_eq!(run.feedback.row(5), &[0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn rms_scales_linearly(z in prop::collection::vec(-10.0f64..10.0, 1..50), c in -5.0f64..5.0) {
            let scaled: Vec<f64> = z.iter().map(|v| c * v).collect();
            let lhs = rms(&scaled).unwrap();
            let rhs = c.abs() * rms(&z).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn tracking_bound_on_random_perturbations(
            d0 in -0.05f64..0.05, d1 in -0.05f64..0.05, d2 in -0.05f64..0.05, seed in 0u64..1000,
        ) {
            let sys = varying();
            let oracle = [varying_inverse()];
            let mut k = varying_inverse();
            k.set_coefficient(0, 0, 0, 0.5 + d0);
            k.set_coefficient(1, 0, 0, 0.25 + d1);
            k.set_coefficient(1, 0, 1, 0.1 + d2);
            let used = [k];
            let run = simulate_closed_loop(&setup(&sys, &used, NoiseSpec::uniform(0.05, seed)), &sine_reference(120)).unwrap();
            let rep = verify_tracking_bound(&sys, &oracle, &used, &run, sys.input_gain_bound()).unwrap();
            prop_assert!(rep.holds(1e-9), "{}", rep.min_margin);
        }
    }
}
