//! The acquire, estimate, design and simulate chain driven by a [`PipelineConfig`].

use nalgebra::DMatrix;

use crate::closed_loop::{
    generate_reference, monte_carlo, rms, simulate_closed_loop, ClosedLoopRun, KnownLpvSystem, LoopSetup,
    MonteCarloSummary, TrialMetrics,
};
use crate::config::{PipelineConfig, PlantConfig};
use crate::design::{design_controller_with, Controller, DesignReport};
use crate::error::{Error, Result};
use crate::estimate::estimate_priors;
use crate::kv::KvBlock;
use crate::plant::{
    acquire_dataset, Acquisition, AcquisitionNoise, Duffing, Excitation, LpvDataset, NoiseKind, SampledPlant,
    SchedulingMap, TwoLinkArm, Zoh,
};

pub fn build_plant(cfg: &PipelineConfig) -> Result<Box<dyn SampledPlant + Send + Sync>> {
    let substeps = cfg.acquisition.substeps;
    Ok(match cfg.plant {
        PlantConfig::Duffing { alpha1, alpha2, beta } => Box::new(Zoh {
            model: Duffing::new(alpha1, alpha2, beta),
            substeps,
        }),
        PlantConfig::TwoLink { l1, l2, m1, m2, g, friction } => Box::new(Zoh {
            model: TwoLinkArm { l1, l2, m1, m2, g, friction },
            substeps,
        }),
        PlantConfig::ScalarLpv { .. } => Box::new(known_system(cfg)?),
    })
}

/// The scalar discrete plant of a `scalar-lpv` config, with its domain boxes.
pub fn known_system(cfg: &PipelineConfig) -> Result<KnownLpvSystem> {
    let PlantConfig::ScalarLpv { a0, a1, b, state_box } = cfg.plant else {
        return Err(Error::invalid("only scalar-lpv plants are known systems"));
    };
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let e = &cfg.acquisition.process_noise;
    let e_max = match e.kind {
        NoiseKind::UniformAmplitude => e.level,
        NoiseKind::GaussianRatio => 4.0 * e.level,
        NoiseKind::None => 0.0,
    };
    KnownLpvSystem::new(
        vec![s(a0), s(a1)],
        vec![s(b), s(0.0)],
        vec![s(1.0), s(0.0)],
        SchedulingMap::Identity,
        vec![(state_box[0], state_box[1])],
        vec![(state_box[0], state_box[1])],
        vec![(-e_max, e_max)],
    )
}

fn collect(cfg: &PipelineConfig, excitation: &crate::plant::ExcitationSpec, length: usize, noise: &AcquisitionNoise) -> Result<Acquisition> {
    let plant = build_plant(cfg)?;
    let mut exc = Excitation::new(excitation.clone(), plant.input_dim())?;
    let a = &cfg.acquisition;
    let mut acq = acquire_dataset(plant.as_ref(), &mut exc, a.ts, length, noise, a.regressor()?, a.scheduling()?)?;
    acq.dataset.metadata.extend_prefixed("config.", &cfg.provenance());
    Ok(acq)
}

/// Design data per the acquisition section.
pub fn acquire(cfg: &PipelineConfig) -> Result<Acquisition> {
    collect(cfg, &cfg.excitation, cfg.acquisition.length, &cfg.acquisition.noise())
}

/// Validation data: the validation excitation with the acquisition noise levels re-seeded.
pub fn acquire_validation(cfg: &PipelineConfig) -> Result<Option<Acquisition>> {
    let Some(v) = &cfg.validation else { return Ok(None) };
    let mut noise = cfg.acquisition.noise();
    noise.state.seed = v.noise_seed;
    noise.input.seed = v.noise_seed.wrapping_add(1);
    noise.process.seed = v.noise_seed.wrapping_add(2);
    collect(cfg, &v.excitation, v.length.unwrap_or(cfg.acquisition.length), &noise).map(Some)
}

/// Controllers for every input channel with their design reports.
#[derive(Debug, Clone)]
pub struct Design {
    pub controllers: Vec<Controller>,
    pub reports: Vec<DesignReport>,
}

impl Design {
    pub fn n_sel(&self) -> usize {
        self.reports.iter().map(|r| r.n_sel).sum()
    }

    pub fn report_kv(&self, cfg: &PipelineConfig) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("channels", self.reports.len()).push("n_sel", self.n_sel());
        for (j, r) in self.reports.iter().enumerate() {
            kv.extend_prefixed(&format!("u{}.", j + 1), &r.to_kv());
        }
        kv.extend_prefixed("config.", &cfg.provenance());
        kv
    }
}

/// Estimates the priors and solves one design program per input channel.
pub fn design(cfg: &PipelineConfig, dataset: &LpvDataset) -> Result<Design> {
    let basis = cfg.basis.build(dataset.n_p())?;
    let est = cfg.estimate.options()?;
    let opts = cfg.design.options();
    let mut controllers = Vec::with_capacity(dataset.n_u());
    let mut reports = Vec::with_capacity(dataset.n_u());
    for j in 0..dataset.n_u() {
        let channel = dataset.channel(j)?;
        let priors = estimate_priors(&channel, &basis, &est)?;
        let (k, report) = design_controller_with(&channel, &basis, &priors, &opts)?;
        controllers.push(k);
        reports.push(report);
    }
    Ok(Design { controllers, reports })
}

/// RMS of `u_t - K(p_t, x_{t+1}, x_t)` per input channel over a dataset.
pub fn input_fit_rms(controllers: &[Controller], dataset: &LpvDataset) -> Result<Vec<f64>> {
    crate::error::check_dim("controllers per input", dataset.n_u(), controllers.len())?;
    controllers
        .iter()
        .enumerate()
        .map(|(j, k)| {
            let r: Vec<f64> = (0..dataset.len())
                .map(|t| dataset.u.row(t)[j] - k.evaluate(dataset.p.row(t), dataset.x.row(t + 1), dataset.x.row(t)))
                .collect();
            rms(&r)
        })
        .collect()
}

/// Closed-loop run of `controllers` on the configured plant and reference.
pub fn simulate(cfg: &PipelineConfig, controllers: &[Controller]) -> Result<ClosedLoopRun> {
    let plant = build_plant(cfg)?;
    let a = &cfg.acquisition;
    let s = &cfg.simulate;
    let reference = generate_reference(&s.reference, a.ts, s.steps + 1)?;
    let setup = LoopSetup {
        plant: plant.as_ref(),
        controllers,
        regressor: a.regressor()?,
        scheduling: a.scheduling()?,
        ts: a.ts,
        measurement: s.measurement,
        disturbance: s.disturbance,
    };
    simulate_closed_loop(&setup, &reference)
}

/// Acquire, design and simulate with every random stream moved to `trial`.
pub fn run_trial(cfg: &PipelineConfig, trial: u64) -> Result<TrialMetrics> {
    let c = cfg.for_trial(trial);
    let acq = acquire(&c)?;
    let d = design(&c, &acq.dataset)?;
    let run = simulate(&c, &d.controllers)?;
    let fits: Vec<f64> = d.reports.iter().map(|r| r.fit_rms).collect();
    Ok(TrialMetrics {
        rms: run.rms,
        n_sel: d.n_sel(),
        fit_rms: fits.iter().sum::<f64>() / fits.len() as f64,
    })
}

pub fn run_monte_carlo(cfg: &PipelineConfig, trials: usize, base_seed: u64, threads: usize) -> Result<MonteCarloSummary> {
    let threads = if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    };
    monte_carlo(trials, base_seed, threads, |seed| run_trial(cfg, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LTI: &str = r#"
[plant]
kind = "scalar-lpv"
a0 = 0.5
b = 2.0

[excitation]
kind = "uniform"
amplitude = 0.4
seed = 5

[acquisition]
length = 60
ts = 1.0

[basis]
family = "polynomial"
degree = 0

[estimate]
delta = 1e-7
lambda_s = 1.0

[simulate]
steps = 50
reference = { kind = "filtered-uniform", amplitude = 0.5, cutoff = 1.0, companion = "none", seed = 2 }
"#;

    #[test]
    fn noiseless_lti_pipeline_recovers_inverse_and_tracks() {
        let cfg = PipelineConfig::from_toml_str(LTI).unwrap();
        let acq = acquire(&cfg).unwrap();
        let d = design(&cfg, &acq.dataset).unwrap();
        let k = &d.controllers[0];
        assert!((k.coefficient(0, 0, 0) - 0.5).abs() < 1e-3);
        assert!((k.coefficient(1, 0, 0) - 0.25).abs() < 1e-3);
        let run = simulate(&cfg, &d.controllers).unwrap();
        assert!(run.rms[0] < 1e-5);
        let fit = input_fit_rms(&d.controllers, &acq.dataset).unwrap();
        assert!(fit[0] <= 1e-7 + 1e-12);
        assert!(d.report_kv(&cfg).get("config.plant.kind").is_some());
    }

    #[test]
    fn single_trial_matches_direct_chain() {
        let cfg = PipelineConfig::from_toml_str(LTI).unwrap();
        let s = run_monte_carlo(&cfg, 1, 0, 1).unwrap();
        let m = run_trial(&cfg, 0).unwrap();
        assert_eq!(s.mean_rms, m.rms);
        assert_eq!(s.mean_n_sel, m.n_sel as f64);
        assert_eq!(run_trial(&cfg, 4).unwrap(), run_trial(&cfg, 4).unwrap());
    }

    #[test]
    fn zero_delta_override_is_infeasible_on_noisy_data() {
        let noisy = LTI.replace("ts = 1.0", "ts = 1.0\nstate_noise = { kind = \"uniform-amplitude\", level = 0.01, seed = 3 }")
            .replace("delta = 1e-7", "delta = 0.0");
        let cfg = PipelineConfig::from_toml_str(&noisy).unwrap();
        let acq = acquire(&cfg).unwrap();
        assert!(matches!(design(&cfg, &acq.dataset), Err(Error::Infeasible { .. })));
    }
}
