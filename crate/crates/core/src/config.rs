//! Declarative experiment configuration (TOML).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{gaussian_basis, polynomial_basis, BasisSet};
use crate::closed_loop::ReferenceSpec;
use crate::error::{Error, Result};
use crate::estimate::{DeltaRule, EstimateOptions};
use crate::kv::KvBlock;
use crate::lp::SolverOptions;
use crate::design::DesignOptions;
use crate::plant::{AcquisitionNoise, ExcitationSpec, NoiseSpec, Regressor, SchedulingMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub plant: PlantConfig,
    pub excitation: ExcitationSpec,
    pub acquisition: AcquisitionConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default)]
    pub design: DesignConfig,
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantConfig {
    Duffing {
        alpha1: f64,
        alpha2: f64,
        beta: f64,
    },
    TwoLink {
        #[serde(default = "two_link_default_l1")]
        l1: f64,
        #[serde(default = "two_link_default_l2")]
        l2: f64,
        #[serde(default = "two_link_default_m1")]
        m1: f64,
        #[serde(default = "two_link_default_m2")]
        m2: f64,
        #[serde(default = "two_link_default_g")]
        g: f64,
        #[serde(default)]
        friction: f64,
    },
    /// Discrete `x+ = (a0 + a1 x) x + b u + e`, scheduled on `x`.
    ScalarLpv {
        a0: f64,
        #[serde(default)]
        a1: f64,
        b: f64,
        #[serde(default = "unit_box")]
        state_box: [f64; 2],
    },
}

fn two_link_default_l1() -> f64 {
    0.8
}
fn two_link_default_l2() -> f64 {
    0.7
}
fn two_link_default_m1() -> f64 {
    2.5
}
fn two_link_default_m2() -> f64 {
    2.0
}
fn two_link_default_g() -> f64 {
    9.81
}
fn unit_box() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub length: usize,
    pub ts: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "no_noise")]
    pub state_noise: NoiseSpec,
    #[serde(default = "no_noise")]
    pub input_noise: NoiseSpec,
    #[serde(default = "no_noise")]
    pub process_noise: NoiseSpec,
    /// `state` or `delayed-output:<index>`.
    #[serde(default = "default_regressor")]
    pub regressor: String,
    /// `identity`, `first-squared` or `select:<i>,<j>,...`.
    #[serde(default = "default_scheduling")]
    pub scheduling: String,
}

fn default_substeps() -> usize {
    10
}
fn no_noise() -> NoiseSpec {
    NoiseSpec::NONE
}
fn default_regressor() -> String {
    "state".into()
}
fn default_scheduling() -> String {
    "identity".into()
}

impl AcquisitionConfig {
    pub fn regressor(&self) -> Result<Regressor> {
        Regressor::parse(&self.regressor)
    }

    pub fn scheduling(&self) -> Result<SchedulingMap> {
        SchedulingMap::parse(&self.scheduling)
    }

    pub fn noise(&self) -> AcquisitionNoise {
        AcquisitionNoise {
            state: self.state_noise,
            input: self.input_noise,
            process: self.process_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisConfig {
    Polynomial { degree: u32 },
    Gaussian { per_dim: usize, width: f64, bounds: Vec<[f64; 2]> },
}

impl BasisConfig {
    pub fn build(&self, n_p: usize) -> Result<BasisSet> {
        match self {
            BasisConfig::Polynomial { degree } => polynomial_basis(n_p, *degree),
            BasisConfig::Gaussian { per_dim, width, bounds } => {
                if bounds.len() != n_p {
                    return Err(Error::invalid(format!("gaussian basis needs {n_p} bounds, got {}", bounds.len())));
                }
                let b: Vec<(f64, f64)> = bounds.iter().map(|&[lo, hi]| (lo, hi)).collect();
                gaussian_basis(&b, *per_dim, *width)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaRuleName {
    Validation,
    FitFloor,
    Larger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_points: usize,
    pub delta_inflation: f64,
    pub delta_rule: DeltaRuleName,
    pub floor_inflation: f64,
    /// Fixed noise bound; overrides the rule.
    pub delta: Option<f64>,
    /// Fixed reference-to-state gain; overrides the windowed estimate.
    pub lambda_s: Option<f64>,
    pub lambda_window: usize,
    pub lambda_inflation: f64,
    pub lambda_b_radius: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let o = EstimateOptions::default();
        EstimateConfig {
            gamma_min: 1e-3,
            gamma_max: 1e3,
            gamma_points: 61,
            delta_inflation: o.delta_inflation,
            delta_rule: DeltaRuleName::Validation,
            floor_inflation: 1.2,
            delta: None,
            lambda_s: None,
            lambda_window: o.lambda_window,
            lambda_inflation: o.lambda_inflation,
            lambda_b_radius: o.lambda_b_radius,
        }
    }
}

impl EstimateConfig {
    pub fn options(&self) -> Result<EstimateOptions> {
        if !(self.gamma_min > 0.0 && self.gamma_max > self.gamma_min) || self.gamma_points < 2 {
            return Err(Error::invalid("gamma grid needs 0 < gamma_min < gamma_max and at least 2 points"));
        }
        let ratio = (self.gamma_max / self.gamma_min).ln() / (self.gamma_points - 1) as f64;
        let gamma_grid = (0..self.gamma_points).map(|i| self.gamma_min * (ratio * i as f64).exp()).collect();
        let delta_rule = match (self.delta, self.delta_rule) {
            (Some(d), _) => DeltaRule::Fixed(d),
            (None, DeltaRuleName::Validation) => DeltaRule::Validation,
            (None, DeltaRuleName::FitFloor) => DeltaRule::FitFloor { inflation: self.floor_inflation },
            (None, DeltaRuleName::Larger) => DeltaRule::Larger { floor_inflation: self.floor_inflation },
        };
        Ok(EstimateOptions {
            gamma_grid,
            delta_inflation: self.delta_inflation,
            delta_rule,
            lambda_window: self.lambda_window,
            lambda_inflation: self.lambda_inflation,
            lambda_b_radius: self.lambda_b_radius,
            lambda_s_override: self.lambda_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub safety_margin: f64,
    /// Fixed neighbour-constraint Lipschitz budget; overrides `safety_margin / lambda_s`.
    pub lambda2_s: Option<f64>,
    /// Encode the pairwise neighbour rows. They are implied by the fit band, so turning them
    /// off leaves the solution set unchanged and saves one row pair per neighbour pair.
    pub neighbor_rows: bool,
    pub sparsity_threshold: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        let o = DesignOptions::default();
        DesignConfig {
            safety_margin: o.safety_margin,
            lambda2_s: None,
            neighbor_rows: o.neighbor_rows,
            sparsity_threshold: o.sparsity_threshold,
            tolerance: o.solver.tolerance,
            max_iters: o.solver.max_iters,
        }
    }
}

impl DesignConfig {
    pub fn options(&self) -> DesignOptions {
        DesignOptions {
            safety_margin: self.safety_margin,
            lambda2_s_override: self.lambda2_s,
            neighbor_rows: self.neighbor_rows,
            sparsity_threshold: self.sparsity_threshold,
            solver: SolverOptions {
                tolerance: self.tolerance,
                max_iters: self.max_iters,
                ..SolverOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Closed-loop steps `T`.
    pub steps: usize,
    pub reference: ReferenceSpec,
    #[serde(default = "no_noise")]
    pub measurement: NoiseSpec,
    #[serde(default = "no_noise")]
    pub disturbance: NoiseSpec,
}

/// A second data set for the open-loop generalization check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub excitation: ExcitationSpec,
    /// Defaults to the acquisition length.
    #[serde(default)]
    pub length: Option<usize>,
    /// Seed of the state-noise realization; the level and kind follow the acquisition.
    #[serde(default)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { trials: 1, seed: 0, threads: 0 }
    }
}

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Shifted seeds stay below 2^63 so a per-trial config still serializes (TOML integers are i64).
fn shift(seed: &mut u64, trial: u64) {
    *seed = seed.wrapping_add(trial.wrapping_mul(SEED_STRIDE)) & (u64::MAX >> 1);
}

fn shift_excitation(e: &mut ExcitationSpec, trial: u64) {
    match e {
        ExcitationSpec::NoisySine { seed, .. } | ExcitationSpec::Uniform { seed, .. } => shift(seed, trial),
        ExcitationSpec::Sine { .. } | ExcitationSpec::TwoLink(_) => {}
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(format!("config {}", path.display()), message),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.acquisition;
        if a.length < 2 {
            return Err(Error::invalid(format!("acquisition.length must be >= 2, got {}", a.length)));
        }
        if !(a.ts > 0.0) || a.substeps == 0 {
            return Err(Error::invalid("acquisition.ts must be positive and substeps nonzero"));
        }
        for n in [&a.state_noise, &a.input_noise, &a.process_noise, &self.simulate.measurement, &self.simulate.disturbance] {
            n.validate()?;
        }
        a.regressor()?;
        a.scheduling()?;
        self.estimate.options()?;
        let d = &self.design;
        if !(d.safety_margin > 0.0 && d.safety_margin < 1.0) {
            return Err(Error::invalid("design.safety_margin must lie in (0, 1)"));
        }
        if self.simulate.steps == 0 {
            return Err(Error::invalid("simulate.steps must be at least 1"));
        }
        self.simulate.reference.validate()?;
        if self.montecarlo.trials == 0 {
            return Err(Error::invalid("montecarlo.trials must be at least 1"));
        }
        Ok(())
    }

    /// The same experiment with every random stream moved to trial `trial`. Trial 0 is the
    /// configuration as written.
    pub fn for_trial(&self, trial: u64) -> Self {
        let mut c = self.clone();
        shift_excitation(&mut c.excitation, trial);
        for s in [
            &mut c.acquisition.state_noise.seed,
            &mut c.acquisition.input_noise.seed,
            &mut c.acquisition.process_noise.seed,
            &mut c.simulate.reference.seed,
            &mut c.simulate.measurement.seed,
            &mut c.simulate.disturbance.seed,
        ] {
            shift(s, trial);
        }
        if let Some(v) = &mut c.validation {
            shift_excitation(&mut v.excitation, trial);
            shift(&mut v.noise_seed, trial);
        }
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every leaf as `section.key = value`, for embedding in reports.
    pub fn provenance(&self) -> KvBlock {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut kv = KvBlock::new();
        flatten("", &value, &mut kv);
        kv
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut KvBlock) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        toml::Value::String(s) => {
            out.push(prefix, s);
        }
        other => {
            out.push(prefix, other.to_string().replace('\n', " "));
        }
    }
}
