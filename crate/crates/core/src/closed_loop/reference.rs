use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::Rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// A fresh uniform level every sample.
    FilteredUniform,
    /// A fresh uniform level every `dwell` samples.
    FilteredSteps,
}

/// Extra channels appended after the position channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Companion {
    None,
    /// Backward difference of each position channel over `ts`.
    Derivative,
    /// Each position channel delayed by one sample.
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    /// Raw levels are uniform on `[-amplitude, amplitude]`.
    pub amplitude: f64,
    /// Filter cutoff in rad/s.
    pub cutoff: f64,
    #[serde(default = "default_positions")]
    pub positions: usize,
    #[serde(default = "default_companion")]
    pub companion: Companion,
    /// Samples per level for the step kind.
    #[serde(default = "default_dwell")]
    pub dwell: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_positions() -> usize {
    1
}

fn default_companion() -> Companion {
    Companion::Derivative
}

fn default_dwell() -> usize {
    1
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid("reference amplitude must be finite and >= 0"));
        }
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::invalid("reference cutoff must be positive"));
        }
        if self.positions == 0 || self.dwell == 0 {
            return Err(Error::invalid("reference needs at least one channel and a nonzero dwell"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        match self.companion {
            Companion::None => self.positions,
            _ => 2 * self.positions,
        }
    }
}

/// Unity-gain critically damped low-pass `w^2 / (s + w)^2`, bilinear-discretized at `ts`.
#[derive(Debug, Clone)]
pub struct SecondOrderFilter {
    gain: f64,
    pole: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl SecondOrderFilter {
    pub fn new(cutoff: f64, ts: f64) -> Self {
        let k = 2.0 / ts;
        let pole = (k - cutoff) / (k + cutoff);
        let g = cutoff / (k + cutoff);
        SecondOrderFilter { gain: g * g, pole, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * (x + 2.0 * self.x1 + self.x2) + 2.0 * self.pole * self.y1 - self.pole * self.pole * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// `len` reference rows sampled at `ts`, starting from rest.
pub fn generate_reference(spec: &ReferenceSpec, ts: f64, len: usize) -> Result<Rows> {
    spec.validate()?;
    if !(ts > 0.0) || len == 0 {
        return Err(Error::invalid("reference needs ts > 0 and at least one sample"));
    }
    let n = spec.positions;
    let dwell = match spec.kind {
        ReferenceKind::FilteredUniform => 1,
        ReferenceKind::FilteredSteps => spec.dwell,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut filters: Vec<SecondOrderFilter> = (0..n).map(|_| SecondOrderFilter::new(spec.cutoff, ts)).collect();
    let mut level = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut out = Rows::with_width(spec.width());
    let mut row = vec![0.0; spec.width()];
    for k in 0..len {
        if k % dwell == 0 {
            for v in &mut level {
                *v = if spec.amplitude > 0.0 { rng.random_range(-spec.amplitude..=spec.amplitude) } else { 0.0 };
            }
        }
        for j in 0..n {
            let y = filters[j].step(level[j]);
            row[j] = y;
            match spec.companion {
                Companion::None => {}
                Companion::Derivative => row[n + j] = if k == 0 { 0.0 } else { (y - prev[j]) / ts },
                Companion::Delayed => row[n + j] = prev[j],
            }
            prev[j] = y;
        }
        out.push(&row);
    }
    Ok(out)
}
