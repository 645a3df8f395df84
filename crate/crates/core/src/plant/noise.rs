use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Rows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Zero-mean Gaussian whose std is `level` times the channel std of the clean signal.
    GaussianRatio,
    /// Uniform on `[-level, level]`.
    UniformAmplitude,
    None,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::GaussianRatio => "gaussian-ratio",
            NoiseKind::UniformAmplitude => "uniform-amplitude",
            NoiseKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian-ratio" => Ok(NoiseKind::GaussianRatio),
            "uniform-amplitude" => Ok(NoiseKind::UniformAmplitude),
            "none" => Ok(NoiseKind::None),
            other => Err(Error::parse("noise kind", format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        kind: NoiseKind::None,
        level: 0.0,
        seed: 0,
    };

    pub fn gaussian_ratio(level: f64, seed: u64) -> Self {
        NoiseSpec { kind: NoiseKind::GaussianRatio, level, seed }
    }

    pub fn uniform(level: f64, seed: u64) -> Self {
        NoiseSpec { kind: NoiseKind::UniformAmplitude, level, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0) || !self.level.is_finite() {
            return Err(Error::invalid(format!("noise level must be finite and >= 0, got {}", self.level)));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None || self.level == 0.0
    }

    /// Stream whose per-channel scale is taken from `reference_std` for the ratio kind.
    pub fn stream(&self, reference_std: &[f64]) -> NoiseStream {
        let scale = match self.kind {
            NoiseKind::GaussianRatio => reference_std.iter().map(|s| s * self.level).collect(),
            NoiseKind::UniformAmplitude => vec![self.level; reference_std.len()],
            NoiseKind::None => vec![0.0; reference_std.len()],
        };
        NoiseStream {
            kind: self.kind,
            scale,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }

    /// One noise row per row of `clean`, drawn sample by sample, channel by channel.
    pub fn realize(&self, clean: &Rows) -> Rows {
        let mut stream = self.stream(&clean.column_std());
        let mut out = Rows::with_width(clean.width());
        for _ in 0..clean.len() {
            out.push(&stream.next_sample());
        }
        out
    }
}

/// Seeded per-channel noise source.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    kind: NoiseKind,
    scale: Vec<f64>,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn next_sample(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scale.len());
        for &s in &self.scale {
            let v = match self.kind {
                NoiseKind::GaussianRatio => s * self.rng.sample::<f64, _>(StandardNormal),
                NoiseKind::UniformAmplitude => s * (2.0 * self.rng.random::<f64>() - 1.0),
                NoiseKind::None => 0.0,
            };
            out.push(v);
        }
        out
    }
}
