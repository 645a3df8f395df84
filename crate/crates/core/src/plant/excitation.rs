use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input law used while collecting design or validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExcitationSpec {
    /// `amplitude * sin(omega * t)` on every input channel.
    Sine { amplitude: f64, omega: f64 },
    /// A sine plus white Gaussian noise with std `noise_std`, drawn once per sample.
    NoisySine {
        amplitude: f64,
        omega: f64,
        noise_std: f64,
        seed: u64,
    },
    /// Independent uniform draws on `[-amplitude, amplitude]`, one per sample and channel.
    Uniform { amplitude: f64, seed: u64 },
    /// Two-tone law with position saturation feedback and quiet windows for the two-link arm.
    TwoLink(TwoLinkExcitation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLinkExcitation {
    pub amplitude: f64,
    /// Two frequencies (rad/s) per joint.
    pub omegas: [[f64; 2]; 2],
    /// Position magnitude (rad) above which the saturation feedback takes over.
    pub threshold: f64,
    pub feedback_gain: f64,
    /// Sample indices `l`; the input is zero for `l < k <= l + quiet_len`.
    pub quiet_starts: Vec<usize>,
    pub quiet_len: usize,
}

impl Default for TwoLinkExcitation {
    fn default() -> Self {
        TwoLinkExcitation {
            amplitude: 100.0,
            omegas: [[0.07, 0.8], [0.08, 0.9]],
            threshold: 1.75,
            feedback_gain: -20.0,
            quiet_starts: vec![500, 1500, 2500, 3500],
            quiet_len: 500,
        }
    }
}

/// Evaluates the two-link excitation at sample `k`, time `tau` and true state `z`.
pub fn excitation_signal(spec: &TwoLinkExcitation, k: usize, tau: f64, z: &[f64]) -> [f64; 2] {
    let quiet = spec.quiet_starts.iter().any(|&l| l < k && k <= l + spec.quiet_len);
    let mut u = [0.0; 2];
    for (j, uj) in u.iter_mut().enumerate() {
        *uj = if z[j].abs() >= spec.threshold {
            spec.feedback_gain * z[j]
        } else if quiet {
            0.0
        } else {
            spec.amplitude * ((spec.omegas[j][0] * tau).sin() + (spec.omegas[j][1] * tau).sin())
        };
    }
    u
}

/// A realized excitation with its own random stream. Call `input` once per sample, in order.
#[derive(Debug, Clone)]
pub struct Excitation {
    spec: ExcitationSpec,
    n_u: usize,
    rng: ChaCha8Rng,
}

impl Excitation {
    pub fn new(spec: ExcitationSpec, n_u: usize) -> Result<Self> {
        let seed = match &spec {
            ExcitationSpec::NoisySine { seed, .. } | ExcitationSpec::Uniform { seed, .. } => *seed,
            _ => 0,
        };
        if let ExcitationSpec::TwoLink(_) = spec {
            if n_u != 2 {
                return Err(Error::invalid("two-link excitation needs a two-input plant"));
            }
        }
        Ok(Excitation {
            spec,
            n_u,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &ExcitationSpec {
        &self.spec
    }

    pub fn input(&mut self, k: usize, tau: f64, z: &[f64]) -> Vec<f64> {
        match &self.spec {
            ExcitationSpec::Sine { amplitude, omega } => vec![amplitude * (omega * tau).sin(); self.n_u],
            ExcitationSpec::NoisySine {
                amplitude,
                omega,
                noise_std,
                ..
            } => (0..self.n_u)
                .map(|_| amplitude * (omega * tau).sin() + noise_std * self.rng.sample::<f64, _>(StandardNormal))
                .collect(),
            ExcitationSpec::Uniform { amplitude, .. } => (0..self.n_u)
                .map(|_| amplitude * (2.0 * self.rng.random::<f64>() - 1.0))
                .collect(),
            ExcitationSpec::TwoLink(spec) => excitation_signal(spec, k, tau, z).to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_feedback_above_threshold() {
        let spec = TwoLinkExcitation::default();
        let u = excitation_signal(&spec, 10, 3.0, &[2.0, -1.8, 0.0, 0.0]);
        assert_eq!(u, [-40.0, 36.0]);
    }

    #[test]
    fn quiet_window_is_zero() {
        let spec = TwoLinkExcitation::default();
        let u = excitation_signal(&spec, 600, 12.0, &[0.5, -0.3, 0.0, 0.0]);
        assert_eq!(u, [0.0, 0.0]);
        // Window bounds are l < k <= l + 500.
        assert_ne!(excitation_signal(&spec, 500, 10.0, &[0.0; 4]), [0.0, 0.0]);
        assert_eq!(excitation_signal(&spec, 1000, 20.0, &[0.0; 4]), [0.0, 0.0]);
        assert_ne!(excitation_signal(&spec, 1001, 20.02, &[0.0; 4]), [0.0, 0.0]);
    }

    #[test]
    fn sinusoids_vanish_at_origin() {
        let spec = TwoLinkExcitation::default();
        assert_eq!(excitation_signal(&spec, 0, 0.0, &[0.1, 0.1, 0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn two_tone_values() {
        let spec = TwoLinkExcitation::default();
        let tau = 4.0;
        let u = excitation_signal(&spec, 200, tau, &[0.0; 4]);
        assert_eq!(u[0], 100.0 * ((0.07 * tau).sin() + (0.8 * tau).sin()));
        assert_eq!(u[1], 100.0 * ((0.08 * tau).sin() + (0.9 * tau).sin()));
    }

    #[test]
    fn seeded_excitations_repeat() {
        let spec = ExcitationSpec::NoisySine { amplitude: 0.3, omega: 0.5, noise_std: 0.3, seed: 4 };
        let mut a = Excitation::new(spec.clone(), 1).unwrap();
        let mut b = Excitation::new(spec, 1).unwrap();
        for k in 0..20 {
            assert_eq!(a.input(k, k as f64 * 0.1, &[0.0]), b.input(k, k as f64 * 0.1, &[0.0]));
        }
    }

    #[test]
    fn two_link_needs_two_inputs() {
        assert!(Excitation::new(ExcitationSpec::TwoLink(TwoLinkExcitation::default()), 1).is_err());
    }
}
