use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::{Error, Result};
use crate::kv::KvBlock;

/// Metrics of one successful trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    /// Closed-loop RMS per feedback channel.
    pub rms: Vec<f64>,
    /// Surviving coefficients, summed over input channels.
    pub n_sel: usize,
    /// RMS of the design-data fit residual, averaged over input channels.
    pub fit_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Ok(TrialMetrics),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub base_seed: u64,
    /// `(seed, outcome)` in trial order.
    pub trials: Vec<(u64, TrialOutcome)>,
    pub failures: usize,
    /// Means over successful trials; empty when every trial failed.
    pub mean_rms: Vec<f64>,
    pub mean_n_sel: f64,
    pub mean_fit_rms: f64,
}

impl MonteCarloSummary {
    fn from_trials(base_seed: u64, trials: Vec<(u64, TrialOutcome)>) -> Self {
        let ok: Vec<&TrialMetrics> = trials
            .iter()
            .filter_map(|(_, o)| match o {
                TrialOutcome::Ok(m) => Some(m),
                TrialOutcome::Failed(_) => None,
            })
            .collect();
        let failures = trials.len() - ok.len();
        let n = ok.len() as f64;
        let width = ok.first().map_or(0, |m| m.rms.len());
        let mean_rms = (0..width).map(|j| ok.iter().map(|m| m.rms[j]).sum::<f64>() / n).collect();
        let mean = |f: &dyn Fn(&TrialMetrics) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|m| f(m)).sum::<f64>() / n };
        MonteCarloSummary {
            base_seed,
            failures,
            mean_rms,
            mean_n_sel: mean(&|m| m.n_sel as f64),
            mean_fit_rms: mean(&|m| m.fit_rms),
            trials,
        }
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("trials", self.trials.len()).push("base_seed", self.base_seed).push("failures", self.failures);
        for (j, v) in self.mean_rms.iter().enumerate() {
            kv.push(format!("mean_rms_{}", j + 1), v);
        }
        kv.push("mean_n_sel", self.mean_n_sel).push("mean_fit_rms", self.mean_fit_rms);
        kv
    }

    /// One row per trial: `trial, seed, status, rms_1.., n_sel, fit_rms, message`.
    pub fn trials_csv(&self) -> Result<String> {
        let width = self.mean_rms.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["trial".to_string(), "seed".into(), "status".into()];
        header.extend((1..=width).map(|j| format!("rms_{j}")));
        header.extend(["n_sel".into(), "fit_rms".into(), "message".into()]);
        let csv_err = |e: csv::Error| Error::parse("trial csv", e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for (i, (seed, outcome)) in self.trials.iter().enumerate() {
            let mut rec = vec![i.to_string(), seed.to_string()];
            match outcome {
                TrialOutcome::Ok(m) => {
                    rec.push("ok".into());
                    rec.extend(m.rms.iter().map(f64::to_string));
                    rec.extend([m.n_sel.to_string(), m.fit_rms.to_string(), String::new()]);
                }
                TrialOutcome::Failed(msg) => {
                    rec.push("failed".into());
                    rec.extend(std::iter::repeat_n(String::new(), width + 2));
                    rec.push(msg.clone());
                }
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("trial csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Runs `trial(base_seed + i)` for `i < n_trials` on up to `threads` workers. Errors become
/// failed trials; the summary does not depend on scheduling order.
pub fn monte_carlo<F>(n_trials: usize, base_seed: u64, threads: usize, trial: F) -> Result<MonteCarloSummary>
where
    F: Fn(u64) -> Result<TrialMetrics> + Sync,
{
    if n_trials == 0 {
        return Err(Error::invalid("monte carlo needs at least one trial"));
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<TrialOutcome>>> = Mutex::new(vec![None; n_trials]);
    let workers = threads.clamp(1, n_trials);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_trials {
                    break;
                }
                let outcome = match trial(base_seed + i as u64) {
                    Ok(m) => TrialOutcome::Ok(m),
                    Err(e) => TrialOutcome::Failed(e.to_string()),
                };
                results.lock().expect("no worker panics while holding the lock")[i] = Some(outcome);
            });
        }
    });
    let trials = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .enumerate()
        .map(|(i, o)| (base_seed + i as u64, o.expect("every trial ran")))
        .collect();
    Ok(MonteCarloSummary::from_trials(base_seed, trials))
}
