use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Pairwise nondecrease flags of a return series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub flags: Vec<bool>,
    /// Share of `true` flags; 1 when the series has a single point.
    pub fraction: f64,
}

/// ```
/// let m = seqcomm::analysis::monotonicity_report(&[1.0, 2.0, 2.0, 1.0, 3.0]).unwrap();
/// assert_eq!(m.flags, vec![true, true, false, true]);
/// assert_eq!(m.fraction, 0.75);
/// ```
pub fn monotonicity_report(series: &[f64]) -> Result<Monotonicity> {
    ensure!(!series.is_empty(), "monotonicity needs a nonempty series");
    let flags: Vec<bool> = series.windows(2).map(|w| w[1] >= w[0]).collect();
    let fraction = if flags.is_empty() {
        1.0
    } else {
        flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
    };
    Ok(Monotonicity { flags, fraction })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Final-performance statistics of one mode across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub finals: Vec<f64>,
    /// Mean monotone fraction over runs, after the skipped prefix.
    pub monotone_fraction: f64,
}

/// One point of a mode's learning curve across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: String,
    pub eval_index: usize,
    pub env_steps: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Run {
    seed: u64,
    steps: Vec<u64>,
    returns: Vec<f64>,
}

/// Evaluation-return series per mode and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    modes: BTreeMap<String, Vec<Run>>,
    order: Vec<String>,
}

impl TrainingReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one run. `steps[i]` is the env-step count of `returns[i]`.
    pub fn add_run(&mut self, mode: &str, seed: u64, steps: Vec<u64>, returns: Vec<f64>) -> Result<()> {
        ensure!(steps.len() == returns.len(), "{} step counts for {} returns", steps.len(), returns.len());
        ensure!(!returns.is_empty(), "run of `{mode}` seed {seed} has no evaluations");
        if !self.modes.contains_key(mode) {
            self.order.push(mode.to_string());
        }
        self.modes.entry(mode.to_string()).or_default().push(Run { seed, steps, returns });
        Ok(())
    }

    /// Modes in insertion order.
    pub fn modes(&self) -> &[String] {
        &self.order
    }

    pub fn series(&self, mode: &str) -> Vec<&[f64]> {
        self.modes
            .get(mode)
            .map(|runs| runs.iter().map(|r| r.returns.as_slice()).collect())
            .unwrap_or_default()
    }

    /// Per-mode statistics. A run's final performance is the mean of its
    /// last `tail` evaluations; monotonicity skips the first
    /// `skip_fraction` of each series.
    pub fn summaries(&self, tail: usize, skip_fraction: f64) -> Result<Vec<ModeSummary>> {
        self.order
            .iter()
            .map(|mode| {
                let runs = &self.modes[mode];
                let finals: Vec<f64> = runs
                    .iter()
                    .map(|r| {
                        let k = tail.clamp(1, r.returns.len());
                        r.returns[r.returns.len() - k..].iter().sum::<f64>() / k as f64
                    })
                    .collect();
                let mono = runs
                    .iter()
                    .map(|r| {
                        let skip = ((r.returns.len() as f64) * skip_fraction).floor() as usize;
                        let skip = skip.min(r.returns.len() - 1);
                        monotonicity_report(&r.returns[skip..]).map(|m| m.fraction)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (mean, std) = mean_std(&finals);
                Ok(ModeSummary {
                    mode: mode.clone(),
                    runs: runs.len(),
                    mean,
                    std,
                    finals,
                    monotone_fraction: mono.iter().sum::<f64>() / mono.len() as f64,
                })
            })
            .collect()
    }

    /// Mean and standard deviation across seeds at each evaluation index
    /// every run of the mode reached.
    pub fn curves(&self) -> Vec<CurvePoint> {
        let mut out = Vec::new();
        for mode in &self.order {
            let runs = &self.modes[mode];
            let len = runs.iter().map(|r| r.returns.len()).min().unwrap_or(0);
            for i in 0..len {
                let vals: Vec<f64> = runs.iter().map(|r| r.returns[i]).collect();
                let (mean, std) = mean_std(&vals);
                out.push(CurvePoint {
                    mode: mode.clone(),
                    eval_index: i,
                    env_steps: runs[0].steps[i],
                    mean,
                    std,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonicity_examples() {
        assert_eq!(monotonicity_report(&[2.0; 5]).unwrap().fraction, 1.0);
        assert_eq!(monotonicity_report(&[4.0, 3.0, 2.0, 1.0]).unwrap().fraction, 0.0);
        assert_eq!(monotonicity_report(&[7.0]).unwrap().fraction, 1.0);
        assert!(monotonicity_report(&[]).is_err());
    }

    #[test]
    fn summaries_and_curves() {
        let mut r = TrainingReport::new();
        r.add_run("a", 0, vec![10, 20, 30], vec![1.0, 2.0, 3.0]).unwrap();
        r.add_run("a", 1, vec![10, 20, 30], vec![1.0, 0.0, 5.0]).unwrap();
        r.add_run("b", 0, vec![10], vec![4.0]).unwrap();
        let s = r.summaries(1, 0.0).unwrap();
        assert_eq!(s[0].mode, "a");
        assert_eq!(s[0].finals, vec![3.0, 5.0]);
        assert_eq!(s[0].mean, 4.0);
        assert!((s[0].std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[0].monotone_fraction, 0.75);
        assert_eq!(s[1].std, 0.0);
        let c = r.curves();
        assert_eq!(c.len(), 4);
        assert_eq!(c[1].mean, 1.0);
        assert!(r.add_run("a", 2, vec![1], vec![]).is_err());
    }
}
