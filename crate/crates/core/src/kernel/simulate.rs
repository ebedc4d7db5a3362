use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{conditional_moment, ConditionalKernel, History, HistoryNeeds, KernelError};
use crate::rng::ReplicateRng;

/// One realized path: increments, partial sums `X_0..X_n` and predictable
/// variance `<X>_0..<X>_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub increments: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub variance: Vec<f64>,
    /// Per-step conditional absolute moments, one column per requested order.
    pub moments: Vec<MomentColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentColumn {
    pub order: f64,
    pub values: Vec<f64>,
}

impl PathBundle {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn terminal(&self) -> f64 {
        *self.partial_sums.last().unwrap_or(&0.0)
    }

    pub fn terminal_variance(&self) -> f64 {
        *self.variance.last().unwrap_or(&0.0)
    }

    /// History available at the start of 1-based `step`.
    pub fn history_at(&self, step: usize) -> History<'_> {
        History {
            increments: &self.increments[..step - 1],
            sum: self.partial_sums[step - 1],
            variance: self.variance[step - 1],
        }
    }

    pub fn moment_column(&self, order: f64) -> Option<&[f64]> {
        self.moments
            .iter()
            .find(|c| c.order == order)
            .map(|c| c.values.as_slice())
    }

    /// Checks the structural invariants against the generating kernel; returns a
    /// description of the first violation.
    pub fn check_invariants<K: ConditionalKernel + ?Sized>(&self, kernel: &K) -> Result<(), String> {
        let n = self.steps();
        if self.partial_sums.len() != n + 1 || self.variance.len() != n + 1 {
            return Err("length mismatch".into());
        }
        if self.partial_sums[0] != 0.0 || self.variance[0] != 0.0 {
            return Err("path does not start at zero".into());
        }
        for k in 1..=n {
            if self.partial_sums[k] != self.partial_sums[k - 1] + self.increments[k - 1] {
                return Err(format!("X_{k} != X_{} + ξ_{k}", k - 1));
            }
            if self.variance[k] < self.variance[k - 1] {
                return Err(format!("<X> decreases at step {k}"));
            }
            let law = kernel.law(k, &self.history_at(k));
            if law.is_exact() {
                let inc = self.variance[k] - self.variance[k - 1];
                if (inc - law.second_moment()).abs() > 1e-12 {
                    return Err(format!(
                        "<X> increment {inc} at step {k} differs from conditional second moment {}",
                        law.second_moment()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn pow_2p(x: f64, p: f64) -> f64 {
    let e = 2.0 * p;
    if e == 2.0 {
        x * x
    } else if e.fract() == 0.0 && e <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

#[inline]
fn pow_p(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p.fract() == 0.0 && p <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Walks one path, calling `visit(step, history, value, second_moment)` before
/// each increment is appended. `increments` receives the path when the kernel
/// reads full histories or `keep` is set.
#[inline(always)]
fn walk<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    rng: &mut ReplicateRng,
    increments: &mut Vec<f64>,
    keep: bool,
    mut visit: impl FnMut(usize, &History<'_>, f64, f64) -> Result<(), KernelError>,
) -> Result<(f64, f64), KernelError> {
    let n = kernel.steps();
    let store = keep || kernel.history_needs() == HistoryNeeds::Full;
    increments.clear();
    let mut sum = 0.0;
    let mut variance = 0.0;
    for step in 1..=n {
        let history = History {
            increments: if store { increments.as_slice() } else { &[] },
            sum,
            variance,
        };
        let draw = kernel.draw(step, &history, rng)?;
        visit(step, &history, draw.value, draw.second_moment)?;
        if store {
            increments.push(draw.value);
        }
        sum += draw.value;
        variance += draw.second_moment;
    }
    Ok((sum, variance))
}

fn one_bundle<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    seed: u64,
    replicate: u64,
    orders: &[f64],
) -> Result<PathBundle, KernelError> {
    let n = kernel.steps();
    let mut rng = ReplicateRng::new(seed, replicate);
    let mut partial_sums = Vec::with_capacity(n + 1);
    let mut variance = Vec::with_capacity(n + 1);
    let mut moments: Vec<MomentColumn> = orders
        .iter()
        .map(|&order| MomentColumn {
            order,
            values: Vec::with_capacity(n),
        })
        .collect();
    partial_sums.push(0.0);
    variance.push(0.0);
    let mut increments = Vec::with_capacity(n);
    walk(kernel, &mut rng, &mut increments, true, |step, history, value, m2| {
        for col in moments.iter_mut() {
            col.values
                .push(conditional_moment(kernel, step, history, col.order)?.value);
        }
        partial_sums.push(history.sum + value);
        variance.push(history.variance + m2);
        Ok(())
    })?;
    Ok(PathBundle {
        increments,
        partial_sums,
        variance,
        moments,
    })
}

/// Simulates `count` independent paths. Replicate `j` draws from stream
/// `(seed, j)`, so the output does not depend on the worker pool.
pub fn sample_paths<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    seed: u64,
    count: usize,
) -> Result<Vec<PathBundle>, KernelError> {
    sample_paths_with_moments(kernel, seed, count, &[])
}

/// As [`sample_paths`], additionally caching conditional moments of the given orders.
pub fn sample_paths_with_moments<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    seed: u64,
    count: usize,
    orders: &[f64],
) -> Result<Vec<PathBundle>, KernelError> {
    if count == 0 {
        return Err(KernelError::NoReplicates);
    }
    if let Some(&bad) = orders.iter().find(|&&t| !(t >= 1.0)) {
        return Err(KernelError::OrderBelowOne(bad));
    }
    (0..count)
        .into_par_iter()
        .with_min_len(64)
        .map(|j| one_bundle(kernel, seed, j as u64, orders))
        .collect()
}

/// Per-replicate summary kept by the streaming simulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalRecord {
    /// `X_n`
    pub terminal: f64,
    /// `<X>_n`
    pub variance: f64,
    /// `max_i |ξ_i|`
    pub max_abs_increment: f64,
    /// `Σ_i |ξ_i|^{2p}` for the `p` the record was simulated with.
    pub sum_abs_pow: f64,
}

impl TerminalRecord {
    pub fn from_bundle(bundle: &PathBundle, p: f64) -> Self {
        Self {
            terminal: bundle.terminal(),
            variance: bundle.terminal_variance(),
            max_abs_increment: bundle.increments.iter().fold(0.0, |m, x| m.max(x.abs())),
            sum_abs_pow: bundle.increments.iter().map(|x| pow_2p(x.abs(), p)).sum(),
        }
    }
}

/// Simulates `count` replicates keeping only terminal summaries. Draws are
/// identical to [`sample_paths`] with the same `(kernel, seed)`.
pub fn simulate_terminal<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    seed: u64,
    count: usize,
    p: f64,
) -> Result<Vec<TerminalRecord>, KernelError> {
    if count == 0 {
        return Err(KernelError::NoReplicates);
    }
    if p == 1.0 {
        terminal_records(kernel, seed, count, |a| a * a)
    } else if p == 2.0 {
        terminal_records(kernel, seed, count, |a| (a * a) * (a * a))
    } else {
        terminal_records(kernel, seed, count, move |a| pow_2p(a, p))
    }
}

fn terminal_records<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    seed: u64,
    count: usize,
    pow: impl Fn(f64) -> f64 + Sync,
) -> Result<Vec<TerminalRecord>, KernelError> {
    (0..count)
        .into_par_iter()
        .with_min_len(256)
        .map_init(Vec::new, |buf, j| {
            let mut rng = ReplicateRng::new(seed, j as u64);
            let mut max_abs: f64 = 0.0;
            let mut sum_pow = 0.0;
            let (terminal, variance) = walk(kernel, &mut rng, buf, false, |_, _, value, _| {
                let a = value.abs();
                max_abs = max_abs.max(a);
                sum_pow += pow(a);
                Ok(())
            })?;
            Ok(TerminalRecord {
                terminal,
                variance,
                max_abs_increment: max_abs,
                sum_abs_pow: sum_pow,
            })
        })
        .collect()
}

/// Sample means feeding the `<X>_n` and `max|ξ|` terms of the rate functionals.
/// Sums are kept so disjoint collections merge to the pooled value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalStatistics {
    pub p: f64,
    pub count: usize,
    /// `X_n` per replicate, in replicate order.
    pub terminal_samples: Vec<f64>,
    sum_var_dev_pow: f64,
    sum_var_dev_pow_sq: f64,
    sum_var_dev_abs: f64,
    max_var_dev_abs: f64,
    sum_max_pow: f64,
    sum_sum_pow: f64,
}

impl TerminalStatistics {
    pub fn from_records(records: &[TerminalRecord], p: f64) -> Result<Self, KernelError> {
        if records.is_empty() {
            return Err(KernelError::EmptyCollection);
        }
        let mut s = Self {
            p,
            count: records.len(),
            terminal_samples: Vec::with_capacity(records.len()),
            sum_var_dev_pow: 0.0,
            sum_var_dev_pow_sq: 0.0,
            sum_var_dev_abs: 0.0,
            max_var_dev_abs: 0.0,
            sum_max_pow: 0.0,
            sum_sum_pow: 0.0,
        };
        for r in records {
            let dev = (r.variance - 1.0).abs();
            let dev_p = pow_p(dev, p);
            s.terminal_samples.push(r.terminal);
            s.sum_var_dev_pow += dev_p;
            s.sum_var_dev_pow_sq += dev_p * dev_p;
            s.sum_var_dev_abs += dev;
            s.max_var_dev_abs = s.max_var_dev_abs.max(dev);
            s.sum_max_pow += pow_2p(r.max_abs_increment, p);
            s.sum_sum_pow += r.sum_abs_pow;
        }
        Ok(s)
    }

    /// Pools two disjoint collections.
    pub fn merge(mut self, other: &TerminalStatistics) -> Result<Self, KernelError> {
        if self.p != other.p {
            return Err(KernelError::MismatchedPower {
                left: self.p,
                right: other.p,
            });
        }
        self.count += other.count;
        self.terminal_samples.extend_from_slice(&other.terminal_samples);
        self.sum_var_dev_pow += other.sum_var_dev_pow;
        self.sum_var_dev_pow_sq += other.sum_var_dev_pow_sq;
        self.sum_var_dev_abs += other.sum_var_dev_abs;
        self.max_var_dev_abs = self.max_var_dev_abs.max(other.max_var_dev_abs);
        self.sum_max_pow += other.sum_max_pow;
        self.sum_sum_pow += other.sum_sum_pow;
        Ok(self)
    }

    /// Estimate of `E|<X>_n - 1|^p`.
    pub fn var_deviation_moment(&self) -> f64 {
        self.sum_var_dev_pow / self.count as f64
    }

    /// Standard error of [`Self::var_deviation_moment`].
    pub fn var_deviation_std_error(&self) -> f64 {
        let m = self.count as f64;
        if self.count < 2 {
            return f64::INFINITY;
        }
        let mean = self.sum_var_dev_pow / m;
        let var = ((self.sum_var_dev_pow_sq / m) - mean * mean).max(0.0) * m / (m - 1.0);
        (var / m).sqrt()
    }

    /// Estimate of `‖<X>_n - 1‖_1`.
    pub fn var_deviation_l1(&self) -> f64 {
        self.sum_var_dev_abs / self.count as f64
    }

    /// Largest observed `|<X>_n - 1|` (a lower estimate of the sup norm).
    pub fn var_deviation_max(&self) -> f64 {
        self.max_var_dev_abs
    }

    /// Estimate of `E[max_i |ξ_i|^{2p}]`.
    pub fn max_increment_moment(&self) -> f64 {
        self.sum_max_pow / self.count as f64
    }

    /// Estimate of `Σ_i E|ξ_i|^{2p}`.
    pub fn summed_increment_moment(&self) -> f64 {
        self.sum_sum_pow / self.count as f64
    }
}

/// Empirical inputs of the relaxed-normalization rate functionals.
pub fn terminal_statistics(bundles: &[PathBundle], p: f64) -> Result<TerminalStatistics, KernelError> {
    let records: Vec<TerminalRecord> = bundles
        .iter()
        .map(|b| TerminalRecord::from_bundle(b, p))
        .collect();
    TerminalStatistics::from_records(&records, p)
}
