//! Rademacher padding to unit conditional variance, and the `v(n)` stopping
//! rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::DEVIATION_SNAP;
use crate::kernel::{conditional_moment, ConditionalKernel, KernelError, PathBundle};
use crate::rng::ReplicateRng;

/// `<X>_k` within this distance of 1 counts as equal to 1.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("epsilon = {0} lies outside (0, 1/2]")]
    EpsilonOutOfRange(f64),
    #[error("conditional variance decreases at index {index}: {from} -> {to}")]
    DecreasingVariance { index: usize, from: f64, to: f64 },
    #[error("empty variance path")]
    EmptyPath,
    #[error("padding invariant violated: {0}")]
    Invariant(String),
    #[error("rho must be positive, got {0}")]
    InvalidRho(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaddedPath {
    pub original: PathBundle,
    pub epsilon: f64,
    pub tau: usize,
    pub r: usize,
    pub residual: f64,
    /// `n + ⌊1/ε²⌋ + 1`
    pub total_steps: usize,
    /// `ξ'_1..ξ'_N`
    pub increments: Vec<f64>,
    /// `E[ξ'_i² | F'_{i-1}]`
    pub second_moments: Vec<f64>,
    /// `<X'>_N`
    pub terminal_variance: f64,
}

impl PaddedPath {
    /// `X'_N`
    pub fn terminal(&self) -> f64 {
        self.increments.iter().sum()
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), TransformError> {
    if epsilon > 0.0 && epsilon <= 0.5 {
        Ok(())
    } else {
        Err(TransformError::EpsilonOutOfRange(epsilon))
    }
}

fn check_monotone(variance: &[f64]) -> Result<(), TransformError> {
    if variance.is_empty() {
        return Err(TransformError::EmptyPath);
    }
    for (k, w) in variance.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(TransformError::DecreasingVariance {
                index: k + 1,
                from: w[0],
                to: w[1],
            });
        }
    }
    Ok(())
}

/// Floor that treats quotients within `1e-9` of an integer as that integer.
fn snapped_floor(x: f64) -> usize {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        x.floor() as usize
    }
}

/// Padding count and residual magnitude for a gap `1 - <X>_τ`.
pub fn padding_counts(gap: f64, epsilon: f64) -> (usize, f64) {
    let gap = gap.max(0.0);
    let e2 = epsilon * epsilon;
    let r = snapped_floor(gap / e2);
    let residual = (gap - r as f64 * e2).max(0.0).sqrt();
    (r, residual)
}

/// Appends `r` Rademacher steps of size `ε` and one residual step after `τ`,
/// then zeros up to `N`. Padding signs come from stream `replicate` of `seed`.
pub fn pad_to_unit_variance(
    path: &PathBundle,
    epsilon: f64,
    seed: u64,
    replicate: u64,
) -> Result<PaddedPath, TransformError> {
    check_epsilon(epsilon)?;
    check_monotone(&path.variance)?;
    let n = path.steps();
    let tau = stop_time_v(&path.variance, StopVariant::SupLe1)?.index;
    let var_tau = path.variance[tau];
    if var_tau > 1.0 + TIE_TOLERANCE {
        return Err(TransformError::Invariant(format!("<X>_tau = {var_tau} > 1")));
    }
    let (r, residual) = padding_counts(1.0 - var_tau, epsilon);
    let total_steps = n + snapped_floor(1.0 / (epsilon * epsilon)) + 1;
    if tau + r + 1 > total_steps {
        return Err(TransformError::Invariant(format!(
            "tau + r + 1 = {} exceeds N = {total_steps}",
            tau + r + 1
        )));
    }
    let mut rng = ReplicateRng::new(seed, replicate);
    let mut increments = Vec::with_capacity(total_steps);
    let mut second_moments = Vec::with_capacity(total_steps);
    increments.extend_from_slice(&path.increments[..tau]);
    second_moments.extend(path.variance.windows(2).take(tau).map(|w| w[1] - w[0]));
    for _ in 0..r {
        increments.push(epsilon * rng.sign());
        second_moments.push(epsilon * epsilon);
    }
    increments.push(residual * rng.sign());
    second_moments.push(residual * residual);
    increments.resize(total_steps, 0.0);
    second_moments.resize(total_steps, 0.0);
    let terminal_variance = var_tau + r as f64 * epsilon * epsilon + residual * residual;
    if (terminal_variance - 1.0).abs() > 1e-9 {
        return Err(TransformError::Invariant(format!("<X'>_N = {terminal_variance}")));
    }
    Ok(PaddedPath {
        original: path.clone(),
        epsilon,
        tau,
        r,
        residual,
        total_steps,
        increments,
        second_moments,
        terminal_variance,
    })
}

/// Pads every bundle; bundle `j` draws its signs from stream `j`.
pub fn pad_paths(bundles: &[PathBundle], epsilon: f64, seed: u64) -> Result<Vec<PaddedPath>, TransformError> {
    bundles
        .par_iter()
        .enumerate()
        .map(|(j, b)| pad_to_unit_variance(b, epsilon, seed, j as u64))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaddedStepCheck {
    pub step: usize,
    pub moment: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaddedA1Report {
    pub rho: f64,
    pub epsilon: f64,
    pub steps: Vec<PaddedStepCheck>,
    /// ε-sized padding steps whose ratio is not exactly `ε^ρ`.
    pub inexact_padding_steps: usize,
}

impl PaddedA1Report {
    pub fn all_hold(&self) -> bool {
        self.steps.iter().all(|s| s.holds)
    }
}

/// `E[|ξ'_i|^{2+ρ} | F'_{i-1}] ≤ ε^ρ E[ξ'_i² | F'_{i-1}]` on every padded step,
/// within relative `1e-12`. Original steps are evaluated through `kernel`.
pub fn check_padded_a1<K: ConditionalKernel + ?Sized>(
    padded: &PaddedPath,
    kernel: &K,
    rho: f64,
) -> Result<PaddedA1Report, TransformError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(TransformError::InvalidRho(rho));
    }
    let eps = padded.epsilon;
    let scale = eps.powf(rho);
    let mut steps = Vec::with_capacity(padded.total_steps);
    let mut inexact = 0;
    for i in 1..=padded.total_steps {
        let (moment, m2) = if i <= padded.tau {
            let h = padded.original.history_at(i);
            let m = conditional_moment(kernel, i, &h, 2.0 + rho)?;
            let m2 = kernel.law(i, &h).second_moment();
            (m.value, m2)
        } else {
            let a = padded.increments[i - 1].abs();
            (a.powf(2.0 + rho), a * a)
        };
        let bound = scale * m2;
        if i > padded.tau && i <= padded.tau + padded.r && moment != eps.powf(2.0 + rho) {
            inexact += 1;
        }
        steps.push(PaddedStepCheck {
            step: i,
            moment,
            bound,
            holds: moment <= bound * (1.0 + 1e-12) + f64::MIN_POSITIVE,
        });
    }
    Ok(PaddedA1Report {
        rho,
        epsilon: eps,
        steps,
        inexact_padding_steps: inexact,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopVariant {
    /// `sup{k : <X>_k ≤ 1}`
    SupLe1,
    /// `inf{k : <X>_k ≥ 1}`
    InfGe1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopTime {
    pub index: usize,
    /// `<X>_n ≥ 1`.
    pub in_hypothesis: bool,
}

/// `v(n)` on a variance path `<X>_0..<X>_n`. Paths with `<X>_n < 1` return `n`
/// and are flagged.
pub fn stop_time_v(variance: &[f64], variant: StopVariant) -> Result<StopTime, TransformError> {
    check_monotone(variance)?;
    let n = variance.len() - 1;
    let in_hypothesis = variance[n] >= 1.0 - TIE_TOLERANCE;
    let index = match variant {
        StopVariant::SupLe1 => variance.iter().rposition(|&v| v <= 1.0 + TIE_TOLERANCE).unwrap_or(0),
        StopVariant::InfGe1 => variance.iter().position(|&v| v >= 1.0 - TIE_TOLERANCE).unwrap_or(n),
    };
    Ok(StopTime { index, in_hypothesis })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    pub variant: StopVariant,
    pub epsilon: f64,
    /// `X_{v(n)}` per path.
    pub terminals: Vec<f64>,
    pub stops: Vec<usize>,
    /// `|<X>_{v(n)} - 1|` per path.
    pub residuals: Vec<f64>,
    /// Paths with `<X>_n < 1`.
    pub out_of_hypothesis: Vec<usize>,
    /// In-hypothesis paths whose residual exceeds `ε²`.
    pub violations: Vec<usize>,
}

impl Restriction {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_in_hypothesis_residual(&self) -> f64 {
        let mut flagged = self.out_of_hypothesis.iter().peekable();
        self.residuals
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                while flagged.peek().is_some_and(|&&f| f < *j) {
                    flagged.next();
                }
                flagged.peek() != Some(&j)
            })
            .map(|(_, &r)| r)
            .fold(0.0, f64::max)
    }
}

/// Stops every path at `v(n)` and checks `|<X>_{v(n)} - 1| ≤ ε²` on paths
/// satisfying `<X>_n ≥ 1`.
pub fn restrict_to_v(bundles: &[PathBundle], variant: StopVariant, epsilon: f64) -> Result<Restriction, TransformError> {
    let per_path: Vec<(StopTime, f64, f64)> = bundles
        .par_iter()
        .map(|b| {
            let stop = stop_time_v(&b.variance, variant)?;
            let mut residual = (b.variance[stop.index] - 1.0).abs();
            if residual <= DEVIATION_SNAP {
                residual = 0.0;
            }
            Ok((stop, b.partial_sums[stop.index], residual))
        })
        .collect::<Result<_, TransformError>>()?;
    let e2 = epsilon * epsilon;
    let mut out = Restriction {
        variant,
        epsilon,
        terminals: Vec::with_capacity(per_path.len()),
        stops: Vec::with_capacity(per_path.len()),
        residuals: Vec::with_capacity(per_path.len()),
        out_of_hypothesis: Vec::new(),
        violations: Vec::new(),
    };
    for (j, (stop, x, residual)) in per_path.into_iter().enumerate() {
        out.terminals.push(x);
        out.stops.push(stop.index);
        out.residuals.push(residual);
        if !stop.in_hypothesis {
            out.out_of_hypothesis.push(j);
        } else if residual > e2 * (1.0 + 1e-12) {
            out.violations.push(j);
        }
    }
    Ok(out)
}
