use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, ReplicateRng};

/// Tolerance on the probability sum and on the mean of an exact law.
pub const LAW_TOLERANCE: f64 = 1e-12;

/// One support point of a finite conditional law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

impl Atom {
    pub const fn new(value: f64, prob: f64) -> Self {
        Self { value, prob }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LawError {
    #[error("empty support")]
    Empty,
    #[error("atom {index} is invalid (value {value}, probability {prob})")]
    InvalidAtom { index: usize, value: f64, prob: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    ProbabilitySum { sum: f64 },
    #[error("mean is {mean}, not 0")]
    NonzeroMean { mean: f64 },
    #[error("moment order {order} is below 1")]
    OrderBelowOne { order: f64 },
}

/// A finite-support law. Construction through [`DiscreteLaw::new`] enforces the
/// martingale-difference invariants; [`DiscreteLaw::unchecked`] defers them to
/// [`DiscreteLaw::validate`] so a kernel can be rejected with its step context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    atoms: Vec<Atom>,
}

impl DiscreteLaw {
    pub fn new(atoms: Vec<Atom>) -> Result<Self, LawError> {
        let law = Self { atoms };
        law.validate()?;
        Ok(law)
    }

    pub fn unchecked(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    /// Probability-only validation (no mean condition); used for coordinate laws
    /// of independent variables, which need not be centred.
    pub fn new_uncentred(atoms: Vec<Atom>) -> Result<Self, LawError> {
        let law = Self { atoms };
        law.validate_probabilities()?;
        Ok(law)
    }

    pub fn from_pairs(values: &[f64], probs: &[f64]) -> Result<Self, LawError> {
        if values.len() != probs.len() {
            return Err(LawError::InvalidAtom {
                index: values.len().min(probs.len()),
                value: f64::NAN,
                prob: f64::NAN,
            });
        }
        Self::new(
            values
                .iter()
                .zip(probs)
                .map(|(&v, &p)| Atom::new(v, p))
                .collect(),
        )
    }

    /// `±a` with probability one half each.
    pub fn rademacher(a: f64) -> Self {
        Self {
            atoms: vec![Atom::new(-a, 0.5), Atom::new(a, 0.5)],
        }
    }

    /// `{-b: q/2, 0: 1-q, +b: q/2}`.
    pub fn three_point(b: f64, q: f64) -> Self {
        Self {
            atoms: vec![
                Atom::new(-b, 0.5 * q),
                Atom::new(0.0, 1.0 - q),
                Atom::new(b, 0.5 * q),
            ],
        }
    }

    pub fn point_mass(value: f64) -> Self {
        Self {
            atoms: vec![Atom::new(value, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Multiplies every support point by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom::new(a.value * c, a.prob))
                .collect(),
        }
    }

    pub fn validate_probabilities(&self) -> Result<(), LawError> {
        if self.atoms.is_empty() {
            return Err(LawError::Empty);
        }
        for (index, a) in self.atoms.iter().enumerate() {
            if !a.value.is_finite() || !a.prob.is_finite() || !(0.0..=1.0).contains(&a.prob) {
                return Err(LawError::InvalidAtom {
                    index,
                    value: a.value,
                    prob: a.prob,
                });
            }
        }
        let sum: f64 = self.atoms.iter().map(|a| a.prob).sum();
        if (sum - 1.0).abs() > LAW_TOLERANCE {
            return Err(LawError::ProbabilitySum { sum });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), LawError> {
        self.validate_probabilities()?;
        let mean = self.mean();
        if mean.abs() > LAW_TOLERANCE {
            return Err(LawError::NonzeroMean { mean });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.value).sum()
    }

    /// `E|ξ|^t` by finite summation.
    pub fn abs_moment(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.prob > 0.0)
            .map(|a| a.prob * a.value.abs().powf(t))
            .sum()
    }

    /// `E[ξ^k]` (signed).
    pub fn signed_moment(&self, k: u32) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.prob * a.value.powi(k as i32))
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.value * a.value).sum()
    }

    pub fn max_abs_value(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.prob > 0.0)
            .fold(0.0, |m, a| m.max(a.value.abs()))
    }

    /// Inverse-CDF draw; symmetric fair two-point laws use a single coin bit.
    #[inline]
    pub fn sample(&self, rng: &mut ReplicateRng) -> f64 {
        if let [lo, hi] = self.atoms.as_slice() {
            if lo.prob == 0.5 && hi.prob == 0.5 {
                return [lo.value, hi.value][rng.coin() as usize];
            }
        }
        let u = rng.uniform();
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.prob;
            if u < acc {
                return a.value;
            }
        }
        // rounding left u above the last cumulative value
        self.atoms
            .iter()
            .rev()
            .find(|a| a.prob > 0.0)
            .map_or(0.0, |a| a.value)
    }
}

type Sampler = Arc<dyn Fn(&mut ReplicateRng) -> f64 + Send + Sync>;

/// A law known only through a sampler, with its declared conditional second
/// moment and an inner Monte Carlo budget for other moments.
#[derive(Clone)]
pub struct SampledLaw {
    name: String,
    sampler: Sampler,
    second_moment: f64,
    budget: usize,
}

impl SampledLaw {
    pub fn new(
        name: impl Into<String>,
        second_moment: f64,
        budget: usize,
        sampler: impl Fn(&mut ReplicateRng) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            sampler: Arc::new(sampler),
            second_moment,
            budget: budget.max(2),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    #[inline]
    pub fn sample(&self, rng: &mut ReplicateRng) -> f64 {
        (self.sampler)(rng)
    }

    /// Mean of `|ξ|^t` over the inner budget, drawn from a stream keyed by
    /// `stream_key` so repeated queries are reproducible.
    pub fn estimate_abs_moment(&self, t: f64, stream_key: u64) -> MomentEstimate {
        let mut rng = ReplicateRng::new(derive_seed(0x6d6f_6d65_6e74, stream_key), 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..self.budget {
            let v = self.sample(&mut rng).abs().powf(t);
            sum += v;
            sum_sq += v * v;
        }
        let m = self.budget as f64;
        let mean = sum / m;
        let var = ((sum_sq / m) - mean * mean).max(0.0) * m / (m - 1.0);
        MomentEstimate {
            value: mean,
            std_error: (var / m).sqrt(),
            exact: false,
        }
    }
}

impl fmt::Debug for SampledLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampledLaw")
            .field("name", &self.name)
            .field("second_moment", &self.second_moment)
            .field("budget", &self.budget)
            .finish()
    }
}

/// Result of a conditional moment query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    /// Zero for exact laws.
    pub std_error: f64,
    pub exact: bool,
}

/// Conditional law of one increment given the past.
#[derive(Clone, Debug)]
pub enum StepDistribution {
    Exact(DiscreteLaw),
    Sampled(SampledLaw),
}

impl StepDistribution {
    pub fn is_exact(&self) -> bool {
        matches!(self, StepDistribution::Exact(_))
    }

    pub fn validate(&self) -> Result<(), LawError> {
        match self {
            StepDistribution::Exact(law) => law.validate(),
            StepDistribution::Sampled(_) => Ok(()),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            StepDistribution::Exact(law) => law.second_moment(),
            StepDistribution::Sampled(law) => law.second_moment(),
        }
    }

    pub fn abs_moment(&self, t: f64, stream_key: u64) -> Result<MomentEstimate, LawError> {
        if !(t >= 1.0) {
            return Err(LawError::OrderBelowOne { order: t });
        }
        Ok(match self {
            StepDistribution::Exact(law) => MomentEstimate {
                value: law.abs_moment(t),
                std_error: 0.0,
                exact: true,
            },
            StepDistribution::Sampled(law) => law.estimate_abs_moment(t, stream_key),
        })
    }

    #[inline]
    pub fn sample(&self, rng: &mut ReplicateRng) -> f64 {
        match self {
            StepDistribution::Exact(law) => law.sample(rng),
            StepDistribution::Sampled(law) => law.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_probability_sum() {
        let law = DiscreteLaw::unchecked(vec![Atom::new(1.0, 0.6), Atom::new(-1.0, 0.6)]);
        assert!(matches!(law.validate(), Err(LawError::ProbabilitySum { .. })));
    }

    #[test]
    fn rejects_nonzero_mean() {
        let err = DiscreteLaw::new(vec![Atom::new(1.0, 0.5), Atom::new(0.0, 0.5)]).unwrap_err();
        assert!(matches!(err, LawError::NonzeroMean { .. }));
    }

    #[test]
    fn three_point_moment_is_q_b_pow_t() {
        let (b, q) = (0.7, 0.3);
        let law = DiscreteLaw::three_point(b, q);
        law.validate().unwrap();
        for t in [1.0, 2.0, 2.5, 3.0, 4.5] {
            let want = q * b.powf(t);
            assert!((law.abs_moment(t) - want).abs() < 1e-15 * want.max(1.0));
        }
    }

    #[test]
    fn order_below_one_rejected() {
        let law = StepDistribution::Exact(DiscreteLaw::rademacher(1.0));
        assert!(law.abs_moment(0.5, 0).is_err());
    }

    #[test]
    fn sampled_moment_reports_error() {
        let law = SampledLaw::new("uniform", 1.0 / 3.0, 20_000, |rng| 2.0 * rng.uniform() - 1.0);
        let est = law.estimate_abs_moment(2.0, 5);
        assert!(!est.exact);
        assert!(est.std_error > 0.0);
        assert!((est.value - 1.0 / 3.0).abs() < 5.0 * est.std_error);
        assert_eq!(est, law.estimate_abs_moment(2.0, 5));
    }

    #[test]
    fn sampling_hits_support_with_right_frequencies() {
        let law = DiscreteLaw::three_point(2.0, 0.2);
        let mut rng = ReplicateRng::new(3, 0);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            match law.sample(&mut rng) {
                v if v == -2.0 => counts[0] += 1,
                v if v == 0.0 => counts[1] += 1,
                v if v == 2.0 => counts[2] += 1,
                v => panic!("value {v} off support"),
            }
        }
        assert!((counts[1] as f64 / 1e5 - 0.8).abs() < 0.006);
        assert!((counts[0] as f64 - counts[2] as f64).abs() < 1000.0);
    }
}
