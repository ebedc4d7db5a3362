//! Martingale difference sequences defined by per-step conditional laws.
//!
//! A [`ConditionalKernel`] maps `(step, history)` to the law of the next
//! increment. Simulation ([`sample_paths`], [`simulate_terminal`]) realizes
//! paths together with the predictable variance `<X>_k`.

mod law;
mod registry;
mod simulate;

pub use law::{Atom, DiscreteLaw, LawError, MomentEstimate, SampledLaw, StepDistribution, LAW_TOLERANCE};
pub use registry::{BaseDist, KernelSpec, RegistryKernel};
pub use simulate::{
    sample_paths, sample_paths_with_moments, simulate_terminal, terminal_statistics, PathBundle,
    TerminalRecord, TerminalStatistics,
};

use thiserror::Error;

use crate::rng::ReplicateRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("kernel `{label}` step {step} is invalid for history {history:?}: {source}")]
    InvalidStep {
        label: String,
        step: usize,
        history: Vec<f64>,
        #[source]
        source: LawError,
    },
    #[error("invalid kernel parameter: {0}")]
    Parameter(String),
    #[error("replicate count must be at least 1")]
    NoReplicates,
    #[error("empty bundle collection")]
    EmptyCollection,
    #[error("moment order {0} is below 1")]
    OrderBelowOne(f64),
    #[error("step {step} outside 1..={n}")]
    StepOutOfRange { step: usize, n: usize },
    #[error("cannot merge statistics computed for p={left} and p={right}")]
    MismatchedPower { left: f64, right: f64 },
}

/// How much of the past a kernel's law reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistoryNeeds {
    /// The law depends on the step index only.
    None,
    /// The law depends on `(step, X_{k-1}, <X>_{k-1})`; `History::increments` may be empty.
    Summary,
    /// The law may read the full increment vector.
    Full,
}

/// Realized past at the start of a step.
#[derive(Clone, Copy, Debug)]
pub struct History<'a> {
    /// `ξ_1..ξ_{k-1}`; empty for kernels that only need summaries.
    pub increments: &'a [f64],
    /// `X_{k-1}`.
    pub sum: f64,
    /// `<X>_{k-1}`.
    pub variance: f64,
}

impl History<'static> {
    pub const START: History<'static> = History {
        increments: &[],
        sum: 0.0,
        variance: 0.0,
    };
}

impl<'a> History<'a> {
    /// Builds a history with summaries computed from the increments, using the
    /// kernel for the conditional variances.
    pub fn replay<K: ConditionalKernel + ?Sized>(kernel: &K, increments: &'a [f64]) -> Self {
        let mut sum = 0.0;
        let mut variance = 0.0;
        for (i, &x) in increments.iter().enumerate() {
            let h = History {
                increments: &increments[..i],
                sum,
                variance,
            };
            variance += kernel.law(i + 1, &h).second_moment();
            sum += x;
        }
        History {
            increments,
            sum,
            variance,
        }
    }
}

/// One simulated increment with its conditional second moment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub value: f64,
    pub second_moment: f64,
}

/// Generator of a martingale difference sequence.
///
/// `law` must be a pure function of `(step, history)`; steps are 1-based.
pub trait ConditionalKernel: Send + Sync {
    fn steps(&self) -> usize;

    fn label(&self) -> String;

    fn law(&self, step: usize, history: &History<'_>) -> StepDistribution;

    fn history_needs(&self) -> HistoryNeeds {
        HistoryNeeds::Full
    }

    /// Draws the next increment. The default validates the law first; kernels
    /// whose laws are valid by construction may override this with a fast path
    /// that must consume randomness exactly as `law(..).sample(rng)` would.
    #[inline]
    fn draw(&self, step: usize, history: &History<'_>, rng: &mut ReplicateRng) -> Result<Draw, KernelError> {
        let law = self.law(step, history);
        law.validate().map_err(|source| KernelError::InvalidStep {
            label: self.label(),
            step,
            history: history.increments.to_vec(),
            source,
        })?;
        Ok(Draw {
            value: law.sample(rng),
            second_moment: law.second_moment(),
        })
    }
}

impl<K: ConditionalKernel + ?Sized> ConditionalKernel for &K {
    fn steps(&self) -> usize {
        (**self).steps()
    }
    fn label(&self) -> String {
        (**self).label()
    }
    fn law(&self, step: usize, history: &History<'_>) -> StepDistribution {
        (**self).law(step, history)
    }
    fn history_needs(&self) -> HistoryNeeds {
        (**self).history_needs()
    }
    #[inline]
    fn draw(&self, step: usize, history: &History<'_>, rng: &mut ReplicateRng) -> Result<Draw, KernelError> {
        (**self).draw(step, history, rng)
    }
}

/// `E[|ξ_step|^order | history]`: exact finite sum for exact laws, an inner
/// Monte Carlo mean with standard error for sampled laws.
pub fn conditional_moment<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    step: usize,
    history: &History<'_>,
    order: f64,
) -> Result<MomentEstimate, KernelError> {
    if !(order >= 1.0) {
        return Err(KernelError::OrderBelowOne(order));
    }
    if step == 0 || step > kernel.steps() {
        return Err(KernelError::StepOutOfRange {
            step,
            n: kernel.steps(),
        });
    }
    let law = kernel.law(step, history);
    law.abs_moment(order, step as u64)
        .map_err(|source| KernelError::InvalidStep {
            label: kernel.label(),
            step,
            history: history.increments.to_vec(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rademacher_third_moment() {
        for n in [1usize, 4, 9, 64, 100] {
            let k = RegistryKernel::iid_rademacher(n).unwrap();
            let m = conditional_moment(&k, 1, &History::START, 3.0).unwrap();
            let want = (n as f64).powf(-1.5);
            assert!((m.value - want).abs() < 1e-15 * want.max(1e-3));
            assert!(m.exact);
        }
    }

    #[test]
    fn three_point_moment() {
        let k = RegistryKernel::three_point(0.4, Some(0.25), 10).unwrap();
        for t in [1.0, 2.0, 3.3] {
            let m = conditional_moment(&k, 3, &History::START, t).unwrap();
            assert!((m.value - 0.25 * 0.4f64.powf(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_point_second_moment() {
        let k = RegistryKernel::two_point(0.3, 5).unwrap();
        let m = conditional_moment(&k, 2, &History::START, 2.0).unwrap();
        assert!((m.value - 0.09).abs() < 1e-16);
    }

    #[test]
    fn order_below_one_rejected() {
        let k = RegistryKernel::iid_rademacher(4).unwrap();
        assert_eq!(
            conditional_moment(&k, 1, &History::START, 0.9),
            Err(KernelError::OrderBelowOne(0.9))
        );
    }

    #[test]
    fn sampled_moment_has_standard_error() {
        let k = RegistryKernel::from_spec(&KernelSpec::IidScaled {
            dist: BaseDist::Uniform,
            n: 4,
        })
        .unwrap();
        let m = conditional_moment(&k, 1, &History::START, 2.0).unwrap();
        assert!(!m.exact);
        assert!(m.std_error > 0.0);
        assert!((m.value - 0.25).abs() < 5.0 * m.std_error);
    }
}
