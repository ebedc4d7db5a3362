//! Certificates for the conditional moment condition `E[|ξ|^{2+ρ}|F] ≤ ε^ρ E[ξ²|F]`,
//! the terminal normalization `|<X>_n - 1| ≤ δ²`, the conditional Bernstein
//! condition, and exact checks of the two constant-free moment lemmas.
//!
//! Exhaustive mode walks every reachable history (probability > 0). Kernels that
//! declare [`HistoryNeeds::Summary`] are walked on the DAG of distinct
//! `(X_{k-1}, <X>_{k-1})` states; history-free kernels collapse to one node per
//! step. Simulated mode only sees sampled histories, so its sup is a lower
//! estimate and is labelled as such.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{
    sample_paths, ConditionalKernel, DiscreteLaw, History, HistoryNeeds, KernelError, StepDistribution,
};

/// Maximum number of history nodes an exhaustive walk may visit.
pub const TREE_GUARD: usize = 10_000_000;

/// Terminal deviations `|<X>_n - 1|` at or below this are reported as zero.
pub(crate) const DEVIATION_SNAP: f64 = 1e-12;

/// Upper end of the parameter ranges in conditions (A1)/(A2).
pub const HYPOTHESIS_RANGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("rho must be positive and finite, got {0}")]
    InvalidRho(f64),
    #[error("exhaustive walk exceeded {guard} nodes at step {step}")]
    GuardExceeded { step: usize, guard: usize },
    #[error("step {step} has a sampled law; exhaustive certification needs exact laws")]
    NotExact { step: usize },
    #[error("non-finite conditional moment at step {step}")]
    NonFinite { step: usize },
    #[error("s must exceed 2, got {0}")]
    InvalidS(f64),
    #[error("t={t} outside [2, s={s})")]
    InvalidT { t: f64, s: f64 },
    #[error("k_max must be in 3..=20, got {0}")]
    InvalidKMax(u32),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistorySource {
    Exhaustive,
    Simulated { seed: u64, count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    /// Every reachable history was examined.
    Certified,
    /// Sampled histories only; sup values are lower estimates.
    Estimated,
}

/// Worst `(m_{2+ρ}/m_2)^{1/ρ}` seen at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepWorst {
    pub step: usize,
    pub ratio: f64,
    /// Present when the ratio came from sampled moments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub mode: ReportMode,
    pub per_step: Vec<StepWorst>,
    pub epsilon_out_of_range: bool,
    pub delta_out_of_range: bool,
    pub nodes_examined: usize,
}

impl ConditionReport {
    pub fn is_certified(&self) -> bool {
        self.mode == ReportMode::Certified
    }
}

#[derive(Clone)]
struct Node {
    increments: Vec<f64>,
    sum: f64,
    variance: f64,
}

fn snap_key(x: f64) -> u64 {
    ((x * 1e12).round() + 0.0).to_bits()
}

/// Ratio `(m_{2+ρ}/m_2)^{1/ρ}` with the `0/0 → 0` convention.
fn step_ratio(law: &StepDistribution, rho: f64, step: usize) -> Result<(f64, Option<f64>), ConditionError> {
    let m2 = law.second_moment();
    let high = law
        .abs_moment(2.0 + rho, step as u64)
        .map_err(|_| ConditionError::NonFinite { step })?;
    if !m2.is_finite() || !high.value.is_finite() {
        return Err(ConditionError::NonFinite { step });
    }
    if m2 == 0.0 {
        return Ok((0.0, None));
    }
    let ratio = (high.value / m2).powf(1.0 / rho);
    let se = (!high.exact).then(|| ratio / (rho * high.value.max(f64::MIN_POSITIVE)) * high.std_error);
    Ok((ratio, se))
}

fn check_rho(rho: f64) -> Result<(), ConditionError> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(ConditionError::InvalidRho(rho))
    }
}

struct Walk {
    per_step: Vec<StepWorst>,
    max_deviation: f64,
    nodes: usize,
}

fn expand<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    node: &Node,
    step: usize,
    rho: Option<f64>,
    needs: HistoryNeeds,
) -> Result<(f64, Vec<Node>), ConditionError> {
    let history = History {
        increments: &node.increments,
        sum: node.sum,
        variance: node.variance,
    };
    let law = kernel.law(step, &history);
    let StepDistribution::Exact(exact) = &law else {
        return Err(ConditionError::NotExact { step });
    };
    exact.validate().map_err(|source| {
        ConditionError::Kernel(KernelError::InvalidStep {
            label: kernel.label(),
            step,
            history: node.increments.clone(),
            source,
        })
    })?;
    let ratio = match rho {
        Some(rho) => step_ratio(&law, rho, step)?.0,
        None => 0.0,
    };
    let m2 = exact.second_moment();
    let children = exact
        .atoms()
        .iter()
        .filter(|a| a.prob > 0.0)
        .map(|a| {
            let mut increments = Vec::new();
            if needs == HistoryNeeds::Full {
                increments.reserve(node.increments.len() + 1);
                increments.extend_from_slice(&node.increments);
                increments.push(a.value);
            }
            Node {
                increments,
                sum: node.sum + a.value,
                variance: node.variance + m2,
            }
        })
        .collect();
    Ok((ratio, children))
}

fn exhaustive_walk<K: ConditionalKernel + ?Sized>(kernel: &K, rho: Option<f64>) -> Result<Walk, ConditionError> {
    let n = kernel.steps();
    let needs = kernel.history_needs();
    let mut layer = vec![Node {
        increments: Vec::new(),
        sum: 0.0,
        variance: 0.0,
    }];
    let mut nodes = 1usize;
    let mut per_step = Vec::with_capacity(n);
    for step in 1..=n {
        let mut worst: f64 = 0.0;
        let mut next = Vec::new();
        let mut seen = HashSet::new();
        for chunk in layer.chunks(1 << 15) {
            let expanded: Vec<Result<(f64, Vec<Node>), ConditionError>> = chunk
                .par_iter()
                .map(|node| expand(kernel, node, step, rho, needs))
                .collect();
            for item in expanded {
                let (ratio, children) = item?;
                worst = worst.max(ratio);
                for child in children {
                    let keep = match needs {
                        HistoryNeeds::None => next.is_empty(),
                        HistoryNeeds::Summary => {
                            seen.insert((snap_key(child.sum), snap_key(child.variance)))
                        }
                        HistoryNeeds::Full => true,
                    };
                    if keep {
                        next.push(child);
                    }
                }
            }
            if nodes + next.len() > TREE_GUARD {
                return Err(ConditionError::GuardExceeded {
                    step,
                    guard: TREE_GUARD,
                });
            }
        }
        nodes += next.len();
        per_step.push(StepWorst {
            step,
            ratio: worst,
            std_error: None,
        });
        layer = next;
    }
    let max_deviation = layer
        .iter()
        .map(|node| (node.variance - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(Walk {
        per_step,
        max_deviation,
        nodes,
    })
}

fn simulated_walk<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    rho: Option<f64>,
    seed: u64,
    count: usize,
) -> Result<Walk, ConditionError> {
    let n = kernel.steps();
    let paths = sample_paths(kernel, seed, count)?;
    let max_deviation = paths
        .iter()
        .map(|p| (p.terminal_variance() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut per_step: Vec<StepWorst> = (1..=n)
        .map(|step| StepWorst {
            step,
            ratio: 0.0,
            std_error: None,
        })
        .collect();
    if let Some(rho) = rho {
        // history-free laws are evaluated once per step
        let examined: &[_] = if kernel.history_needs() == HistoryNeeds::None {
            &paths[..1]
        } else {
            &paths
        };
        let worst: Vec<Result<StepWorst, ConditionError>> = (1..=n)
            .into_par_iter()
            .map(|step| {
                let mut best = StepWorst {
                    step,
                    ratio: 0.0,
                    std_error: None,
                };
                for path in examined {
                    let law = kernel.law(step, &path.history_at(step));
                    let (ratio, se) = step_ratio(&law, rho, step)?;
                    if ratio > best.ratio {
                        best.ratio = ratio;
                        best.std_error = se;
                    }
                }
                Ok(best)
            })
            .collect();
        per_step = worst.into_iter().collect::<Result<_, _>>()?;
    }
    Ok(Walk {
        per_step,
        max_deviation,
        nodes: count * n,
    })
}

fn run_walk<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    rho: Option<f64>,
    source: HistorySource,
) -> Result<(Walk, ReportMode), ConditionError> {
    match source {
        HistorySource::Exhaustive => Ok((exhaustive_walk(kernel, rho)?, ReportMode::Certified)),
        HistorySource::Simulated { seed, count } => {
            Ok((simulated_walk(kernel, rho, seed, count)?, ReportMode::Estimated))
        }
    }
}

fn delta_from(max_deviation: f64) -> f64 {
    if max_deviation <= DEVIATION_SNAP {
        0.0
    } else {
        max_deviation.sqrt()
    }
}

/// Both halves of the report in one walk.
pub fn certify<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    rho: f64,
    source: HistorySource,
) -> Result<ConditionReport, ConditionError> {
    check_rho(rho)?;
    let (walk, mode) = run_walk(kernel, Some(rho), source)?;
    let epsilon = walk.per_step.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let delta = delta_from(walk.max_deviation);
    Ok(ConditionReport {
        rho: Some(rho),
        epsilon: Some(epsilon),
        delta: Some(delta),
        mode,
        per_step: walk.per_step,
        epsilon_out_of_range: epsilon > HYPOTHESIS_RANGE,
        delta_out_of_range: delta > HYPOTHESIS_RANGE,
        nodes_examined: walk.nodes,
    })
}

/// Smallest ε satisfying the conditional moment condition over the examined
/// histories: the sup over steps of `(m_{2+ρ}/m_2)^{1/ρ}`.
pub fn epsilon_min<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    rho: f64,
    source: HistorySource,
) -> Result<ConditionReport, ConditionError> {
    let mut report = certify(kernel, rho, source)?;
    report.delta = None;
    report.delta_out_of_range = false;
    Ok(report)
}

/// Smallest δ with `|<X>_n - 1| ≤ δ²` over the examined histories.
pub fn delta_a2<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    source: HistorySource,
) -> Result<ConditionReport, ConditionError> {
    let (walk, mode) = run_walk(kernel, None, source)?;
    let delta = delta_from(walk.max_deviation);
    Ok(ConditionReport {
        rho: None,
        epsilon: None,
        delta: Some(delta),
        mode,
        per_step: Vec::new(),
        epsilon_out_of_range: false,
        delta_out_of_range: delta > HYPOTHESIS_RANGE,
        nodes_examined: walk.nodes,
    })
}

/// Exhaustive certification when the walk fits under the guard, otherwise a
/// simulated estimate.
pub fn certify_auto<K: ConditionalKernel + ?Sized>(
    kernel: &K,
    rho: f64,
    seed: u64,
    count: usize,
) -> Result<ConditionReport, ConditionError> {
    match certify(kernel, rho, HistorySource::Exhaustive) {
        Err(ConditionError::GuardExceeded { .. }) | Err(ConditionError::NotExact { .. }) => {
            certify(kernel, rho, HistorySource::Simulated { seed, count })
        }
        other => other,
    }
}

/// Relative slack for the moment-lemma comparisons.
const LEMMA_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub t: f64,
    pub moment: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub s: f64,
    pub epsilon: f64,
    pub second_moment: f64,
    /// `m_2 = 0`: both lemmas hold trivially.
    pub vacuous: bool,
    /// `m_t ≤ ε^{t-2} m_2` for each `t`.
    pub interpolation: Vec<InterpolationCheck>,
    /// `m_2 ≤ ε²`.
    pub variance_cap_holds: bool,
}

impl LemmaReport {
    pub fn all_hold(&self) -> bool {
        self.variance_cap_holds && self.interpolation.iter().all(|c| c.holds)
    }
}

/// Checks moment interpolation (`m_t ≤ ε^{t-2} m_2` for `t ∈ [2, s)`) and the
/// variance cap (`m_2 ≤ ε²`) on an exact law, with `ε = (m_s/m_2)^{1/(s-2)}`.
pub fn verify_moment_lemmas(dist: &DiscreteLaw, s: f64, t_grid: &[f64]) -> Result<LemmaReport, ConditionError> {
    verify_moment_lemmas_with(dist, s, t_grid, None)
}

/// As [`verify_moment_lemmas`] with a caller-supplied ε (which must satisfy the
/// s-moment hypothesis for the conclusions to be meaningful).
pub fn verify_moment_lemmas_with(
    dist: &DiscreteLaw,
    s: f64,
    t_grid: &[f64],
    epsilon: Option<f64>,
) -> Result<LemmaReport, ConditionError> {
    if !(s > 2.0) || !s.is_finite() {
        return Err(ConditionError::InvalidS(s));
    }
    if let Some(&t) = t_grid.iter().find(|&&t| !(2.0..s).contains(&t)) {
        return Err(ConditionError::InvalidT { t, s });
    }
    let m2 = dist.abs_moment(2.0);
    if m2 == 0.0 {
        return Ok(LemmaReport {
            s,
            epsilon: epsilon.unwrap_or(0.0),
            second_moment: 0.0,
            vacuous: true,
            interpolation: t_grid
                .iter()
                .map(|&t| InterpolationCheck {
                    t,
                    moment: 0.0,
                    bound: 0.0,
                    holds: true,
                })
                .collect(),
            variance_cap_holds: true,
        });
    }
    let eps = epsilon.unwrap_or_else(|| (dist.abs_moment(s) / m2).powf(1.0 / (s - 2.0)));
    let interpolation = t_grid
        .iter()
        .map(|&t| {
            let moment = dist.abs_moment(t);
            let bound = eps.powf(t - 2.0) * m2;
            InterpolationCheck {
                t,
                moment,
                bound,
                holds: moment <= bound * (1.0 + LEMMA_TOLERANCE),
            }
        })
        .collect();
    Ok(LemmaReport {
        s,
        epsilon: eps,
        second_moment: m2,
        vacuous: false,
        interpolation,
        variance_cap_holds: m2 <= eps * eps * (1.0 + LEMMA_TOLERANCE),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BernsteinCheck {
    pub holds: bool,
    pub first_violation: Option<u32>,
}

/// `|E ξ^k| ≤ ½ k! ε^{k-2} E ξ²` for `3 ≤ k ≤ k_max`.
pub fn check_bernstein(dist: &DiscreteLaw, epsilon: f64, k_max: u32) -> Result<BernsteinCheck, ConditionError> {
    if !(3..=20).contains(&k_max) {
        return Err(ConditionError::InvalidKMax(k_max));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(ConditionError::InvalidEpsilon(epsilon));
    }
    let m2 = dist.second_moment();
    // 20! < 2^63
    let mut factorial: u64 = 2;
    for k in 3..=k_max {
        factorial *= k as u64;
        let lhs = dist.signed_moment(k).abs();
        let rhs = 0.5 * factorial as f64 * epsilon.powi(k as i32 - 2) * m2;
        if lhs > rhs * (1.0 + LEMMA_TOLERANCE) {
            return Ok(BernsteinCheck {
                holds: false,
                first_violation: Some(k),
            });
        }
    }
    Ok(BernsteinCheck {
        holds: true,
        first_violation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Atom, LawError, RegistryKernel};

    #[test]
    fn rademacher_epsilon_is_inverse_sqrt_n() {
        for n in [4usize, 16, 100] {
            let k = RegistryKernel::iid_rademacher(n).unwrap();
            for rho in [0.5, 1.0, 2.0] {
                let r = epsilon_min(&k, rho, HistorySource::Exhaustive).unwrap();
                let want = 1.0 / (n as f64).sqrt();
                assert!((r.epsilon.unwrap() - want).abs() < 1e-14, "n={n} rho={rho}");
                assert!(r.is_certified());
            }
        }
    }

    #[test]
    fn degenerate_step_contributes_zero() {
        let law = StepDistribution::Exact(DiscreteLaw::point_mass(0.0));
        assert_eq!(step_ratio(&law, 1.0, 1).unwrap().0, 0.0);
    }

    #[test]
    fn three_point_epsilon_is_b() {
        let b = 0.3;
        let n = 20;
        let k = RegistryKernel::three_point(b, None, n).unwrap();
        let r = epsilon_min(&k, 1.0, HistorySource::Exhaustive).unwrap();
        assert!((r.epsilon.unwrap() - b).abs() < 1e-15);
    }

    #[test]
    fn rademacher_delta_zero() {
        let k = RegistryKernel::iid_rademacher(12).unwrap();
        let r = delta_a2(&k, HistorySource::Exhaustive).unwrap();
        assert_eq!(r.delta, Some(0.0));
    }

    #[test]
    fn variance_drift_delta_is_sqrt_d() {
        for n in [4usize, 8, 12] {
            let k = RegistryKernel::variance_drift(0.2, n).unwrap();
            let r = delta_a2(&k, HistorySource::Exhaustive).unwrap();
            assert!((r.delta.unwrap() - 0.2f64.sqrt()).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn summary_dedup_matches_full_tree() {
        // same kernel walked as a full tree and as a state DAG
        struct FullDrift(RegistryKernel);
        impl ConditionalKernel for FullDrift {
            fn steps(&self) -> usize {
                self.0.steps()
            }
            fn label(&self) -> String {
                "full".into()
            }
            fn law(&self, step: usize, h: &History<'_>) -> StepDistribution {
                self.0.law(step, h)
            }
        }
        let k = RegistryKernel::variance_drift(0.3, 10).unwrap();
        let full = certify(&FullDrift(k.clone()), 1.0, HistorySource::Exhaustive).unwrap();
        let dag = certify(&k, 1.0, HistorySource::Exhaustive).unwrap();
        assert_eq!(full.epsilon, dag.epsilon);
        assert!((full.delta.unwrap() - dag.delta.unwrap()).abs() < 1e-12);
        assert!(dag.nodes_examined < full.nodes_examined);
        assert_eq!(full.nodes_examined, (1 << 11) - 1);
    }

    #[test]
    fn certified_epsilon_is_tight() {
        let k = RegistryKernel::variance_drift(0.25, 9).unwrap();
        let rho = 1.0;
        let r = certify(&k, rho, HistorySource::Exhaustive).unwrap();
        let eps = r.epsilon.unwrap();
        let shrunk = eps * (1.0 - 1e-9);
        let mut some_fail = false;
        for s in &r.per_step {
            assert!(s.ratio <= eps);
            some_fail |= s.ratio > shrunk;
        }
        assert!(some_fail);
    }

    #[test]
    fn flags_out_of_range() {
        let k = RegistryKernel::two_point(0.8, 2).unwrap();
        let r = certify(&k, 1.0, HistorySource::Exhaustive).unwrap();
        assert!(r.epsilon_out_of_range);
        assert!(r.delta_out_of_range); // <X>_2 = 1.28
    }

    #[test]
    fn guard_trips_on_huge_tree() {
        struct Wide;
        impl ConditionalKernel for Wide {
            fn steps(&self) -> usize {
                40
            }
            fn label(&self) -> String {
                "wide".into()
            }
            fn law(&self, _: usize, _: &History<'_>) -> StepDistribution {
                StepDistribution::Exact(DiscreteLaw::rademacher(0.1))
            }
        }
        assert!(matches!(
            certify(&Wide, 1.0, HistorySource::Exhaustive),
            Err(ConditionError::GuardExceeded { .. })
        ));
    }

    #[test]
    fn invalid_kernel_rejected_with_step() {
        struct Bad;
        impl ConditionalKernel for Bad {
            fn steps(&self) -> usize {
                3
            }
            fn label(&self) -> String {
                "bad".into()
            }
            fn law(&self, step: usize, _: &History<'_>) -> StepDistribution {
                if step == 2 {
                    StepDistribution::Exact(DiscreteLaw::unchecked(vec![
                        Atom::new(1.0, 0.6),
                        Atom::new(-1.0, 0.6),
                    ]))
                } else {
                    StepDistribution::Exact(DiscreteLaw::rademacher(0.5))
                }
            }
        }
        match certify(&Bad, 1.0, HistorySource::Exhaustive) {
            Err(ConditionError::Kernel(KernelError::InvalidStep { step, source, .. })) => {
                assert_eq!(step, 2);
                assert!(matches!(source, LawError::ProbabilitySum { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simulated_mode_is_labelled_estimate() {
        let k = RegistryKernel::variance_drift(0.2, 32).unwrap();
        let r = certify(&k, 1.0, HistorySource::Simulated { seed: 3, count: 200 }).unwrap();
        assert_eq!(r.mode, ReportMode::Estimated);
        let a = (1.2f64 / 32.0).sqrt();
        assert!((r.epsilon.unwrap() - a).abs() < 1e-15);
        assert!(r.delta.unwrap() <= 0.2f64.sqrt() + 1e-12);
    }

    #[test]
    fn report_json_shape() {
        let k = RegistryKernel::iid_rademacher(4).unwrap();
        let r = certify(&k, 1.0, HistorySource::Exhaustive).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["rho", "epsilon", "delta", "mode", "per_step"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mode"], "certified");
    }

    #[test]
    fn lemmas_equality_on_two_point() {
        let a = 0.37;
        let r = verify_moment_lemmas(&DiscreteLaw::rademacher(a), 4.0, &[3.0]).unwrap();
        assert!(r.all_hold());
        assert!((r.epsilon - a).abs() < 1e-15);
        let c = &r.interpolation[0];
        assert!((c.moment - c.bound).abs() < 1e-15);
    }

    #[test]
    fn lemmas_on_three_point_are_equalities() {
        // |ξ| takes the single nonzero value b, so every comparison is tight
        let law = DiscreteLaw::three_point(2.0, 0.1).scaled(0.25);
        let r = verify_moment_lemmas(&law, 4.0, &[2.5, 3.0, 3.5]).unwrap();
        assert!(r.all_hold());
        assert!((r.epsilon - 0.5).abs() < 1e-15);
        for c in &r.interpolation {
            assert!((c.moment - c.bound).abs() <= 1e-14 * c.bound, "{c:?}");
        }
        assert!(r.second_moment < r.epsilon * r.epsilon);
    }

    #[test]
    fn lemmas_strict_on_multi_magnitude_law() {
        let law = DiscreteLaw::new(vec![
            Atom::new(-2.0, 0.1),
            Atom::new(-0.25, 0.4),
            Atom::new(0.6, 0.5),
        ])
        .unwrap();
        let r = verify_moment_lemmas(&law, 4.0, &[2.5, 3.0, 3.5]).unwrap();
        assert!(r.all_hold());
        for c in &r.interpolation {
            assert!(c.moment < c.bound * (1.0 - 1e-3), "{c:?}");
        }
        assert!(r.second_moment < r.epsilon * r.epsilon);
    }

    #[test]
    fn lemmas_vacuous_on_point_mass() {
        let r = verify_moment_lemmas(&DiscreteLaw::point_mass(0.0), 4.0, &[2.5]).unwrap();
        assert!(r.vacuous && r.all_hold());
    }

    #[test]
    fn lemmas_reject_bad_grid() {
        let law = DiscreteLaw::rademacher(1.0);
        assert!(verify_moment_lemmas(&law, 2.0, &[2.0]).is_err());
        assert!(verify_moment_lemmas(&law, 4.0, &[4.0]).is_err());
        assert!(verify_moment_lemmas(&law, 4.0, &[1.5]).is_err());
    }

    #[test]
    fn bernstein_cases() {
        let a = 0.4;
        let r = check_bernstein(&DiscreteLaw::rademacher(a), a, 10).unwrap();
        assert!(r.holds);
        let r = check_bernstein(&DiscreteLaw::point_mass(0.0), 0.1, 20).unwrap();
        assert!(r.holds);
        // 20^{k-2} vs k!/2: first failure at k = 4
        let r = check_bernstein(&DiscreteLaw::three_point(10.0, 1e-4), 0.5, 8).unwrap();
        assert_eq!(r, BernsteinCheck { holds: false, first_violation: Some(4) });
        assert!(check_bernstein(&DiscreteLaw::rademacher(a), a, 21).is_err());
    }
}
