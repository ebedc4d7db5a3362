//! Named kernel families addressable from experiment configs.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::law::{DiscreteLaw, SampledLaw, StepDistribution};
use super::{ConditionalKernel, Draw, History, HistoryNeeds, KernelError};
use crate::rng::ReplicateRng;

/// Inner Monte Carlo budget for moment queries on sampled laws.
const SAMPLED_BUDGET: usize = 200_000;

/// `|X_{k-1}|` below this counts as zero for sign-switching kernels.
const ZERO_SUM_TOLERANCE: f64 = 1e-12;

/// Base law of an i.i.d. kernel before centring and scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseDist {
    Rademacher,
    /// Uniform on [-1, 1]; sampled mode.
    Uniform,
    /// Standard normal; sampled mode.
    Gaussian,
    /// Tabulated finite law; exact mode.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

/// Registry name plus parameters, as written in configs:
/// `{"name": "variance_drift", "params": {"d": 0.2, "n": 64}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `ξ_i = ±1/√n`.
    IidRademacher { n: usize },
    /// `ξ_i = (Y_i - μ)/(σ√n)` for i.i.d. `Y_i ~ dist`.
    IidScaled { dist: BaseDist, n: usize },
    /// `ξ_i = ±a`.
    TwoPoint { a: f64, n: usize },
    /// `ξ_i ∈ {-b, 0, +b}` with jump probability `q`; `q` defaults to `1/(n b²)`
    /// so that `<X>_n = 1`.
    ThreePoint {
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
        n: usize,
    },
    /// Conditional standard deviation `√((1+d)/n)` when `X_{k-1} ≥ 0`, else
    /// `√((1-d)/n)`.
    VarianceDrift { d: f64, n: usize },
}

impl KernelSpec {
    pub fn steps(&self) -> usize {
        match *self {
            KernelSpec::IidRademacher { n }
            | KernelSpec::IidScaled { n, .. }
            | KernelSpec::TwoPoint { n, .. }
            | KernelSpec::ThreePoint { n, .. }
            | KernelSpec::VarianceDrift { n, .. } => n,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::IidRademacher { .. } => "iid_rademacher",
            KernelSpec::IidScaled { .. } => "iid_scaled",
            KernelSpec::TwoPoint { .. } => "two_point",
            KernelSpec::ThreePoint { .. } => "three_point",
            KernelSpec::VarianceDrift { .. } => "variance_drift",
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Fixed {
        law: StepDistribution,
        m2: f64,
        fast: FastSampler,
    },
    Drift {
        high: DiscreteLaw,
        low: DiscreteLaw,
        high_m2: f64,
        low_m2: f64,
    },
}

/// Precomputed form of `StepDistribution::sample` with identical randomness use.
#[derive(Clone, Debug)]
enum FastSampler {
    Coin([f64; 2]),
    Table {
        cumulative: Vec<f64>,
        values: Vec<f64>,
        fallback: f64,
    },
    Law,
}

impl FastSampler {
    fn new(law: &StepDistribution) -> Self {
        let StepDistribution::Exact(law) = law else {
            return FastSampler::Law;
        };
        match law.atoms() {
            [lo, hi] if lo.prob == 0.5 && hi.prob == 0.5 => FastSampler::Coin([lo.value, hi.value]),
            atoms => {
                let mut acc = 0.0;
                FastSampler::Table {
                    cumulative: atoms
                        .iter()
                        .map(|a| {
                            acc += a.prob;
                            acc
                        })
                        .collect(),
                    values: atoms.iter().map(|a| a.value).collect(),
                    fallback: atoms.iter().rev().find(|a| a.prob > 0.0).map_or(0.0, |a| a.value),
                }
            }
        }
    }

    #[inline(always)]
    fn sample(&self, law: &StepDistribution, rng: &mut ReplicateRng) -> f64 {
        match self {
            FastSampler::Coin(values) => values[rng.coin() as usize],
            FastSampler::Table {
                cumulative,
                values,
                fallback,
            } => {
                let u = rng.uniform();
                for (c, v) in cumulative.iter().zip(values) {
                    if u < *c {
                        return *v;
                    }
                }
                *fallback
            }
            FastSampler::Law => law.sample(rng),
        }
    }
}

#[inline(always)]
fn coin_value(law: &DiscreteLaw, rng: &mut ReplicateRng) -> f64 {
    let a = law.atoms();
    [a[0].value, a[1].value][rng.coin() as usize]
}

/// A kernel built from a [`KernelSpec`]. All laws are validated at construction.
#[derive(Clone, Debug)]
pub struct RegistryKernel {
    spec: KernelSpec,
    shape: Shape,
}

fn param(ok: bool, msg: impl FnOnce() -> String) -> Result<(), KernelError> {
    if ok {
        Ok(())
    } else {
        Err(KernelError::Parameter(msg()))
    }
}

fn fixed(law: DiscreteLaw) -> Result<Shape, KernelError> {
    law.validate()
        .map_err(|e| KernelError::Parameter(e.to_string()))?;
    let m2 = law.second_moment();
    let law = StepDistribution::Exact(law);
    Ok(Shape::Fixed {
        fast: FastSampler::new(&law),
        law,
        m2,
    })
}

impl RegistryKernel {
    pub fn from_spec(spec: &KernelSpec) -> Result<Self, KernelError> {
        let n = spec.steps();
        param(n >= 1, || "n must be at least 1".into())?;
        let nf = n as f64;
        let shape = match spec {
            KernelSpec::IidRademacher { .. } => fixed(DiscreteLaw::rademacher(1.0 / nf.sqrt()))?,
            KernelSpec::TwoPoint { a, .. } => {
                param(a.is_finite() && *a > 0.0, || format!("two_point a={a} must be positive"))?;
                fixed(DiscreteLaw::rademacher(*a))?
            }
            KernelSpec::ThreePoint { b, q, .. } => {
                param(b.is_finite() && *b > 0.0, || format!("three_point b={b} must be positive"))?;
                let q = q.unwrap_or(1.0 / (nf * b * b));
                param(q > 0.0 && q <= 1.0, || {
                    format!("three_point jump probability q={q} outside (0, 1]")
                })?;
                fixed(DiscreteLaw::three_point(*b, q))?
            }
            KernelSpec::VarianceDrift { d, .. } => {
                param((0.0..1.0).contains(d), || format!("variance_drift d={d} outside [0, 1)"))?;
                let high = DiscreteLaw::rademacher(((1.0 + d) / nf).sqrt());
                let low = DiscreteLaw::rademacher(((1.0 - d) / nf).sqrt());
                Shape::Drift {
                    high_m2: high.second_moment(),
                    low_m2: low.second_moment(),
                    high,
                    low,
                }
            }
            KernelSpec::IidScaled { dist, .. } => match dist {
                BaseDist::Rademacher => fixed(DiscreteLaw::rademacher(1.0 / nf.sqrt()))?,
                BaseDist::Discrete { values, probs } => {
                    param(values.len() == probs.len() && !values.is_empty(), || {
                        "discrete base law needs matching non-empty values/probs".into()
                    })?;
                    let raw = DiscreteLaw::unchecked(
                        values
                            .iter()
                            .zip(probs)
                            .map(|(&v, &p)| super::Atom::new(v, p))
                            .collect(),
                    );
                    raw.validate_probabilities()
                        .map_err(|e| KernelError::Parameter(e.to_string()))?;
                    let mu = raw.mean();
                    let var: f64 = raw
                        .atoms()
                        .iter()
                        .map(|a| a.prob * (a.value - mu).powi(2))
                        .sum();
                    param(var > 0.0, || "discrete base law is degenerate".into())?;
                    let scale = 1.0 / (var * nf).sqrt();
                    fixed(DiscreteLaw::unchecked(
                        raw.atoms()
                            .iter()
                            .map(|a| super::Atom::new((a.value - mu) * scale, a.prob))
                            .collect(),
                    ))?
                }
                BaseDist::Uniform => {
                    // uniform on [-1,1] has variance 1/3
                    let scale = (3.0 / nf).sqrt();
                    Shape::Fixed {
                        law: StepDistribution::Sampled(SampledLaw::new(
                            "uniform",
                            1.0 / nf,
                            SAMPLED_BUDGET,
                            move |rng| scale * (2.0 * rng.uniform() - 1.0),
                        )),
                        m2: 1.0 / nf,
                        fast: FastSampler::Law,
                    }
                }
                BaseDist::Gaussian => {
                    let scale = 1.0 / nf.sqrt();
                    Shape::Fixed {
                        law: StepDistribution::Sampled(SampledLaw::new(
                            "gaussian",
                            1.0 / nf,
                            SAMPLED_BUDGET,
                            move |rng| scale * rng.standard_normal(),
                        )),
                        m2: 1.0 / nf,
                        fast: FastSampler::Law,
                    }
                }
            },
        };
        Ok(Self {
            spec: spec.clone(),
            shape,
        })
    }

    pub fn iid_rademacher(n: usize) -> Result<Self, KernelError> {
        Self::from_spec(&KernelSpec::IidRademacher { n })
    }

    pub fn two_point(a: f64, n: usize) -> Result<Self, KernelError> {
        Self::from_spec(&KernelSpec::TwoPoint { a, n })
    }

    pub fn three_point(b: f64, q: Option<f64>, n: usize) -> Result<Self, KernelError> {
        Self::from_spec(&KernelSpec::ThreePoint { b, q, n })
    }

    pub fn variance_drift(d: f64, n: usize) -> Result<Self, KernelError> {
        Self::from_spec(&KernelSpec::VarianceDrift { d, n })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    #[inline]
    fn drift_is_high(history: &History<'_>) -> bool {
        history.sum >= -ZERO_SUM_TOLERANCE
    }
}

impl fmt::Display for RegistryKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.spec {
            KernelSpec::IidRademacher { n } => write!(f, "iid_rademacher(n={n})"),
            KernelSpec::IidScaled { dist, n } => {
                let d = match dist {
                    BaseDist::Rademacher => "rademacher",
                    BaseDist::Uniform => "uniform",
                    BaseDist::Gaussian => "gaussian",
                    BaseDist::Discrete { .. } => "discrete",
                };
                write!(f, "iid_scaled({d}, n={n})")
            }
            KernelSpec::TwoPoint { a, n } => write!(f, "two_point(a={a}, n={n})"),
            KernelSpec::ThreePoint { b, q, n } => match q {
                Some(q) => write!(f, "three_point(b={b}, q={q}, n={n})"),
                None => write!(f, "three_point(b={b}, n={n})"),
            },
            KernelSpec::VarianceDrift { d, n } => write!(f, "variance_drift(d={d}, n={n})"),
        }
    }
}

impl ConditionalKernel for RegistryKernel {
    fn steps(&self) -> usize {
        self.spec.steps()
    }

    fn label(&self) -> String {
        self.to_string()
    }

    fn law(&self, _step: usize, history: &History<'_>) -> StepDistribution {
        match &self.shape {
            Shape::Fixed { law, .. } => law.clone(),
            Shape::Drift { high, low, .. } => {
                if Self::drift_is_high(history) {
                    StepDistribution::Exact(high.clone())
                } else {
                    StepDistribution::Exact(low.clone())
                }
            }
        }
    }

    fn history_needs(&self) -> HistoryNeeds {
        match self.shape {
            Shape::Fixed { .. } => HistoryNeeds::None,
            Shape::Drift { .. } => HistoryNeeds::Summary,
        }
    }

    #[inline(always)]
    fn draw(&self, _step: usize, history: &History<'_>, rng: &mut ReplicateRng) -> Result<Draw, KernelError> {
        Ok(match &self.shape {
            Shape::Fixed { law, m2, fast } => Draw {
                value: fast.sample(law, rng),
                second_moment: *m2,
            },
            Shape::Drift {
                high,
                low,
                high_m2,
                low_m2,
            } => {
                if Self::drift_is_high(history) {
                    Draw {
                        value: coin_value(high, rng),
                        second_moment: *high_m2,
                    }
                } else {
                    Draw {
                        value: coin_value(low, rng),
                        second_moment: *low_m2,
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_shape() {
        let spec: KernelSpec =
            serde_json::from_str(r#"{"name":"variance_drift","params":{"d":0.2,"n":64}}"#).unwrap();
        assert_eq!(spec, KernelSpec::VarianceDrift { d: 0.2, n: 64 });
        let spec: KernelSpec =
            serde_json::from_str(r#"{"name":"three_point","params":{"b":0.3,"n":100}}"#).unwrap();
        let k = RegistryKernel::from_spec(&spec).unwrap();
        let m2 = k.law(1, &History::START).second_moment();
        assert!((m2 - 0.01).abs() < 1e-15);
        let spec: KernelSpec = serde_json::from_str(
            r#"{"name":"iid_scaled","params":{"dist":{"kind":"discrete","values":[0,1,5],"probs":[0.5,0.3,0.2]},"n":10}}"#,
        )
        .unwrap();
        let k = RegistryKernel::from_spec(&spec).unwrap();
        let StepDistribution::Exact(law) = k.law(1, &History::START) else {
            panic!("discrete base should be exact")
        };
        assert!(law.mean().abs() < 1e-15);
        assert!((law.second_moment() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RegistryKernel::iid_rademacher(0).is_err());
        assert!(RegistryKernel::three_point(0.01, None, 10).is_err());
        assert!(RegistryKernel::variance_drift(1.5, 10).is_err());
        assert!(RegistryKernel::two_point(-1.0, 10).is_err());
    }

    #[test]
    fn drift_switches_on_sign() {
        let k = RegistryKernel::variance_drift(0.2, 10).unwrap();
        let pos = History { increments: &[], sum: 0.3, variance: 0.1 };
        let neg = History { increments: &[], sum: -0.3, variance: 0.1 };
        assert!((k.law(2, &pos).second_moment() - 0.12).abs() < 1e-15);
        assert!((k.law(2, &neg).second_moment() - 0.08).abs() < 1e-15);
        assert!((k.law(1, &History::START).second_moment() - 0.12).abs() < 1e-15);
    }

    #[test]
    fn fast_draw_matches_law_sampling() {
        let kernels = [
            RegistryKernel::iid_rademacher(16).unwrap(),
            RegistryKernel::three_point(0.5, None, 16).unwrap(),
            RegistryKernel::variance_drift(0.3, 16).unwrap(),
            RegistryKernel::from_spec(&KernelSpec::IidScaled {
                dist: BaseDist::Discrete {
                    values: vec![0.0, 1.0, 5.0],
                    probs: vec![0.5, 0.3, 0.2],
                },
                n: 16,
            })
            .unwrap(),
        ];
        for k in &kernels {
            let mut a = ReplicateRng::new(9, 4);
            let mut b = ReplicateRng::new(9, 4);
            let mut sum = 0.0;
            for step in (1..=16).cycle().take(4000) {
                let h = History { increments: &[], sum, variance: 0.0 };
                let fast = k.draw(step, &h, &mut a).unwrap();
                let law = k.law(step, &h);
                let slow = law.sample(&mut b);
                assert_eq!(fast.value, slow);
                assert_eq!(fast.second_moment, law.second_moment());
                sum += fast.value;
            }
        }
    }
}
