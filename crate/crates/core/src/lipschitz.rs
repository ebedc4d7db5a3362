//! Doob martingale decomposition of separately Lipschitz functionals of
//! independent coordinates.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, ReplicateRng};

/// Largest product space enumerated exactly.
pub const ENUMERATION_GUARD: usize = 10_000_000;
/// Coordinate swaps sampled per coordinate when the validity check cannot be exhaustive.
pub const SPOT_CHECK_PAIRS: usize = 10_000;

const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LipschitzError {
    #[error("product space of size {size} exceeds the enumeration guard {guard}")]
    GuardExceeded { size: f64, guard: usize },
    #[error("coordinate {coord}: {reason}")]
    InvalidLaw { coord: usize, reason: String },
    #[error("model has no coordinates")]
    NoCoordinates,
    #[error("{what} has {got} entries for {n} coordinates")]
    Dimension { what: &'static str, got: usize, n: usize },
    #[error("functional is not finite at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("value {value} is not in the support of coordinate {coord}")]
    NotInSupport { coord: usize, value: f64 },
    #[error("degenerate model: sum of E[(E[d1|eta])^2] is zero")]
    Degenerate,
    #[error("rho must be positive, got {0}")]
    InvalidRho(f64),
    #[error("sampling budget must be positive")]
    ZeroBudget,
}

/// Finite law of one coordinate `η_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateLaw {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl CoordinateLaw {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self, String> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(format!("{} values for {} probabilities", values.len(), probs.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err("invalid probability".into());
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("probabilities sum to {total}"));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(format!("duplicate value {v}"));
            }
        }
        Ok(CoordinateLaw { values, probs })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self, String> {
        let p = 1.0 / values.len() as f64;
        let probs = vec![p; values.len()];
        CoordinateLaw::new(values, probs)
    }

    pub fn rademacher() -> Self {
        CoordinateLaw {
            values: vec![-1.0, 1.0],
            probs: vec![0.5, 0.5],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().zip(&self.probs).map(|(v, p)| p * (v - m).powi(2)).sum()
    }

    fn index_of(&self, x: f64) -> Option<usize> {
        self.values.iter().position(|&v| v == x)
    }

    fn sample_index(&self, rng: &mut ReplicateRng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (j, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// `E[d(x, η')]` for an independent copy `η'`.
    fn metric_mean(&self, metric: CoordinateMetric, x: f64) -> f64 {
        self.values.iter().zip(&self.probs).map(|(&y, p)| p * metric.eval(x, y)).sum()
    }
}

/// Coordinate metric `d(x, x')`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordinateMetric {
    /// `scale · |x - x'|`
    AbsDiff {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `scale · 1[x ≠ x']`
    Indicator {
        #[serde(default = "unit")]
        scale: f64,
    },
    Zero,
}

fn unit() -> f64 {
    1.0
}

impl CoordinateMetric {
    pub fn abs_diff() -> Self {
        CoordinateMetric::AbsDiff { scale: 1.0 }
    }

    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            CoordinateMetric::AbsDiff { scale } => scale * (x - y).abs(),
            CoordinateMetric::Indicator { scale } => {
                if x == y {
                    0.0
                } else {
                    scale
                }
            }
            CoordinateMetric::Zero => 0.0,
        }
    }

    fn is_valid(self) -> bool {
        match self {
            CoordinateMetric::AbsDiff { scale } | CoordinateMetric::Indicator { scale } => {
                scale.is_finite() && scale >= 0.0
            }
            CoordinateMetric::Zero => true,
        }
    }
}

pub type FunctionalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// User-supplied functional for the Rust API.
#[derive(Clone)]
pub struct CustomFn(pub Arc<FunctionalFn>);

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomFn")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Term {
    pub weight: f64,
    pub functional: Functional,
}

/// `f: R^n → R`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    Sum,
    Weighted { weights: Vec<f64> },
    Max,
    Min,
    Scaled { factor: f64, inner: Box<Functional> },
    Combination { terms: Vec<Term> },
    #[serde(skip)]
    Custom(CustomFn),
}

impl Functional {
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Functional::Custom(CustomFn(Arc::new(f)))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Functional::Sum => x.iter().sum(),
            Functional::Weighted { weights } => weights.iter().zip(x).map(|(w, v)| w * v).sum(),
            Functional::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Functional::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
            Functional::Scaled { factor, inner } => factor * inner.eval(x),
            Functional::Combination { terms } => terms.iter().map(|t| t.weight * t.functional.eval(x)).sum(),
            Functional::Custom(f) => (f.0)(x),
        }
    }

    /// Coefficients when `f(x) = Σ w_i x_i`.
    pub fn linear_weights(&self, n: usize) -> Option<Vec<f64>> {
        match self {
            Functional::Sum => Some(vec![1.0; n]),
            Functional::Weighted { weights } => (weights.len() == n).then(|| weights.clone()),
            Functional::Max | Functional::Min => (n == 1).then(|| vec![1.0]),
            Functional::Scaled { factor, inner } => {
                inner.linear_weights(n).map(|w| w.into_iter().map(|v| factor * v).collect())
            }
            Functional::Combination { terms } => terms.iter().try_fold(vec![0.0; n], |mut acc, t| {
                let w = t.functional.linear_weights(n)?;
                acc.iter_mut().zip(w).for_each(|(a, v)| *a += t.weight * v);
                Some(acc)
            }),
            Functional::Custom(_) => None,
        }
    }

    fn check_dimension(&self, n: usize) -> Result<(), LipschitzError> {
        match self {
            Functional::Weighted { weights } if weights.len() != n => Err(LipschitzError::Dimension {
                what: "weights",
                got: weights.len(),
                n,
            }),
            Functional::Scaled { inner, .. } => inner.check_dimension(n),
            Functional::Combination { terms } => terms.iter().try_for_each(|t| t.functional.check_dimension(n)),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzModel {
    pub coords: Vec<CoordinateLaw>,
    pub functional: Functional,
    pub d1: Vec<CoordinateMetric>,
    pub d2: Vec<CoordinateMetric>,
    pub rho: f64,
}

impl LipschitzModel {
    /// A single metric is broadcast to every coordinate.
    pub fn new(
        coords: Vec<CoordinateLaw>,
        functional: Functional,
        d1: Vec<CoordinateMetric>,
        d2: Vec<CoordinateMetric>,
        rho: f64,
    ) -> Result<Self, LipschitzError> {
        let n = coords.len();
        if n == 0 {
            return Err(LipschitzError::NoCoordinates);
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(LipschitzError::InvalidRho(rho));
        }
        let broadcast = |d: Vec<CoordinateMetric>, what| match d.len() {
            1 => Ok(vec![d[0]; n]),
            len if len == n => Ok(d),
            got => Err(LipschitzError::Dimension { what, got, n }),
        };
        let d1 = broadcast(d1, "d1")?;
        let d2 = broadcast(d2, "d2")?;
        for (coord, m) in d1.iter().chain(&d2).enumerate() {
            if !m.is_valid() {
                return Err(LipschitzError::InvalidLaw {
                    coord: coord % n,
                    reason: format!("invalid metric {m:?}"),
                });
            }
        }
        for (coord, c) in coords.iter().enumerate() {
            CoordinateLaw::new(c.values.clone(), c.probs.clone())
                .map_err(|reason| LipschitzError::InvalidLaw { coord, reason })?;
        }
        functional.check_dimension(n)?;
        Ok(LipschitzModel {
            coords,
            functional,
            d1,
            d2,
            rho,
        })
    }

    /// `f = Σ η_i / √n`, Rademacher coordinates, `d1 = d2 = |x - x'| / √n`.
    pub fn rademacher_average(n: usize) -> Result<Self, LipschitzError> {
        let s = 1.0 / (n as f64).sqrt();
        let metric = CoordinateMetric::AbsDiff { scale: s };
        LipschitzModel::new(
            vec![CoordinateLaw::rademacher(); n],
            Functional::Scaled {
                factor: s,
                inner: Box::new(Functional::Sum),
            },
            vec![metric],
            vec![metric],
            1.0,
        )
    }

    /// `f = max(η_1, η_2)` with fair bits, `d1 ≡ 0`, `d2 = |x - x'|`.
    pub fn max_of_two_bits() -> Self {
        let bit = CoordinateLaw::uniform(vec![0.0, 1.0]).expect("valid law");
        LipschitzModel::new(
            vec![bit.clone(), bit],
            Functional::Max,
            vec![CoordinateMetric::Zero],
            vec![CoordinateMetric::abs_diff()],
            1.0,
        )
        .expect("valid model")
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    /// Number of points in the product support.
    pub fn space_size(&self) -> f64 {
        self.coords.iter().map(|c| c.len() as f64).product()
    }

    fn check_guard(&self) -> Result<usize, LipschitzError> {
        let size = self.space_size();
        if size > ENUMERATION_GUARD as f64 {
            return Err(LipschitzError::GuardExceeded {
                size,
                guard: ENUMERATION_GUARD,
            });
        }
        Ok(size as usize)
    }

    fn linear(&self) -> Option<Vec<f64>> {
        self.functional.linear_weights(self.n())
    }

    fn realization_indices(&self, realization: &[f64]) -> Result<Vec<usize>, LipschitzError> {
        if realization.len() != self.n() {
            return Err(LipschitzError::Dimension {
                what: "realization",
                got: realization.len(),
                n: self.n(),
            });
        }
        realization
            .iter()
            .zip(&self.coords)
            .enumerate()
            .map(|(coord, (&value, law))| law.index_of(value).ok_or(LipschitzError::NotInSupport { coord, value }))
            .collect()
    }

    fn decode(&self, mut idx: usize, out: &mut [f64]) {
        for (slot, law) in out.iter_mut().zip(&self.coords).rev() {
            let s = law.len();
            *slot = law.values[idx % s];
            idx /= s;
        }
    }
}

/// Tables of `g_k = E[f | η_1..η_k]` over every prefix, with prefix
/// probabilities. Prefixes are mixed-radix indices, first coordinate most
/// significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoobTables {
    pub sizes: Vec<usize>,
    /// `levels[k][prefix] = g_k`
    pub levels: Vec<Vec<f64>>,
    /// `probs[k][prefix] = P(η_1..η_k = prefix)`
    pub probs: Vec<Vec<f64>>,
}

/// Exact conditional-expectation tables by enumeration of the product space.
pub fn doob_tables(model: &LipschitzModel) -> Result<DoobTables, LipschitzError> {
    let size = model.check_guard()?;
    let n = model.n();
    let top: Vec<f64> = (0..size)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map_init(
            || vec![0.0; n],
            |buf, idx| {
                model.decode(idx, buf);
                model.functional.eval(buf)
            },
        )
        .collect();
    if let Some(bad) = top.iter().position(|v| !v.is_finite()) {
        let mut x = vec![0.0; n];
        model.decode(bad, &mut x);
        return Err(LipschitzError::NonFinite(x));
    }
    let sizes: Vec<usize> = model.coords.iter().map(|c| c.len()).collect();
    let mut levels = vec![top];
    for k in (0..n).rev() {
        let law = &model.coords[k];
        let next = levels.last().expect("non-empty");
        let s = sizes[k];
        let level: Vec<f64> = next
            .par_chunks(s)
            .with_min_len(CHUNK / s.max(1))
            .map(|block| block.iter().zip(&law.probs).map(|(g, p)| g * p).sum())
            .collect();
        levels.push(level);
    }
    levels.reverse();
    let mut probs = vec![vec![1.0]];
    for (k, law) in model.coords.iter().enumerate() {
        let prev = &probs[k];
        let level: Vec<f64> = prev.iter().flat_map(|&q| law.probs.iter().map(move |p| q * p)).collect();
        probs.push(level);
    }
    Ok(DoobTables { sizes, levels, probs })
}

impl DoobTables {
    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    /// `E f`
    pub fn mean(&self) -> f64 {
        self.levels[0][0]
    }

    /// `ξ_k` at a prefix of length `k` (1-based `k`).
    pub fn increment(&self, k: usize, prefix: usize) -> f64 {
        self.levels[k][prefix] - self.levels[k - 1][prefix / self.sizes[k - 1]]
    }

    /// `Var f = E (f - E f)²`
    pub fn variance(&self) -> f64 {
        let n = self.n();
        let mean = self.mean();
        self.levels[n]
            .par_iter()
            .zip(self.probs[n].par_iter())
            .map(|(g, p)| p * (g - mean).powi(2))
            .sum()
    }

    /// `E ξ_k²` for `k = 1..n`.
    pub fn increment_second_moments(&self) -> Vec<f64> {
        (1..=self.n())
            .map(|k| {
                (0..self.levels[k].len())
                    .map(|j| self.probs[k][j] * self.increment(k, j).powi(2))
                    .sum()
            })
            .collect()
    }

    /// `max |E[ξ_k | η_1..η_{k-1}]|` over steps and positive-probability histories.
    pub fn martingale_defect(&self, model: &LipschitzModel) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..=self.n() {
            let s = self.sizes[k - 1];
            for h in 0..self.levels[k - 1].len() {
                if self.probs[k - 1][h] == 0.0 {
                    continue;
                }
                let m: f64 = (0..s)
                    .map(|j| model.coords[k - 1].probs[j] * self.increment(k, h * s + j))
                    .sum();
                worst = worst.max(m.abs());
            }
        }
        worst
    }

    /// `max |Σ_k ξ_k - (f - E f)|` over every realization.
    pub fn telescoping_defect(&self, model: &LipschitzModel) -> f64 {
        let n = self.n();
        let mean = self.mean();
        (0..self.levels[n].len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map_init(
                || vec![0.0; n],
                |buf, idx| {
                    model.decode(idx, buf);
                    let f = model.functional.eval(buf);
                    let mut prefix = idx;
                    let mut sum = 0.0;
                    for k in (1..=n).rev() {
                        sum += self.increment(k, prefix);
                        prefix /= self.sizes[k - 1];
                    }
                    (sum - (f - mean)).abs()
                },
            )
            .reduce(|| 0.0, f64::max)
    }

    /// `max_{j<k} |E[ξ_j ξ_k]|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for k in 2..=n {
            for j in 1..k {
                let shrink: usize = self.sizes[j..k].iter().product();
                let e: f64 = (0..self.levels[k].len())
                    .map(|h| self.probs[k][h] * self.increment(k, h) * self.increment(j, h / shrink))
                    .sum();
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    fn decompose_indices(&self, indices: &[usize]) -> Vec<f64> {
        let mut prefix = 0;
        indices
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                prefix = prefix * self.sizes[k] + j;
                self.increment(k + 1, prefix)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoobDecomposition {
    /// `ξ_1..ξ_n`
    pub increments: Vec<f64>,
    /// `X_n = f - E f`
    pub centred_value: f64,
    pub mean: f64,
    /// Present for sampled decompositions.
    pub std_errors: Option<Vec<f64>>,
}

/// `ξ_k = g_k - g_{k-1}` along `realization`, exact.
pub fn doob_decompose(model: &LipschitzModel, realization: &[f64]) -> Result<DoobDecomposition, LipschitzError> {
    let indices = model.realization_indices(realization)?;
    let f = model.functional.eval(realization);
    if !f.is_finite() {
        return Err(LipschitzError::NonFinite(realization.to_vec()));
    }
    if let Some(w) = model.linear() {
        let mean: f64 = w.iter().zip(&model.coords).map(|(w, c)| w * c.mean()).sum();
        let increments = w
            .iter()
            .zip(&model.coords)
            .zip(realization)
            .map(|((w, c), x)| w * (x - c.mean()))
            .collect();
        return Ok(DoobDecomposition {
            increments,
            centred_value: f - mean,
            mean,
            std_errors: None,
        });
    }
    let tables = doob_tables(model)?;
    Ok(DoobDecomposition {
        increments: tables.decompose_indices(&indices),
        centred_value: f - tables.mean(),
        mean: tables.mean(),
        std_errors: None,
    })
}

/// Nested Monte Carlo decomposition for models beyond the enumeration guard:
/// each `g_k` is a mean over `budget` random completions.
pub fn doob_decompose_sampled(
    model: &LipschitzModel,
    realization: &[f64],
    budget: usize,
    seed: u64,
) -> Result<DoobDecomposition, LipschitzError> {
    if budget == 0 {
        return Err(LipschitzError::ZeroBudget);
    }
    model.realization_indices(realization)?;
    let n = model.n();
    let estimates: Vec<(f64, f64)> = (0..=n)
        .into_par_iter()
        .map(|k| {
            if k == n {
                return (model.functional.eval(realization), 0.0);
            }
            let mut rng = ReplicateRng::new(derive_seed(seed, 0x6b), k as u64);
            let mut buf = realization.to_vec();
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..budget {
                for (slot, law) in buf[k..].iter_mut().zip(&model.coords[k..]) {
                    *slot = law.values[law.sample_index(&mut rng)];
                }
                let v = model.functional.eval(&buf);
                sum += v;
                sum_sq += v * v;
            }
            let m = sum / budget as f64;
            let var = (sum_sq / budget as f64 - m * m).max(0.0);
            (m, (var / budget as f64).sqrt())
        })
        .collect();
    if let Some(k) = estimates.iter().position(|e| !e.0.is_finite()) {
        return Err(LipschitzError::NonFinite(realization[..k].to_vec()));
    }
    let increments = (1..=n).map(|k| estimates[k].0 - estimates[k - 1].0).collect();
    let std_errors = (1..=n).map(|k| estimates[k].1.hypot(estimates[k - 1].1)).collect();
    Ok(DoobDecomposition {
        increments,
        centred_value: estimates[n].0 - estimates[0].0,
        mean: estimates[0].0,
        std_errors: Some(std_errors),
    })
}

/// Per-coordinate quantities built from `A_i(x) = E[d2_i(x, η'_i)]` and
/// `B_i(x) = E[d1_i(x, η'_i)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMoments {
    /// `E[A_i^ρ]`
    pub upper_rho: Vec<f64>,
    /// `sup_x A_i(x)^ρ` over the support
    pub upper_rho_sup: Vec<f64>,
    /// `E[A_i²]`
    pub upper_sq: Vec<f64>,
    /// `E[B_i²]`
    pub lower_sq: Vec<f64>,
}

pub fn metric_moments(model: &LipschitzModel) -> MetricMoments {
    let rho = model.rho;
    let mut out = MetricMoments {
        upper_rho: Vec::new(),
        upper_rho_sup: Vec::new(),
        upper_sq: Vec::new(),
        lower_sq: Vec::new(),
    };
    for (i, law) in model.coords.iter().enumerate() {
        let (mut ur, mut us, mut sup, mut ls) = (0.0, 0.0, 0.0f64, 0.0);
        for (&x, &p) in law.values.iter().zip(&law.probs) {
            let a = law.metric_mean(model.d2[i], x);
            let b = law.metric_mean(model.d1[i], x);
            ur += p * a.powf(rho);
            us += p * a * a;
            ls += p * b * b;
            if p > 0.0 {
                sup = sup.max(a.powf(rho));
            }
        }
        out.upper_rho.push(ur);
        out.upper_rho_sup.push(sup);
        out.upper_sq.push(us);
        out.lower_sq.push(ls);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonDelta {
    pub epsilon_n: f64,
    pub delta_n: f64,
}

/// `ε_n = max_i (E[A_i^ρ])^{1/ρ} / sqrt(Σ_i E[B_i²])`,
/// `δ_n = |Σ_i E[A_i²] / Σ_i E[B_i²] - 1|`.
pub fn epsilon_delta_n(model: &LipschitzModel) -> Result<EpsilonDelta, LipschitzError> {
    let m = metric_moments(model);
    let lower: f64 = m.lower_sq.iter().sum();
    if lower <= 0.0 {
        return Err(LipschitzError::Degenerate);
    }
    let upper: f64 = m.upper_sq.iter().sum();
    let numerator = m
        .upper_rho
        .iter()
        .map(|v| v.powf(1.0 / model.rho))
        .fold(0.0, f64::max);
    let identical = model.d1 == model.d2;
    Ok(EpsilonDelta {
        epsilon_n: numerator / lower.sqrt(),
        delta_n: if identical { 0.0 } else { (upper / lower - 1.0).abs() },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower: f64,
    pub var: f64,
    pub upper: f64,
    pub upper_holds: bool,
    /// Diagnostic only.
    pub lower_holds: bool,
}

/// `Σ E[B_i²]  ≤?  Var X_n  ≤  Σ E[A_i²]`.
pub fn variance_sandwich(model: &LipschitzModel) -> Result<Sandwich, LipschitzError> {
    let m = metric_moments(model);
    let var = match model.linear() {
        Some(w) => w.iter().zip(&model.coords).map(|(w, c)| w * w * c.variance()).sum(),
        None => doob_tables(model)?.variance(),
    };
    let lower: f64 = m.lower_sq.iter().sum();
    let upper: f64 = m.upper_sq.iter().sum();
    Ok(Sandwich {
        lower,
        var,
        upper,
        upper_holds: var <= upper + 1e-12,
        lower_holds: lower <= var + 1e-12,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1StepCheck {
    pub step: usize,
    /// `max E[|ξ|^{2+ρ}|F] / E[ξ²|F]` over histories with `E[ξ²|F] > 0`.
    pub max_ratio: f64,
    pub histories: usize,
    /// Histories where `ξ_step ≡ 0` (vacuous `0/0`).
    pub vacuous: usize,
    /// `E[A_i^ρ]`
    pub mean_constant: f64,
    /// `sup A_i^ρ`
    pub sup_constant: f64,
    pub mean_constant_holds: bool,
    pub sup_constant_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1LipschitzReport {
    pub rho: f64,
    pub steps: Vec<A1StepCheck>,
    /// `max_i (E[A_i^ρ])^{1/ρ}`
    pub epsilon_mean: f64,
    /// `max_i sup A_i`
    pub epsilon_sup: f64,
}

impl A1LipschitzReport {
    /// Transfer with the pointwise constant; always valid when `d2` bounds `f`.
    pub fn holds(&self) -> bool {
        self.steps.iter().all(|s| s.sup_constant_holds)
    }

    /// Transfer with the averaged constant; a diagnostic.
    pub fn mean_transfer_holds(&self) -> bool {
        self.steps.iter().all(|s| s.mean_constant_holds)
    }
}

/// Per-step conditional `(2+ρ)`-moment ratios of the Doob increments against
/// the constants `E[A_i^ρ]` and `sup A_i^ρ`.
pub fn verify_a1_lipschitz(model: &LipschitzModel) -> Result<A1LipschitzReport, LipschitzError> {
    let rho = model.rho;
    let moments = metric_moments(model);
    let ratios: Vec<(f64, usize, usize)> = match model.linear() {
        Some(w) => w
            .iter()
            .zip(&model.coords)
            .map(|(w, c)| {
                let mu = c.mean();
                let (m2, mh) = c.values.iter().zip(&c.probs).fold((0.0, 0.0), |(a, b), (&x, &p)| {
                    let v = (w * (x - mu)).abs();
                    (a + p * v * v, b + p * v.powf(2.0 + rho))
                });
                if m2 == 0.0 {
                    (0.0, 1, 1)
                } else {
                    (mh / m2, 1, 0)
                }
            })
            .collect(),
        None => {
            let tables = doob_tables(model)?;
            (1..=model.n())
                .map(|k| {
                    let s = tables.sizes[k - 1];
                    let probs = &model.coords[k - 1].probs;
                    let (mut worst, mut histories, mut vacuous) = (0.0f64, 0, 0);
                    for h in 0..tables.levels[k - 1].len() {
                        if tables.probs[k - 1][h] == 0.0 {
                            continue;
                        }
                        histories += 1;
                        let (m2, mh) = (0..s).fold((0.0, 0.0), |(a, b), j| {
                            let v = tables.increment(k, h * s + j).abs();
                            (a + probs[j] * v * v, b + probs[j] * v.powf(2.0 + rho))
                        });
                        if m2 == 0.0 {
                            vacuous += 1;
                        } else {
                            worst = worst.max(mh / m2);
                        }
                    }
                    (worst, histories, vacuous)
                })
                .collect()
        }
    };
    let steps = ratios
        .into_iter()
        .enumerate()
        .map(|(i, (max_ratio, histories, vacuous))| {
            let mean_constant = moments.upper_rho[i];
            let sup_constant = moments.upper_rho_sup[i];
            A1StepCheck {
                step: i + 1,
                max_ratio,
                histories,
                vacuous,
                mean_constant,
                sup_constant,
                mean_constant_holds: max_ratio <= mean_constant * (1.0 + 1e-12) + 1e-300,
                sup_constant_holds: max_ratio <= sup_constant * (1.0 + 1e-12) + 1e-300,
            }
        })
        .collect();
    Ok(A1LipschitzReport {
        rho,
        steps,
        epsilon_mean: moments.upper_rho.iter().map(|v| v.powf(1.0 / rho)).fold(0.0, f64::max),
        epsilon_sup: moments.upper_rho_sup.iter().map(|v| v.powf(1.0 / rho)).fold(0.0, f64::max),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzViolation {
    pub coord: usize,
    pub x: f64,
    pub x_alt: f64,
    pub delta_f: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub exhaustive: bool,
    pub pairs_checked: usize,
    /// First violations found, at most 16.
    pub violations: Vec<LipschitzViolation>,
}

impl ValidityReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `d1_i(x, x') ≤ |f(..x..) - f(..x'..)| ≤ d2_i(x, x')` over coordinate
/// swaps: all of them under the guard, else `SPOT_CHECK_PAIRS` random swaps per
/// coordinate.
pub fn check_separately_lipschitz(model: &LipschitzModel, seed: u64) -> ValidityReport {
    let n = model.n();
    let size = model.space_size();
    let widest = model.coords.iter().map(|c| c.len()).max().unwrap_or(1) as f64;
    let exhaustive = size * widest <= ENUMERATION_GUARD as f64;
    let mut violations = Vec::new();
    let mut pairs = 0;
    let mut buf = vec![0.0; n];
    let check = |buf: &mut [f64], coord: usize, alt: f64, violations: &mut Vec<LipschitzViolation>| {
        let x = buf[coord];
        let f0 = model.functional.eval(buf);
        buf[coord] = alt;
        let f1 = model.functional.eval(buf);
        buf[coord] = x;
        let diff = (f0 - f1).abs();
        let (d1, d2) = (model.d1[coord].eval(x, alt), model.d2[coord].eval(x, alt));
        let tol = 1e-12 * (1.0 + diff);
        if (d1 > diff + tol || diff > d2 + tol) && violations.len() < 16 {
            violations.push(LipschitzViolation {
                coord,
                x,
                x_alt: alt,
                delta_f: diff,
                d1,
                d2,
            });
        }
    };
    if exhaustive {
        for idx in 0..size as usize {
            model.decode(idx, &mut buf);
            for coord in 0..n {
                for &alt in &model.coords[coord].values {
                    check(&mut buf, coord, alt, &mut violations);
                    pairs += 1;
                }
            }
        }
    } else {
        for coord in 0..n {
            let mut rng = ReplicateRng::new(derive_seed(seed, 0x11b), coord as u64);
            for _ in 0..SPOT_CHECK_PAIRS {
                for (slot, law) in buf.iter_mut().zip(&model.coords) {
                    *slot = law.values[law.sample_index(&mut rng)];
                }
                let law = &model.coords[coord];
                let alt = law.values[law.sample_index(&mut rng)];
                check(&mut buf, coord, alt, &mut violations);
                pairs += 1;
            }
        }
    }
    ValidityReport {
        exhaustive,
        pairs_checked: pairs,
        violations,
    }
}

/// Exact law of `X_n = f - E f` as sorted `(value, probability)` pairs. Linear
/// functionals are convolved coordinate by coordinate; others are enumerated.
pub fn terminal_law(model: &LipschitzModel) -> Result<(Vec<f64>, Vec<f64>), LipschitzError> {
    let key = |v: f64| (v * 1e12).round() as i64;
    let mut law: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    match model.linear() {
        Some(w) => {
            law.insert(0, (0.0, 1.0));
            for (w, c) in w.iter().zip(&model.coords) {
                let mu = c.mean();
                let mut next: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
                for &(v, p) in law.values() {
                    for (&x, &q) in c.values.iter().zip(&c.probs) {
                        let s = v + w * (x - mu);
                        next.entry(key(s)).or_insert((s, 0.0)).1 += p * q;
                    }
                }
                law = next;
            }
        }
        None => {
            let tables = doob_tables(model)?;
            let n = tables.n();
            let mean = tables.mean();
            for (g, p) in tables.levels[n].iter().zip(&tables.probs[n]) {
                let s = g - mean;
                law.entry(key(s)).or_insert((s, 0.0)).1 += p;
            }
        }
    }
    Ok(law.into_values().unzip())
}
