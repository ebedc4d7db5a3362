//! Constant-free Berry-Esseen rate functionals and the smoothing inequality.
//!
//! Logarithms are natural throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{exact_kolmogorov_discrete, DistanceError};

pub const LOG_CONVENTION: &str = "natural";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("{id} needs parameter `{param}`")]
    MissingParameter { id: BoundId, param: Param },
    #[error("{id}: epsilon = {epsilon} lies outside (0, 1/2]")]
    EpsilonOutOfRange { id: BoundId, epsilon: f64 },
    #[error("{id}: parameter `{param}` = {value} is invalid")]
    InvalidParameter { id: BoundId, param: Param, value: f64 },
    #[error("rho must be positive, got {0}")]
    NonPositiveRho(f64),
    #[error("p must be at least 1, got {0}")]
    PBelowOne(f64),
    #[error("RENZ is only defined for rho in (0, 1], got {0}")]
    RenzRho(f64),
    #[error("joint law: {0}")]
    JointLaw(String),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundId {
    T1,
    C1,
    T2,
    C2,
    Hb,
    BoltA,
    BoltB,
    Renz,
    Eo,
    Mourrat,
}

impl BoundId {
    pub const ALL: [BoundId; 10] = [
        BoundId::T1,
        BoundId::C1,
        BoundId::T2,
        BoundId::C2,
        BoundId::Hb,
        BoundId::BoltA,
        BoundId::BoltB,
        BoundId::Renz,
        BoundId::Eo,
        BoundId::Mourrat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundId::T1 => "T1",
            BoundId::C1 => "C1",
            BoundId::T2 => "T2",
            BoundId::C2 => "C2",
            BoundId::Hb => "HB",
            BoundId::BoltA => "BOLT_A",
            BoundId::BoltB => "BOLT_B",
            BoundId::Renz => "RENZ",
            BoundId::Eo => "EO",
            BoundId::Mourrat => "MOURRAT",
        }
    }

    /// Exactly the parameters the functional consumes.
    pub fn params(self) -> &'static [Param] {
        use Param::*;
        match self {
            BoundId::T1 => &[Epsilon, Delta, Rho],
            BoundId::C1 => &[Epsilon, Rho],
            BoundId::T2 => &[Epsilon, Rho, P, VarDevMoment, MaxIncMoment],
            BoundId::C2 => &[Epsilon, P, VarDevMoment],
            BoundId::Hb => &[P, VarDevMoment, SumIncMoment],
            BoundId::BoltA => &[Epsilon, N],
            BoundId::BoltB => &[Epsilon, N, VarDevL1, VarDevMax],
            BoundId::Renz => &[Rho, N],
            BoundId::Eo => &[Epsilon, N, VarDevMax],
            BoundId::Mourrat => &[Epsilon, N, P, VarDevMoment],
        }
    }

    fn enforces_epsilon_range(self) -> bool {
        matches!(self, BoundId::T1 | BoundId::C1 | BoundId::T2 | BoundId::C2)
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BoundId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoundId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown bound id `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Epsilon,
    Delta,
    Rho,
    P,
    N,
    /// `E|<X>_n - 1|^p`
    VarDevMoment,
    /// `Σ E|ξ_i|^{2p}`
    SumIncMoment,
    /// `E max_i |ξ_i|^{2p}`
    MaxIncMoment,
    /// `‖<X>_n - 1‖_1`
    VarDevL1,
    /// `‖<X>_n - 1‖_∞`
    VarDevMax,
}

impl Param {
    pub fn as_str(self) -> &'static str {
        match self {
            Param::Epsilon => "epsilon",
            Param::Delta => "delta",
            Param::Rho => "rho",
            Param::P => "p",
            Param::N => "n",
            Param::VarDevMoment => "var_dev_moment",
            Param::SumIncMoment => "sum_inc_moment",
            Param::MaxIncMoment => "max_inc_moment",
            Param::VarDevL1 => "var_dev_l1",
            Param::VarDevMax => "var_dev_max",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_dev_moment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_inc_moment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_inc_moment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_dev_l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_dev_max: Option<f64>,
}

impl RateParams {
    pub fn get(&self, param: Param) -> Option<f64> {
        match param {
            Param::Epsilon => self.epsilon,
            Param::Delta => self.delta,
            Param::Rho => self.rho,
            Param::P => self.p,
            Param::N => self.n,
            Param::VarDevMoment => self.var_dev_moment,
            Param::SumIncMoment => self.sum_inc_moment,
            Param::MaxIncMoment => self.max_inc_moment,
            Param::VarDevL1 => self.var_dev_l1,
            Param::VarDevMax => self.var_dev_max,
        }
    }

    pub fn set(&mut self, param: Param, value: f64) -> &mut Self {
        let slot = match param {
            Param::Epsilon => &mut self.epsilon,
            Param::Delta => &mut self.delta,
            Param::Rho => &mut self.rho,
            Param::P => &mut self.p,
            Param::N => &mut self.n,
            Param::VarDevMoment => &mut self.var_dev_moment,
            Param::SumIncMoment => &mut self.sum_inc_moment,
            Param::MaxIncMoment => &mut self.max_inc_moment,
            Param::VarDevL1 => &mut self.var_dev_l1,
            Param::VarDevMax => &mut self.var_dev_max,
        };
        *slot = Some(value);
        self
    }

    pub fn with(mut self, param: Param, value: f64) -> Self {
        self.set(param, value);
        self
    }

    /// Keeps only the parameters `id` consumes.
    pub fn restricted_to(&self, id: BoundId) -> Self {
        id.params().iter().fold(RateParams::default(), |acc, &param| match self.get(param) {
            Some(v) => acc.with(param, v),
            None => acc,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Standard,
    /// HB evaluated at p > 2.
    Extension,
}

/// `γ = ε^ρ` for ρ < 1, `ε |ln ε|` for ρ ≥ 1.
pub fn gamma(epsilon: f64, rho: f64) -> f64 {
    if rho < 1.0 {
        epsilon.powf(rho)
    } else {
        epsilon * epsilon.ln().abs()
    }
}

struct Checked<'a> {
    id: BoundId,
    params: &'a RateParams,
}

impl Checked<'_> {
    fn get(&self, param: Param) -> Result<f64, BoundError> {
        let value = self.params.get(param).ok_or(BoundError::MissingParameter { id: self.id, param })?;
        let invalid = BoundError::InvalidParameter {
            id: self.id,
            param,
            value,
        };
        if !value.is_finite() {
            return Err(invalid);
        }
        match param {
            Param::Epsilon => {
                if self.id.enforces_epsilon_range() {
                    if !(value > 0.0 && value <= 0.5) {
                        return Err(BoundError::EpsilonOutOfRange { id: self.id, epsilon: value });
                    }
                } else if value <= 0.0 {
                    return Err(invalid);
                }
            }
            Param::Rho if value <= 0.0 => return Err(BoundError::NonPositiveRho(value)),
            Param::P if value < 1.0 => return Err(BoundError::PBelowOne(value)),
            Param::N if value < 1.0 => return Err(invalid),
            _ if value < 0.0 => return Err(invalid),
            _ => {}
        }
        Ok(value)
    }
}

/// Value of the constant-free functional `id` at `params`.
pub fn evaluate_rate(id: BoundId, params: &RateParams) -> Result<f64, BoundError> {
    let c = Checked { id, params };
    let value = match id {
        BoundId::T1 => gamma(c.get(Param::Epsilon)?, c.get(Param::Rho)?) + c.get(Param::Delta)?,
        BoundId::C1 => gamma(c.get(Param::Epsilon)?, c.get(Param::Rho)?),
        BoundId::T2 => {
            let (eps, rho, p) = (c.get(Param::Epsilon)?, c.get(Param::Rho)?, c.get(Param::P)?);
            let tail = (c.get(Param::VarDevMoment)? + c.get(Param::MaxIncMoment)? + eps.powf(2.0 * p))
                .powf(1.0 / (2.0 * p + 1.0));
            if rho < 1.0 {
                eps.powf(rho) + tail
            } else {
                tail
            }
        }
        BoundId::C2 => {
            let (eps, p) = (c.get(Param::Epsilon)?, c.get(Param::P)?);
            (eps.powf(2.0 * p) + c.get(Param::VarDevMoment)?).powf(1.0 / (2.0 * p + 1.0))
        }
        BoundId::Hb => {
            let p = c.get(Param::P)?;
            (c.get(Param::VarDevMoment)? + c.get(Param::SumIncMoment)?).powf(1.0 / (2.0 * p + 1.0))
        }
        BoundId::BoltA => bolthausen_core(c.get(Param::Epsilon)?, c.get(Param::N)?),
        BoundId::BoltB => {
            let (eps, n) = (c.get(Param::Epsilon)?, c.get(Param::N)?);
            let l1 = c.get(Param::VarDevL1)?.cbrt() + eps.powf(2.0 / 3.0);
            let sup = c.get(Param::VarDevMax)?.sqrt();
            bolthausen_core(eps, n) + l1.min(sup)
        }
        BoundId::Renz => {
            let (rho, n) = (c.get(Param::Rho)?, c.get(Param::N)?);
            if rho > 1.0 {
                return Err(BoundError::RenzRho(rho));
            }
            if rho < 1.0 {
                n.powf(-rho / 2.0)
            } else {
                n.ln() / n.sqrt()
            }
        }
        BoundId::Eo => {
            let (eps, n) = (c.get(Param::Epsilon)?, c.get(Param::N)?);
            eps * n.ln() + c.get(Param::VarDevMax)?.sqrt()
        }
        BoundId::Mourrat => {
            let (eps, n, p) = (c.get(Param::Epsilon)?, c.get(Param::N)?, c.get(Param::P)?);
            let q = 1.0 / (2.0 * p + 1.0);
            bolthausen_core(eps, n) + eps.powf(2.0 * p * q) + c.get(Param::VarDevMoment)?.powf(q)
        }
    };
    Ok(value)
}

fn bolthausen_core(eps: f64, n: f64) -> f64 {
    eps.powi(3) * n * n.ln()
}

pub fn rate_regime(id: BoundId, params: &RateParams) -> Regime {
    match (id, params.p) {
        (BoundId::Hb, Some(p)) if p > 2.0 => Regime::Extension,
        _ => Regime::Standard,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub ids: Vec<BoundId>,
    pub rows: Vec<BoundRow>,
    pub log_convention: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub params: RateParams,
    pub values: Vec<f64>,
    pub extension_regime: Vec<BoundId>,
}

pub fn compare_table(ids: &[BoundId], grid: &[RateParams]) -> Result<BoundTable, BoundError> {
    let rows = grid
        .iter()
        .map(|params| {
            let values = ids.iter().map(|&id| evaluate_rate(id, params)).collect::<Result<_, _>>()?;
            let extension_regime = ids
                .iter()
                .copied()
                .filter(|&id| rate_regime(id, params) == Regime::Extension)
                .collect();
            Ok(BoundRow {
                params: *params,
                values,
                extension_regime,
            })
        })
        .collect::<Result<_, BoundError>>()?;
    Ok(BoundTable {
        ids: ids.to_vec(),
        rows,
        log_convention: LOG_CONVENTION.to_string(),
    })
}

impl BoundTable {
    pub fn value(&self, row: usize, id: BoundId) -> Option<f64> {
        let col = self.ids.iter().position(|&i| i == id)?;
        self.rows.get(row).map(|r| r.values[col])
    }

    fn param_columns(&self) -> Vec<Param> {
        const ORDER: [Param; 10] = [
            Param::Epsilon,
            Param::Delta,
            Param::Rho,
            Param::P,
            Param::N,
            Param::VarDevMoment,
            Param::SumIncMoment,
            Param::MaxIncMoment,
            Param::VarDevL1,
            Param::VarDevMax,
        ];
        ORDER
            .into_iter()
            .filter(|&param| self.rows.iter().any(|r| r.params.get(param).is_some()))
            .collect()
    }

    /// Metadata row, header, then one row per grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BoundError> {
        let csv_err = |e: csv::Error| BoundError::Csv(e.to_string());
        let params = self.param_columns();
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["#log", self.log_convention.as_str()]).map_err(csv_err)?;
        let mut header: Vec<String> = vec!["grid_point".into()];
        header.extend(params.iter().map(|p| p.as_str().to_string()));
        header.extend(self.ids.iter().map(|id| id.as_str().to_string()));
        header.push("extension_regime".into());
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(
                params
                    .iter()
                    .map(|&p| row.params.get(p).map(|v| v.to_string()).unwrap_or_default()),
            );
            rec.extend(row.values.iter().map(|v| v.to_string()));
            rec.push(
                row.extension_regime
                    .iter()
                    .map(|id| id.as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| BoundError::Csv(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub label: String,
    pub n: f64,
    pub epsilon: f64,
    pub smaller: f64,
    pub larger: f64,
    /// `larger / smaller`
    pub factor: f64,
    pub required_factor: f64,
    pub holds: bool,
}

/// `ε|ln ε|` against `ε³ n ln n` at `ε = n^{-1/3}`.
pub fn log_rate_vs_bolthausen(n: f64, required_factor: f64) -> Result<DominanceCheck, BoundError> {
    let epsilon = n.powf(-1.0 / 3.0);
    dominance("eps|ln eps| vs eps^3 n ln n at eps = n^(-1/3)", n, epsilon, required_factor)
}

/// `ε³ n ln n ≥ (3/4) ε|ln ε|` at the boundary `ε = sqrt(3/(4n))`.
pub fn boundary_comparison(n: f64) -> Result<DominanceCheck, BoundError> {
    let epsilon = (3.0 / (4.0 * n)).sqrt();
    dominance("(3/4) eps|ln eps| vs eps^3 n ln n at eps = sqrt(3/(4n))", n, epsilon, 0.75)
}

fn dominance(label: &str, n: f64, epsilon: f64, required_factor: f64) -> Result<DominanceCheck, BoundError> {
    let base = RateParams::default()
        .with(Param::Epsilon, epsilon)
        .with(Param::Rho, 1.0)
        .with(Param::Delta, 0.0)
        .with(Param::N, n);
    let smaller = evaluate_rate(BoundId::T1, &base)?;
    let larger = evaluate_rate(BoundId::BoltA, &base)?;
    let factor = larger / smaller;
    Ok(DominanceCheck {
        label: label.to_string(),
        n,
        epsilon,
        smaller,
        larger,
        factor,
        required_factor,
        holds: factor >= required_factor,
    })
}

/// Finite joint law of `(X, Y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLaw {
    /// `(x, y, probability)`
    pub atoms: Vec<(f64, f64, f64)>,
}

impl JointLaw {
    pub fn new(atoms: Vec<(f64, f64, f64)>) -> Result<Self, BoundError> {
        if atoms.is_empty() {
            return Err(BoundError::JointLaw("no atoms".into()));
        }
        for &(x, y, p) in &atoms {
            if !x.is_finite() || !y.is_finite() || !p.is_finite() || p < 0.0 {
                return Err(BoundError::JointLaw(format!("invalid atom ({x}, {y}, {p})")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BoundError::JointLaw(format!("probabilities sum to {total}")));
        }
        Ok(JointLaw { atoms })
    }

    /// Product law of independent marginals.
    pub fn product(x: &[(f64, f64)], y: &[(f64, f64)]) -> Result<Self, BoundError> {
        JointLaw::new(
            x.iter()
                .flat_map(|&(xv, xp)| y.iter().map(move |&(yv, yp)| (xv, yv, xp * yp)))
                .collect(),
        )
    }

    fn marginal_x(&self) -> BTreeMap<OrderedKey, f64> {
        let mut m = BTreeMap::new();
        for &(x, _, p) in &self.atoms {
            *m.entry(OrderedKey(x)).or_insert(0.0) += p;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrderedKey(f64);

impl Eq for OrderedKey {}

impl PartialOrd for OrderedKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0 + 0.0).total_cmp(&(other.0 + 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub d_x: f64,
    pub conditional_moment_l1: f64,
}

impl SmoothingCheck {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.margin >= -tolerance
    }
}

/// `D(X+Y) ≤ 2 D(X) + 3 ‖E[|Y|^{2p} | X]‖₁^{1/(2p+1)}`, both sides exact.
pub fn verify_smoothing_lemma(joint: &JointLaw, p: f64) -> Result<SmoothingCheck, BoundError> {
    if !(p >= 1.0) {
        return Err(BoundError::PBelowOne(p));
    }
    let marginal = joint.marginal_x();
    let mut conditional: BTreeMap<OrderedKey, f64> = BTreeMap::new();
    for &(x, y, prob) in &joint.atoms {
        *conditional.entry(OrderedKey(x)).or_insert(0.0) += prob * y.abs().powf(2.0 * p);
    }
    let conditional_moment_l1: f64 = conditional
        .iter()
        .filter(|(x, _)| marginal[x] > 0.0)
        .map(|(x, weighted)| marginal[x] * (weighted / marginal[x]))
        .sum();
    let (xs, px): (Vec<f64>, Vec<f64>) = marginal.iter().map(|(k, &p)| (k.0, p)).unzip();
    let d_x = exact_kolmogorov_discrete(&xs, &px)?;
    let sums: Vec<f64> = joint.atoms.iter().map(|a| a.0 + a.1).collect();
    let probs: Vec<f64> = joint.atoms.iter().map(|a| a.2).collect();
    let lhs = exact_kolmogorov_discrete(&sums, &probs)?;
    let rhs = 2.0 * d_x + 3.0 * conditional_moment_l1.powf(1.0 / (2.0 * p + 1.0));
    Ok(SmoothingCheck {
        lhs,
        rhs,
        margin: rhs - lhs,
        d_x,
        conditional_moment_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ReplicateRng;
    use proptest::prelude::*;

    fn params() -> RateParams {
        RateParams::default()
    }

    #[test]
    fn t1_log_branch() {
        let v = evaluate_rate(BoundId::T1, &params().with(Param::Epsilon, 0.25).with(Param::Rho, 1.0).with(Param::Delta, 0.0))
            .unwrap();
        assert!((v - 0.25 * 4f64.ln()).abs() < 1e-15);
        assert!((v - 0.346574).abs() < 1e-6);
    }

    #[test]
    fn c2_example() {
        let v = evaluate_rate(
            BoundId::C2,
            &params().with(Param::P, 1.0).with(Param::Epsilon, 0.1).with(Param::VarDevMoment, 0.02),
        )
        .unwrap();
        assert!((v - 0.03f64.cbrt()).abs() < 1e-15);
        assert!((v - 0.310723).abs() < 1e-6);
    }

    #[test]
    fn t1_power_branch_vanishes() {
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let eps = 0.5 * 10f64.powi(-k);
            let v = evaluate_rate(BoundId::T1, &params().with(Param::Epsilon, eps).with(Param::Rho, 0.5).with(Param::Delta, 0.0))
                .unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn renz_branches() {
        let v = evaluate_rate(BoundId::Renz, &params().with(Param::Rho, 0.5).with(Param::N, 100.0)).unwrap();
        assert!((v - 0.316228).abs() < 1e-6);
        let v = evaluate_rate(BoundId::Renz, &params().with(Param::Rho, 1.0).with(Param::N, 100.0)).unwrap();
        assert!((v - 100f64.ln() / 10.0).abs() < 1e-15);
        assert_eq!(
            evaluate_rate(BoundId::Renz, &params().with(Param::Rho, 1.5).with(Param::N, 100.0)),
            Err(BoundError::RenzRho(1.5))
        );
    }

    #[test]
    fn t2_matches_formula() {
        let base = params()
            .with(Param::Epsilon, 0.2)
            .with(Param::P, 2.0)
            .with(Param::VarDevMoment, 0.01)
            .with(Param::MaxIncMoment, 0.003);
        let tail = (0.01f64 + 0.003 + 0.2f64.powi(4)).powf(0.2);
        let low = evaluate_rate(BoundId::T2, &base.with(Param::Rho, 0.5)).unwrap();
        assert!((low - (0.2f64.sqrt() + tail)).abs() < 1e-15);
        let high = evaluate_rate(BoundId::T2, &base.with(Param::Rho, 1.0)).unwrap();
        assert!((high - tail).abs() < 1e-15);
    }

    #[test]
    fn bolthausen_with_correction() {
        let base = params()
            .with(Param::Epsilon, 0.1)
            .with(Param::N, 50.0)
            .with(Param::VarDevL1, 0.008)
            .with(Param::VarDevMax, 0.25);
        let core = 1e-3 * 50.0 * 50f64.ln();
        let a = evaluate_rate(BoundId::BoltA, &base).unwrap();
        assert!((a - core).abs() < 1e-15);
        let b = evaluate_rate(BoundId::BoltB, &base).unwrap();
        let l1 = 0.2 + 0.01f64.cbrt();
        assert!((b - (core + l1.min(0.5))).abs() < 1e-15);
        let b = evaluate_rate(BoundId::BoltB, &base.with(Param::VarDevMax, 0.01)).unwrap();
        assert!((b - (core + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn eo_hb_mourrat() {
        let base = params()
            .with(Param::Epsilon, 0.1)
            .with(Param::N, 100.0)
            .with(Param::P, 1.0)
            .with(Param::VarDevMax, 0.04)
            .with(Param::VarDevMoment, 0.008)
            .with(Param::SumIncMoment, 0.019);
        let eo = evaluate_rate(BoundId::Eo, &base).unwrap();
        assert!((eo - (0.1 * 100f64.ln() + 0.2)).abs() < 1e-15);
        let hb = evaluate_rate(BoundId::Hb, &base).unwrap();
        assert!((hb - 0.3).abs() < 1e-15);
        let m = evaluate_rate(BoundId::Mourrat, &base).unwrap();
        let want = 1e-3 * 100.0 * 100f64.ln() + 0.01f64.cbrt() + 0.2;
        assert!((m - want).abs() < 1e-15);
    }

    #[test]
    fn hb_extension_regime() {
        let p = params().with(Param::P, 3.0);
        assert_eq!(rate_regime(BoundId::Hb, &p), Regime::Extension);
        assert_eq!(rate_regime(BoundId::Hb, &p.with(Param::P, 2.0)), Regime::Standard);
        assert_eq!(rate_regime(BoundId::C2, &p), Regime::Standard);
    }

    #[test]
    fn missing_and_invalid_parameters() {
        assert_eq!(
            evaluate_rate(BoundId::T1, &params().with(Param::Epsilon, 0.1).with(Param::Rho, 1.0)),
            Err(BoundError::MissingParameter { id: BoundId::T1, param: Param::Delta })
        );
        let full = params().with(Param::Epsilon, 0.6).with(Param::Rho, 1.0).with(Param::Delta, 0.0);
        assert!(matches!(evaluate_rate(BoundId::T1, &full), Err(BoundError::EpsilonOutOfRange { .. })));
        assert!(matches!(
            evaluate_rate(BoundId::T1, &full.with(Param::Epsilon, 0.0)),
            Err(BoundError::EpsilonOutOfRange { .. })
        ));
        assert_eq!(
            evaluate_rate(BoundId::C1, &full.with(Param::Epsilon, 0.1).with(Param::Rho, 0.0)),
            Err(BoundError::NonPositiveRho(0.0))
        );
        let c2 = params().with(Param::Epsilon, 0.1).with(Param::P, 0.5).with(Param::VarDevMoment, 0.0);
        assert_eq!(evaluate_rate(BoundId::C2, &c2), Err(BoundError::PBelowOne(0.5)));
        // outside the (A1) range only T1, C1, T2 and C2 object
        let eo = params().with(Param::Epsilon, 0.8).with(Param::N, 10.0).with(Param::VarDevMax, 0.0);
        assert!(evaluate_rate(BoundId::Eo, &eo).is_ok());
    }

    #[test]
    fn every_id_rejects_each_missing_parameter() {
        let full = params()
            .with(Param::Epsilon, 0.1)
            .with(Param::Delta, 0.1)
            .with(Param::Rho, 0.5)
            .with(Param::P, 1.0)
            .with(Param::N, 100.0)
            .with(Param::VarDevMoment, 0.01)
            .with(Param::SumIncMoment, 0.01)
            .with(Param::MaxIncMoment, 0.01)
            .with(Param::VarDevL1, 0.01)
            .with(Param::VarDevMax, 0.01);
        for id in BoundId::ALL {
            let only = full.restricted_to(id);
            assert!(evaluate_rate(id, &only).is_ok(), "{id}");
            for &param in id.params() {
                let mut missing = only;
                match param {
                    Param::Epsilon => missing.epsilon = None,
                    Param::Delta => missing.delta = None,
                    Param::Rho => missing.rho = None,
                    Param::P => missing.p = None,
                    Param::N => missing.n = None,
                    Param::VarDevMoment => missing.var_dev_moment = None,
                    Param::SumIncMoment => missing.sum_inc_moment = None,
                    Param::MaxIncMoment => missing.max_inc_moment = None,
                    Param::VarDevL1 => missing.var_dev_l1 = None,
                    Param::VarDevMax => missing.var_dev_max = None,
                }
                assert_eq!(evaluate_rate(id, &missing), Err(BoundError::MissingParameter { id, param }));
            }
        }
    }

    #[test]
    fn t1_ignores_variance_statistics() {
        let base = params().with(Param::Epsilon, 0.1).with(Param::Rho, 1.0).with(Param::Delta, 0.0);
        let extra = base.with(Param::VarDevMoment, 0.3).with(Param::VarDevMax, 0.4).with(Param::N, 7.0);
        assert_eq!(evaluate_rate(BoundId::T1, &base).unwrap(), evaluate_rate(BoundId::T1, &extra).unwrap());
    }

    #[test]
    fn dominance_claims() {
        let c = log_rate_vs_bolthausen(1e6, 50.0).unwrap();
        assert!((c.epsilon - 0.01).abs() < 1e-15);
        assert!((c.smaller - 0.01 * 100f64.ln()).abs() < 1e-15);
        assert!((c.larger - 1e6f64.ln()).abs() < 1e-9);
        assert!(c.holds && c.factor > 290.0);
        for n in [3.0, 10.0, 100.0, 1e4, 1e6] {
            let c = boundary_comparison(n).unwrap();
            assert!(c.holds, "{c:?}");
        }
    }

    #[test]
    fn t2_approaches_t1_as_p_grows() {
        for &eps in &[0.1f64, 0.2, 0.3] {
            for &delta in &[0.0f64, 0.1, 0.2, 0.3] {
                let mut prev_gap = f64::INFINITY;
                let target = eps.powf(0.5) + f64::max(delta, eps);
                for &p in &[1.0f64, 2.0, 4.0, 8.0, 16.0] {
                    let v = evaluate_rate(
                        BoundId::T2,
                        &params()
                            .with(Param::Epsilon, eps)
                            .with(Param::Rho, 0.5)
                            .with(Param::P, p)
                            .with(Param::VarDevMoment, delta.powf(2.0 * p))
                            .with(Param::MaxIncMoment, eps.powf(2.0 * p)),
                    )
                    .unwrap();
                    let gap = (v - target).abs() / target;
                    assert!(gap <= prev_gap + 1e-15);
                    prev_gap = gap;
                }
                assert!(prev_gap < 0.1, "eps={eps} delta={delta} gap={prev_gap}");
            }
        }
    }

    #[test]
    fn csv_has_metadata_row() {
        let grid = [
            params().with(Param::Epsilon, 0.1).with(Param::Rho, 1.0).with(Param::Delta, 0.0).with(Param::N, 100.0),
            params().with(Param::Epsilon, 0.2).with(Param::Rho, 1.0).with(Param::Delta, 0.1).with(Param::N, 25.0),
        ];
        let table = compare_table(&[BoundId::T1, BoundId::BoltA], &grid).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "#log,natural");
        assert_eq!(lines[1], "grid_point,epsilon,delta,rho,n,T1,BOLT_A,extension_regime");
        assert_eq!(lines.len(), 4);
        assert_eq!(table.value(1, BoundId::T1), Some(0.2 * 0.2f64.ln().abs() + 0.1));
    }

    #[test]
    fn compare_table_propagates_errors() {
        let grid = [params().with(Param::Epsilon, 0.1)];
        assert!(compare_table(&[BoundId::T1], &grid).is_err());
    }

    #[test]
    fn smoothing_trivial_cases() {
        let zero = JointLaw::new(vec![(0.0, 0.0, 1.0)]).unwrap();
        let c = verify_smoothing_lemma(&zero, 1.0).unwrap();
        assert_eq!((c.lhs, c.rhs, c.margin), (0.5, 1.0, 0.5));
        let x_only = JointLaw::new(vec![(-0.7, 0.0, 0.3), (0.3, 0.0, 0.7)]).unwrap();
        let c = verify_smoothing_lemma(&x_only, 2.0).unwrap();
        assert_eq!(c.lhs, c.d_x);
        assert_eq!(c.margin, c.d_x);
    }

    #[test]
    fn smoothing_rejects_invalid_laws() {
        assert!(JointLaw::new(vec![(0.0, 0.0, 0.5)]).is_err());
        assert!(JointLaw::new(vec![(0.0, f64::NAN, 1.0)]).is_err());
        assert!(verify_smoothing_lemma(&JointLaw::new(vec![(0.0, 0.0, 1.0)]).unwrap(), 0.9).is_err());
    }

    fn random_joint(rng: &mut ReplicateRng) -> JointLaw {
        let nx = 1 + (rng.uniform() * 5.0) as usize;
        let ny = 1 + (rng.uniform() * 5.0) as usize;
        let xs: Vec<f64> = (0..nx).map(|_| 4.0 * rng.uniform() - 2.0).collect();
        let ys: Vec<f64> = (0..ny).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let mut atoms = Vec::new();
        for &x in &xs {
            for &y in &ys {
                atoms.push((x, y, rng.uniform() + 1e-3));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        atoms.iter_mut().for_each(|a| a.2 /= total);
        JointLaw::new(atoms).unwrap()
    }

    #[test]
    fn smoothing_random_corpus() {
        for rep in 0..100 {
            let joint = random_joint(&mut ReplicateRng::new(43, rep));
            for p in [1.0, 2.0] {
                let c = verify_smoothing_lemma(&joint, p).unwrap();
                assert!(c.holds(1e-12), "{rep} {p} {c:?}");
            }
        }
    }

    fn moment_params() -> impl Strategy<Value = RateParams> {
        (
            0.01f64..0.5,
            0.0f64..0.5,
            prop_oneof![Just(0.5f64), Just(1.0), Just(2.0)],
            1.0f64..4.0,
            2.0f64..1e4,
            (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        )
            .prop_map(|(eps, delta, rho, p, n, (a, b, c, d, e))| {
                RateParams::default()
                    .with(Param::Epsilon, eps)
                    .with(Param::Delta, delta)
                    .with(Param::Rho, rho.min(1.0))
                    .with(Param::P, p)
                    .with(Param::N, n)
                    .with(Param::VarDevMoment, a)
                    .with(Param::SumIncMoment, b)
                    .with(Param::MaxIncMoment, c)
                    .with(Param::VarDevL1, d)
                    .with(Param::VarDevMax, e)
            })
    }

    proptest! {
        #[test]
        fn non_decreasing_in_moment_parameters(base in moment_params(), bump in 0.0f64..1.0) {
            for id in BoundId::ALL {
                let v0 = evaluate_rate(id, &base).unwrap();
                prop_assert!(v0 >= 0.0);
                for &param in id.params() {
                    if matches!(param, Param::Epsilon | Param::Rho | Param::P | Param::N) {
                        continue;
                    }
                    let bumped = base.with(param, base.get(param).unwrap() + bump);
                    prop_assert!(evaluate_rate(id, &bumped).unwrap() >= v0, "{} {}", id, param);
                }
            }
        }

        #[test]
        fn non_decreasing_in_epsilon(base in moment_params(), lo in 0.001f64..0.36, frac in 0.0f64..1.0) {
            // ε|ln ε| peaks at 1/e, so compare within (0, 1/e]
            let hi = lo + frac * (1.0 / std::f64::consts::E - lo);
            for id in BoundId::ALL {
                if !id.params().contains(&Param::Epsilon) {
                    continue;
                }
                let a = evaluate_rate(id, &base.with(Param::Epsilon, lo)).unwrap();
                let b = evaluate_rate(id, &base.with(Param::Epsilon, hi)).unwrap();
                prop_assert!(b >= a - 1e-15, "{} {} {}", id, lo, hi);
            }
        }
    }
}
