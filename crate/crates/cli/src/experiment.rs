//! Experiment pipelines and the result manifest.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use log::{info, warn};
use mclt_core::bounds::{
    boundary_comparison, compare_table, evaluate_rate, gamma, log_rate_vs_bolthausen, rate_regime, verify_smoothing_lemma,
    BoundId, BoundTable, DominanceCheck, Param, RateParams, Regime, LOG_CONVENTION,
};
use mclt_core::conditions::{
    certify, certify_auto, check_bernstein, verify_moment_lemmas, ConditionReport, HistorySource, ReportMode,
};
use mclt_core::distance::{exact_kolmogorov_discrete, fit_rate, kolmogorov_distance, KolmogorovEstimate, RateFit, RatePoint};
use mclt_core::kernel::{sample_paths, simulate_terminal, ConditionalKernel, DiscreteLaw, RegistryKernel, TerminalRecord};
use mclt_core::lipschitz::{
    check_separately_lipschitz, doob_tables, epsilon_delta_n, terminal_law, variance_sandwich, verify_a1_lipschitz,
    LipschitzModel, ENUMERATION_GUARD,
};
use mclt_core::rng::derive_seed;
use mclt_core::transforms::{check_padded_a1, pad_paths, restrict_to_v, StopVariant};
use mclt_core::{ReplicateRng, TerminalStatistics};
use serde::{Deserialize, Serialize};

use crate::config::{Abscissa, ExperimentConfig, ExperimentKind};
use crate::corpus::{random_centred_law, random_joint_law};
use crate::output::OutputSet;
use crate::{ConfigError, InvariantViolation};

pub const TOOL: &str = "mclt-lab";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SERIES_FILE: &str = "series.csv";
pub const TERMINALS_FILE: &str = "terminals.csv";

/// Paths replayed per grid point to cross-check the streaming simulator.
const REPLAY_PATHS: usize = 64;
/// Relative slack of the exact-arithmetic lemma checks.
const LEMMA_TOLERANCE: f64 = 1e-12;
/// Absolute slack, scaled by `max(1, Var)`, of the Doob identities.
const DOOB_TOLERANCE: f64 = 1e-9;
/// Padded paths must end within this distance of unit variance.
const UNIT_VARIANCE_TOLERANCE: f64 = 1e-9;

const SALT_CERTIFY: u64 = 0x00ce_7000_0000_0000;
const SALT_PAD: u64 = 0x00ad_0000_0000_0000;
const SALT_LAWS: u64 = 0x01a3_0000_0000_0000;
const SALT_JOINT: u64 = 0x01b7_0000_0000_0000;
const SALT_VALIDITY: u64 = 0x0a11_0000_0000_0000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

/// Condition certificate as recorded per grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub mode: ReportMode,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_out_of_range: bool,
    pub delta_out_of_range: bool,
    pub nodes_examined: usize,
}

impl CertificateSummary {
    fn from_report(report: &ConditionReport, rho: f64) -> Self {
        CertificateSummary {
            mode: report.mode,
            rho,
            epsilon: report.epsilon.unwrap_or(f64::NAN),
            delta: report.delta.unwrap_or(f64::NAN),
            epsilon_out_of_range: report.epsilon_out_of_range,
            delta_out_of_range: report.delta_out_of_range,
            nodes_examined: report.nodes_examined,
        }
    }

    pub fn certified(&self) -> bool {
        self.mode == ReportMode::Certified
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateRow {
    pub grid_point: usize,
    pub abscissa: f64,
    pub n: usize,
    pub m: usize,
    pub estimate: KolmogorovEstimate,
    pub certificate: CertificateSummary,
    pub params: RateParams,
    /// Aligned with the configured bound ids; `None` when the functional rejected its inputs.
    pub bounds: Vec<Option<f64>>,
    pub extension_regime: Vec<BoundId>,
    pub var_dev_std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatesSeries {
    pub abscissa: Abscissa,
    pub bound_ids: Vec<BoundId>,
    pub points: Vec<RateRow>,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
}

impl RatesSeries {
    pub fn bound(&self, row: usize, id: BoundId) -> Option<f64> {
        let col = self.bound_ids.iter().position(|&b| b == id)?;
        self.points.get(row)?.bounds[col]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsSeries {
    pub table: Option<BoundTable>,
    pub dominance: Vec<DominanceCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub suite: String,
    pub case: usize,
    pub param: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub param: f64,
    pub cases: usize,
    pub failures: usize,
    /// Smallest `rhs - lhs` over the cases.
    pub min_margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LemmaSeries {
    pub rows: Vec<LemmaRow>,
    pub summary: Vec<SuiteSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub grid_point: usize,
    pub n: usize,
    pub epsilon_n: f64,
    pub delta_n: f64,
    pub var: f64,
    pub lower: f64,
    pub upper: f64,
    pub upper_holds: bool,
    pub lower_holds: bool,
    pub a1_holds: bool,
    pub mean_transfer_holds: bool,
    pub epsilon_sup: f64,
    pub martingale_defect: Option<f64>,
    pub telescoping_defect: Option<f64>,
    pub orthogonality_defect: Option<f64>,
    pub validity_holds: bool,
    pub validity_exhaustive: bool,
    /// Exact Kolmogorov distance of `(f - E f)/sd` to the standard normal.
    pub d_exact: Option<f64>,
    /// `γ(ε_n, ρ)`
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzSeries {
    pub rows: Vec<LipschitzRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformRow {
    pub grid_point: usize,
    pub n: usize,
    pub m: usize,
    pub certificate: CertificateSummary,
    pub max_unit_variance_error: f64,
    pub a1_violations: usize,
    pub zero_padding_violations: usize,
    pub mean_tau: f64,
    pub mean_r: f64,
    pub sup_violations: usize,
    pub inf_violations: usize,
    pub out_of_hypothesis: usize,
    pub max_stopped_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformsSeries {
    pub rows: Vec<TransformRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TerminalSummary {
    pub grid_point: usize,
    pub n: usize,
    pub m: usize,
    pub var_dev_moment: f64,
    pub var_dev_std_error: f64,
    pub var_dev_l1: f64,
    pub var_dev_max: f64,
    pub max_inc_moment: f64,
    pub sum_inc_moment: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TerminalsSeries {
    pub points: Vec<TerminalSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Series {
    Rates(RatesSeries),
    BoundsTable(BoundsSeries),
    LemmaSuite(LemmaSeries),
    Lipschitz(LipschitzSeries),
    TransformsCheck(TransformsSeries),
    Terminals(TerminalsSeries),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultManifest {
    pub tool: String,
    pub version: String,
    pub log_convention: String,
    pub config: ExperimentConfig,
    pub series: Series,
    pub invariants: Vec<InvariantRecord>,
    pub diagnostics: Vec<String>,
}

impl ResultManifest {
    fn new(config: &ExperimentConfig, series: Series, invariants: Vec<InvariantRecord>, diagnostics: Vec<String>) -> Self {
        ResultManifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            log_convention: LOG_CONVENTION.into(),
            config: config.clone(),
            series,
            invariants,
            diagnostics,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Tabular view of the series; every value is taken from the manifest.
    pub fn series_csv(&self) -> Result<Vec<u8>> {
        match &self.series {
            Series::Rates(s) => rates_csv(s),
            Series::BoundsTable(s) => bounds_csv(s),
            Series::LemmaSuite(s) => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["suite", "case", "param", "lhs", "rhs", "holds"])?;
                for r in &s.rows {
                    w.write_record([
                        r.suite.clone(),
                        r.case.to_string(),
                        r.param.to_string(),
                        r.lhs.to_string(),
                        r.rhs.to_string(),
                        r.holds.to_string(),
                    ])?;
                }
                finish(w)
            }
            Series::Lipschitz(s) => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record([
                    "grid_point",
                    "n",
                    "epsilon_n",
                    "delta_n",
                    "var",
                    "lower",
                    "upper",
                    "upper_holds",
                    "lower_holds",
                    "a1_holds",
                    "mean_transfer_holds",
                    "martingale_defect",
                    "telescoping_defect",
                    "orthogonality_defect",
                    "validity_holds",
                    "d_exact",
                    "gamma",
                ])?;
                for r in &s.rows {
                    w.write_record([
                        r.grid_point.to_string(),
                        r.n.to_string(),
                        r.epsilon_n.to_string(),
                        r.delta_n.to_string(),
                        r.var.to_string(),
                        r.lower.to_string(),
                        r.upper.to_string(),
                        r.upper_holds.to_string(),
                        r.lower_holds.to_string(),
                        r.a1_holds.to_string(),
                        r.mean_transfer_holds.to_string(),
                        opt(r.martingale_defect),
                        opt(r.telescoping_defect),
                        opt(r.orthogonality_defect),
                        r.validity_holds.to_string(),
                        opt(r.d_exact),
                        r.gamma.to_string(),
                    ])?;
                }
                finish(w)
            }
            Series::TransformsCheck(s) => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record([
                    "grid_point",
                    "n",
                    "m",
                    "epsilon",
                    "certified",
                    "max_unit_variance_error",
                    "a1_violations",
                    "zero_padding_violations",
                    "mean_tau",
                    "mean_r",
                    "sup_violations",
                    "inf_violations",
                    "out_of_hypothesis",
                    "max_stopped_residual",
                ])?;
                for r in &s.rows {
                    w.write_record([
                        r.grid_point.to_string(),
                        r.n.to_string(),
                        r.m.to_string(),
                        r.certificate.epsilon.to_string(),
                        r.certificate.certified().to_string(),
                        r.max_unit_variance_error.to_string(),
                        r.a1_violations.to_string(),
                        r.zero_padding_violations.to_string(),
                        r.mean_tau.to_string(),
                        r.mean_r.to_string(),
                        r.sup_violations.to_string(),
                        r.inf_violations.to_string(),
                        r.out_of_hypothesis.to_string(),
                        r.max_stopped_residual.to_string(),
                    ])?;
                }
                finish(w)
            }
            Series::Terminals(s) => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record([
                    "grid_point",
                    "n",
                    "m",
                    "var_dev_moment",
                    "var_dev_std_error",
                    "var_dev_l1",
                    "var_dev_max",
                    "max_inc_moment",
                    "sum_inc_moment",
                ])?;
                for r in &s.points {
                    w.write_record([
                        r.grid_point.to_string(),
                        r.n.to_string(),
                        r.m.to_string(),
                        r.var_dev_moment.to_string(),
                        r.var_dev_std_error.to_string(),
                        r.var_dev_l1.to_string(),
                        r.var_dev_max.to_string(),
                        r.max_inc_moment.to_string(),
                        r.sum_inc_moment.to_string(),
                    ])?;
                }
                finish(w)
            }
        }
    }

    /// Names of the asserted invariants that failed.
    pub fn failed_invariants(&self) -> Vec<&str> {
        self.invariants
            .iter()
            .filter(|i| !i.holds)
            .map(|i| i.name.as_str())
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| anyhow!("csv: {e}"))
}

fn rates_csv(s: &RatesSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "grid_point",
        "abscissa",
        "n",
        "m",
        "d_hat",
        "dkw_lo",
        "dkw_hi",
        "epsilon",
        "delta",
        "certified",
    ]
    .iter()
    .map(|h| h.to_string())
    .collect();
    header.extend(s.bound_ids.iter().map(|id| id.as_str().to_string()));
    w.write_record(&header)?;
    for r in &s.points {
        let mut rec = vec![
            r.grid_point.to_string(),
            r.abscissa.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.estimate.d_hat.to_string(),
            r.estimate.lower().to_string(),
            r.estimate.upper().to_string(),
            r.certificate.epsilon.to_string(),
            r.certificate.delta.to_string(),
            r.certificate.certified().to_string(),
        ];
        rec.extend(r.bounds.iter().map(|b| opt(*b)));
        w.write_record(&rec)?;
    }
    finish(w)
}

fn bounds_csv(s: &BoundsSeries) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(table) = &s.table {
        table.write_csv(&mut out).map_err(|e| anyhow!("{e}"))?;
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "n", "epsilon", "smaller", "larger", "factor", "required_factor", "holds"])?;
        for d in &s.dominance {
            w.write_record([
                d.label.clone(),
                d.n.to_string(),
                d.epsilon.to_string(),
                d.smaller.to_string(),
                d.larger.to_string(),
                d.factor.to_string(),
                d.required_factor.to_string(),
                d.holds.to_string(),
            ])?;
        }
        out = finish(w)?;
    }
    Ok(out)
}

struct Checks {
    invariants: Vec<InvariantRecord>,
    diagnostics: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks {
            invariants: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn assert(&mut self, name: impl Into<String>, holds: bool, detail: impl Into<String>) {
        let name = name.into();
        let detail = detail.into();
        if !holds {
            warn!("invariant {name} failed: {detail}");
        }
        self.invariants.push(InvariantRecord { name, holds, detail });
    }

    fn note(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        info!("{msg}");
        self.diagnostics.push(msg);
    }
}

/// Runs the experiment in memory. Asserted invariants that fail yield an
/// [`InvariantViolation`] naming them.
pub fn execute(config: &ExperimentConfig) -> Result<ResultManifest> {
    config.validate()?;
    let mut checks = Checks::new();
    let series = match config.kind {
        ExperimentKind::Rates => Series::Rates(run_rates(config, &mut checks)?),
        ExperimentKind::BoundsTable => Series::BoundsTable(run_bounds(config, &mut checks)?),
        ExperimentKind::LemmaSuite => Series::LemmaSuite(run_lemmas(config, &mut checks)?),
        ExperimentKind::Lipschitz => Series::Lipschitz(run_lipschitz(config, &mut checks)?),
        ExperimentKind::TransformsCheck => Series::TransformsCheck(run_transforms(config, &mut checks)?),
    };
    finalize(config, series, checks)
}

fn finalize(config: &ExperimentConfig, series: Series, checks: Checks) -> Result<ResultManifest> {
    let manifest = ResultManifest::new(config, series, checks.invariants, checks.diagnostics);
    let failed = manifest.failed_invariants();
    if !failed.is_empty() {
        return Err(InvariantViolation(failed.join(", ")).into());
    }
    Ok(manifest)
}

/// Runs the experiment and writes `manifest.json` and `series.csv` into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ResultManifest> {
    let manifest = execute(config)?;
    let mut files = OutputSet::new();
    files.add(SERIES_FILE, manifest.series_csv()?);
    files.add(MANIFEST_FILE, manifest.to_json()?);
    files.commit(out)?;
    Ok(manifest)
}

/// Streams terminal records for every grid point of a kernel config and
/// writes them with summary statistics.
pub fn run_simulation(config: &ExperimentConfig, out: &Path) -> Result<ResultManifest> {
    let (manifest, terminals) = simulate(config)?;
    let mut files = OutputSet::new();
    files.add(TERMINALS_FILE, terminals);
    files.add(SERIES_FILE, manifest.series_csv()?);
    files.add(MANIFEST_FILE, manifest.to_json()?);
    files.commit(out)?;
    Ok(manifest)
}

fn simulate(config: &ExperimentConfig) -> Result<(ResultManifest, Vec<u8>)> {
    if !matches!(config.kind, ExperimentKind::Rates | ExperimentKind::TransformsCheck) {
        return Err(ConfigError::new(format!("simulate needs a kernel experiment, got {}", config.kind)).into());
    }
    config.validate()?;
    let seed = config.seed()?;
    let mut checks = Checks::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["grid_point", "replicate", "terminal", "variance", "max_abs_increment", "sum_abs_pow"])?;
    let mut points = Vec::new();
    for (i, point) in config.grid.iter().enumerate() {
        let kernel = config.build_kernel(i)?;
        let records = simulate_terminal(&kernel, derive_seed(seed, i as u64), point.m, config.p)?;
        replay_check(&kernel, derive_seed(seed, i as u64), &records, i, &mut checks)?;
        let stats = TerminalStatistics::from_records(&records, config.p)?;
        for (j, r) in records.iter().enumerate() {
            w.write_record([
                i.to_string(),
                j.to_string(),
                r.terminal.to_string(),
                r.variance.to_string(),
                r.max_abs_increment.to_string(),
                r.sum_abs_pow.to_string(),
            ])?;
        }
        points.push(TerminalSummary {
            grid_point: i,
            n: kernel.steps(),
            m: point.m,
            var_dev_moment: stats.var_deviation_moment(),
            var_dev_std_error: stats.var_deviation_std_error(),
            var_dev_l1: stats.var_deviation_l1(),
            var_dev_max: stats.var_deviation_max(),
            max_inc_moment: stats.max_increment_moment(),
            sum_inc_moment: stats.summed_increment_moment(),
        });
    }
    let terminals = finish(w)?;
    let manifest = finalize(config, Series::Terminals(TerminalsSeries { points }), checks)?;
    Ok((manifest, terminals))
}

/// Replays the first paths in full and checks them against the streamed records.
fn replay_check(
    kernel: &RegistryKernel,
    seed: u64,
    records: &[TerminalRecord],
    point: usize,
    checks: &mut Checks,
) -> Result<()> {
    let count = REPLAY_PATHS.min(records.len());
    let bundles = sample_paths(kernel, seed, count)?;
    let mut problem = None;
    for (j, (b, r)) in bundles.iter().zip(records).enumerate() {
        if let Err(e) = b.check_invariants(kernel) {
            problem = Some(format!("path {j}: {e}"));
            break;
        }
        if b.terminal().to_bits() != r.terminal.to_bits() || b.terminal_variance().to_bits() != r.variance.to_bits() {
            problem = Some(format!("path {j}: streamed record differs from replay"));
            break;
        }
    }
    checks.assert(
        format!("path_structure[{point}]"),
        problem.is_none(),
        problem.unwrap_or_else(|| format!("{count} replayed paths consistent")),
    );
    Ok(())
}

fn run_rates(config: &ExperimentConfig, checks: &mut Checks) -> Result<RatesSeries> {
    let seed = config.seed()?;
    let mut points = Vec::with_capacity(config.grid.len());
    for (i, point) in config.grid.iter().enumerate() {
        let kernel = config.build_kernel(i)?;
        let n = kernel.steps();
        info!("grid point {i}: {} n={n} M={}", kernel.spec().name(), point.m);
        let report = certify_auto(
            &kernel,
            config.rho,
            derive_seed(seed, SALT_CERTIFY + i as u64),
            config.certify_count,
        )
        .with_context(|| format!("certifying grid point {i}"))?;
        let certificate = CertificateSummary::from_report(&report, config.rho);
        if !certificate.certified() {
            checks.note(format!("grid point {i}: epsilon and delta are simulated lower estimates"));
        }
        let sim_seed = derive_seed(seed, i as u64);
        let records = simulate_terminal(&kernel, sim_seed, point.m, config.p)?;
        replay_check(&kernel, sim_seed, &records, i, checks)?;
        let stats = TerminalStatistics::from_records(&records, config.p)?;
        drop(records);
        let estimate = kolmogorov_distance(&stats.terminal_samples, config.alpha)?;
        checks.assert(
            format!("d_hat_range[{i}]"),
            (0.0..=1.0).contains(&estimate.d_hat),
            format!("d_hat = {}", estimate.d_hat),
        );
        let var_dev_max = if certificate.certified() {
            certificate.delta * certificate.delta
        } else {
            stats.var_deviation_max()
        };
        let params = RateParams::default()
            .with(Param::Epsilon, certificate.epsilon)
            .with(Param::Delta, certificate.delta)
            .with(Param::Rho, config.rho)
            .with(Param::P, config.p)
            .with(Param::N, n as f64)
            .with(Param::VarDevMoment, stats.var_deviation_moment())
            .with(Param::SumIncMoment, stats.summed_increment_moment())
            .with(Param::MaxIncMoment, stats.max_increment_moment())
            .with(Param::VarDevL1, stats.var_deviation_l1())
            .with(Param::VarDevMax, var_dev_max);
        let mut bounds = Vec::with_capacity(config.bounds.len());
        let mut extension_regime = Vec::new();
        for &id in &config.bounds {
            match evaluate_rate(id, &params) {
                Ok(v) => bounds.push(Some(v)),
                Err(e) => {
                    checks.note(format!("grid point {i}: {id} not evaluated: {e}"));
                    bounds.push(None);
                }
            }
            if rate_regime(id, &params) == Regime::Extension {
                extension_regime.push(id);
            }
        }
        let abscissa = match config.abscissa {
            Abscissa::N => n as f64,
            Abscissa::Epsilon => point.epsilon.unwrap_or(certificate.epsilon),
        };
        points.push(RateRow {
            grid_point: i,
            abscissa,
            n,
            m: point.m,
            estimate,
            certificate,
            params,
            bounds,
            extension_regime,
            var_dev_std_error: stats.var_deviation_std_error(),
        });
    }
    let mut series = RatesSeries {
        abscissa: config.abscissa,
        bound_ids: config.bounds.clone(),
        points,
        fit: None,
        fit_error: None,
    };
    let rate_points: Vec<RatePoint> = series
        .points
        .iter()
        .map(|r| RatePoint {
            abscissa: r.abscissa,
            estimate: r.estimate,
        })
        .collect();
    let reference = config.reference.map(|id| {
        let table: Vec<(f64, f64)> = (0..series.points.len())
            .map(|row| (series.points[row].abscissa, series.bound(row, id).unwrap_or(f64::NAN)))
            .collect();
        move |x: f64| table.iter().find(|(a, _)| *a == x).map_or(f64::NAN, |(_, v)| *v)
    });
    let fit = match &reference {
        Some(f) => fit_rate(&rate_points, Some(f)),
        None => fit_rate(&rate_points, None),
    };
    match fit {
        Ok(fit) => series.fit = Some(fit),
        Err(e) => {
            checks.note(format!("no rate fit: {e}"));
            series.fit_error = Some(e.to_string());
        }
    }
    Ok(series)
}

fn run_bounds(config: &ExperimentConfig, checks: &mut Checks) -> Result<BoundsSeries> {
    let table = if config.table.is_empty() {
        None
    } else {
        Some(compare_table(&config.bounds, &config.table).map_err(|e| ConfigError::new(format!("bounds table: {e}")))?)
    };
    if let Some(t) = &table {
        for (row, r) in t.rows.iter().enumerate() {
            if !r.extension_regime.is_empty() {
                checks.note(format!("row {row}: extension regime for {:?}", r.extension_regime));
            }
        }
    }
    let mut dominance = Vec::new();
    for &n in &config.dominance_n {
        dominance.push(log_rate_vs_bolthausen(n, config.dominance_factor).map_err(|e| anyhow!("{e}"))?);
    }
    for &n in &config.boundary_n {
        dominance.push(boundary_comparison(n).map_err(|e| anyhow!("{e}"))?);
    }
    for d in &dominance {
        checks.assert(
            format!("dominance[n={}]", d.n),
            d.holds,
            format!("{}: factor {} (required {})", d.label, d.factor, d.required_factor),
        );
    }
    Ok(BoundsSeries { table, dominance })
}

fn bernstein_ratio(law: &DiscreteLaw, epsilon: f64, k_max: u32) -> f64 {
    let m2 = law.second_moment();
    let mut factorial = 2.0;
    let mut worst: f64 = 0.0;
    for k in 3..=k_max {
        factorial *= k as f64;
        let rhs = 0.5 * factorial * epsilon.powi(k as i32 - 2) * m2;
        worst = worst.max(law.signed_moment(k).abs() / rhs);
    }
    worst
}

fn run_lemmas(config: &ExperimentConfig, checks: &mut Checks) -> Result<LemmaSeries> {
    let seed = config.seed()?;
    let l = &config.lemma;
    let mut rows = Vec::new();
    for case in 0..l.cases {
        let mut rng = ReplicateRng::new(derive_seed(seed, SALT_LAWS), case as u64);
        let law = random_centred_law(&mut rng, l.max_support);
        let report = verify_moment_lemmas(&law, l.s, &l.t_grid).map_err(|e| ConfigError::new(e.to_string()))?;
        for c in &report.interpolation {
            rows.push(LemmaRow {
                suite: "interpolation".into(),
                case,
                param: c.t,
                lhs: c.moment,
                rhs: c.bound,
                holds: c.holds,
            });
        }
        rows.push(LemmaRow {
            suite: "variance_cap".into(),
            case,
            param: l.s,
            lhs: report.second_moment,
            rhs: report.epsilon * report.epsilon,
            holds: report.variance_cap_holds,
        });
        let eps = law.max_abs_value();
        let bern = check_bernstein(&law, eps, l.bernstein_k_max).map_err(|e| anyhow!("{e}"))?;
        rows.push(LemmaRow {
            suite: "bernstein".into(),
            case,
            param: l.bernstein_k_max as f64,
            lhs: bernstein_ratio(&law, eps, l.bernstein_k_max),
            rhs: 1.0,
            holds: bern.holds,
        });
        let mut rng = ReplicateRng::new(derive_seed(seed, SALT_JOINT), case as u64);
        let joint = random_joint_law(&mut rng, l.joint_support);
        for &p in &l.p_values {
            let s = verify_smoothing_lemma(&joint, p).map_err(|e| anyhow!("{e}"))?;
            rows.push(LemmaRow {
                suite: "smoothing".into(),
                case,
                param: p,
                lhs: s.lhs,
                rhs: s.rhs,
                holds: s.holds(LEMMA_TOLERANCE),
            });
        }
    }
    let mut summary: Vec<SuiteSummary> = Vec::new();
    for r in &rows {
        let idx = match summary.iter().position(|s| s.suite == r.suite && s.param == r.param) {
            Some(idx) => idx,
            None => {
                summary.push(SuiteSummary {
                    suite: r.suite.clone(),
                    param: r.param,
                    cases: 0,
                    failures: 0,
                    min_margin: f64::INFINITY,
                });
                summary.len() - 1
            }
        };
        let s = &mut summary[idx];
        s.cases += 1;
        s.failures += usize::from(!r.holds);
        s.min_margin = s.min_margin.min(r.rhs - r.lhs);
    }
    for s in &summary {
        checks.assert(
            format!("{}[{}]", s.suite, s.param),
            s.failures == 0,
            format!("{} cases, {} failures, min margin {}", s.cases, s.failures, s.min_margin),
        );
    }
    Ok(LemmaSeries { rows, summary })
}

fn lipschitz_row(model: &LipschitzModel, grid_point: usize, seed: u64, checks: &mut Checks) -> Result<LipschitzRow> {
    let n = model.n();
    let ed = epsilon_delta_n(model).map_err(|e| ConfigError::new(format!("grid point {grid_point}: {e}")))?;
    let sandwich = variance_sandwich(model)?;
    let a1 = verify_a1_lipschitz(model)?;
    let validity = check_separately_lipschitz(model, derive_seed(seed, SALT_VALIDITY + grid_point as u64));
    let (mut mart, mut tele, mut orth) = (None, None, None);
    if model.space_size() <= ENUMERATION_GUARD as f64 {
        let tables = doob_tables(model)?;
        let scale = tables.variance().max(1.0);
        let (m, t, o) = (
            tables.martingale_defect(model),
            tables.telescoping_defect(model),
            tables.orthogonality_defect(),
        );
        checks.assert(
            format!("doob_identities[{grid_point}]"),
            m <= DOOB_TOLERANCE * scale && t <= DOOB_TOLERANCE * scale && o <= DOOB_TOLERANCE * scale,
            format!("martingale {m}, telescoping {t}, orthogonality {o}"),
        );
        (mart, tele, orth) = (Some(m), Some(t), Some(o));
    } else {
        checks.note(format!("grid point {grid_point}: product space above the enumeration guard, Doob identities skipped"));
    }
    let d_exact = match terminal_law(model) {
        Ok((values, probs)) if sandwich.var > 0.0 => {
            let sd = sandwich.var.sqrt();
            let scaled: Vec<f64> = values.iter().map(|v| v / sd).collect();
            Some(exact_kolmogorov_discrete(&scaled, &probs)?)
        }
        Ok(_) => None,
        Err(e) => {
            checks.note(format!("grid point {grid_point}: no exact terminal law: {e}"));
            None
        }
    };
    checks.assert(
        format!("upper_sandwich[{grid_point}]"),
        sandwich.upper_holds,
        format!("Var = {} <= {}", sandwich.var, sandwich.upper),
    );
    checks.assert(
        format!("a1_transfer[{grid_point}]"),
        a1.holds(),
        format!("epsilon_sup = {}", a1.epsilon_sup),
    );
    checks.assert(
        format!("separately_lipschitz[{grid_point}]"),
        validity.holds(),
        format!("{} pairs, {} violations", validity.pairs_checked, validity.violations.len()),
    );
    if !sandwich.lower_holds {
        checks.note(format!(
            "grid point {grid_point}: lower sandwich fails ({} > Var = {})",
            sandwich.lower, sandwich.var
        ));
    }
    if !a1.mean_transfer_holds() {
        checks.note(format!("grid point {grid_point}: averaged-constant transfer fails"));
    }
    Ok(LipschitzRow {
        grid_point,
        n,
        epsilon_n: ed.epsilon_n,
        delta_n: ed.delta_n,
        var: sandwich.var,
        lower: sandwich.lower,
        upper: sandwich.upper,
        upper_holds: sandwich.upper_holds,
        lower_holds: sandwich.lower_holds,
        a1_holds: a1.holds(),
        mean_transfer_holds: a1.mean_transfer_holds(),
        epsilon_sup: a1.epsilon_sup,
        martingale_defect: mart,
        telescoping_defect: tele,
        orthogonality_defect: orth,
        validity_holds: validity.holds(),
        validity_exhaustive: validity.exhaustive,
        d_exact,
        gamma: gamma(ed.epsilon_n, model.rho),
    })
}

fn run_lipschitz(config: &ExperimentConfig, checks: &mut Checks) -> Result<LipschitzSeries> {
    let seed = config.seed()?;
    let mut rows = Vec::new();
    if config.grid.is_empty() {
        rows.push(lipschitz_row(&config.build_model(None)?, 0, seed, checks)?);
    } else {
        for i in 0..config.grid.len() {
            rows.push(lipschitz_row(&config.build_model(Some(i))?, i, seed, checks)?);
        }
    }
    Ok(LipschitzSeries { rows })
}

fn transform_epsilon(kernel: &RegistryKernel, config: &ExperimentConfig, i: usize) -> Result<CertificateSummary> {
    let seed = config.seed()?;
    let report = match certify(kernel, config.rho, HistorySource::Exhaustive) {
        Ok(r) => r,
        Err(_) => certify_auto(
            kernel,
            config.rho,
            derive_seed(seed, SALT_CERTIFY + i as u64),
            config.certify_count,
        )?,
    };
    Ok(CertificateSummary::from_report(&report, config.rho))
}

fn run_transforms(config: &ExperimentConfig, checks: &mut Checks) -> Result<TransformsSeries> {
    let seed = config.seed()?;
    let mut rows = Vec::new();
    for (i, point) in config.grid.iter().enumerate() {
        let kernel = config.build_kernel(i)?;
        let certificate = transform_epsilon(&kernel, config, i)?;
        let eps = certificate.epsilon;
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(ConfigError::new(format!("grid point {i}: epsilon = {eps} outside (0, 1/2]")).into());
        }
        let certified = certificate.certified();
        if !certified {
            checks.note(format!("grid point {i}: epsilon is a simulated lower estimate; padding checks are diagnostics"));
        }
        let bundles = sample_paths(&kernel, derive_seed(seed, i as u64), point.m)?;
        let padded = pad_paths(&bundles, eps, derive_seed(seed, SALT_PAD + i as u64))?;
        let mut max_err: f64 = 0.0;
        let mut a1_violations = 0;
        let mut zero_violations = 0;
        let (mut tau_sum, mut r_sum) = (0.0, 0.0);
        for p in &padded {
            max_err = max_err.max((p.terminal_variance - 1.0).abs());
            let report = check_padded_a1(p, &kernel, config.rho)?;
            a1_violations += usize::from(!report.all_hold());
            tau_sum += p.tau as f64;
            r_sum += p.r as f64;
            let n = p.original.steps();
            if p.tau == n && p.r == 0 && p.residual == 0.0 && p.terminal() != p.original.terminal() {
                zero_violations += 1;
            }
        }
        let sup = restrict_to_v(&bundles, StopVariant::SupLe1, eps)?;
        let inf = restrict_to_v(&bundles, StopVariant::InfGe1, eps)?;
        let row = TransformRow {
            grid_point: i,
            n: kernel.steps(),
            m: point.m,
            certificate,
            max_unit_variance_error: max_err,
            a1_violations,
            zero_padding_violations: zero_violations,
            mean_tau: tau_sum / padded.len() as f64,
            mean_r: r_sum / padded.len() as f64,
            sup_violations: sup.violations.len(),
            inf_violations: inf.violations.len(),
            out_of_hypothesis: sup.out_of_hypothesis.len(),
            max_stopped_residual: sup.max_in_hypothesis_residual().max(inf.max_in_hypothesis_residual()),
        };
        checks.assert(
            format!("unit_variance[{i}]"),
            max_err <= UNIT_VARIANCE_TOLERANCE,
            format!("max |<X'>_N - 1| = {max_err}"),
        );
        checks.assert(
            format!("zero_padding[{i}]"),
            zero_violations == 0,
            format!("{zero_violations} normalized paths changed by padding"),
        );
        let conditional = [
            (format!("padded_a1[{i}]"), a1_violations, "paths with a step above the bound"),
            (format!("stopped_residual_sup[{i}]"), row.sup_violations, "paths with residual above epsilon^2"),
            (format!("stopped_residual_inf[{i}]"), row.inf_violations, "paths with residual above epsilon^2"),
        ];
        for (name, count, what) in conditional {
            if certified {
                checks.assert(name, count == 0, format!("{count} {what}"));
            } else if count > 0 {
                checks.note(format!("{name}: {count} {what}"));
            }
        }
        if row.out_of_hypothesis > 0 {
            checks.note(format!("grid point {i}: {} paths end below unit variance", row.out_of_hypothesis));
        }
        rows.push(row);
    }
    Ok(TransformsSeries { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn rates_series_has_one_row_per_point() {
        let c = config(
            r#"{"kind":"rates","kernel":{"name":"iid_rademacher"},"seed":5,
                "grid":[{"n":16,"m":2000},{"n":32,"m":2000},{"n":64,"m":2000}],
                "bounds":["T1","C1","BOLT_A"],"reference":"C1"}"#,
        );
        let m = execute(&c).unwrap();
        let Series::Rates(s) = &m.series else { panic!() };
        assert_eq!(s.points.len(), 3);
        for (row, p) in s.points.iter().enumerate() {
            assert!(p.certificate.certified());
            assert!((p.certificate.epsilon - 1.0 / (p.n as f64).sqrt()).abs() < 1e-12);
            assert_eq!(p.certificate.delta, 0.0);
            let c1 = s.bound(row, BoundId::C1).unwrap();
            assert_eq!(s.bound(row, BoundId::T1), Some(c1));
        }
        assert!(s.fit.as_ref().unwrap().ratio_spread.is_some());
        let csv = String::from_utf8(m.series_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("grid_point,abscissa,n,m,d_hat,dkw_lo,dkw_hi,epsilon,delta,certified,T1,C1,BOLT_A\n"));
    }

    #[test]
    fn manifest_round_trips() {
        let c = config(r#"{"kind":"bounds-table","seed":1,"dominance_n":[1e6]}"#);
        let m = execute(&c).unwrap();
        let text = m.to_json().unwrap();
        let back: ResultManifest = serde_json::from_slice(&text).unwrap();
        assert_eq!(back.series_csv().unwrap(), m.series_csv().unwrap());
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn failing_dominance_is_an_invariant_violation() {
        let c = config(r#"{"kind":"bounds-table","seed":1,"dominance_n":[1e6],"dominance_factor":1000}"#);
        let err = execute(&c).unwrap_err();
        assert!(err.downcast_ref::<InvariantViolation>().unwrap().0.contains("dominance"));
    }

    #[test]
    fn lemma_suite_passes() {
        let c = config(r#"{"kind":"lemma-suite","seed":11,"lemma":{"cases":20}}"#);
        let m = execute(&c).unwrap();
        let Series::LemmaSuite(s) = &m.series else { panic!() };
        assert!(s.summary.iter().all(|x| x.failures == 0 && x.cases == 20));
        assert_eq!(s.summary.len(), 4 + 1 + 1 + 2);
    }

    #[test]
    fn uniform_lower_sandwich_is_only_a_diagnostic() {
        let c = config(r#"{"kind":"lipschitz","seed":3,"model":{"builtin":"uniform_sum","n":3}}"#);
        let m = execute(&c).unwrap();
        let Series::Lipschitz(s) = &m.series else { panic!() };
        assert!(!s.rows[0].lower_holds && s.rows[0].upper_holds);
        assert!(m.diagnostics.iter().any(|d| d.contains("lower sandwich")));
    }

    #[test]
    fn transforms_check_on_drift() {
        let c = config(
            r#"{"kind":"transforms-check","seed":9,"kernel":{"name":"variance_drift","params":{"d":0.2}},
                "grid":[{"n":8,"m":300}]}"#,
        );
        let m = execute(&c).unwrap();
        let Series::TransformsCheck(s) = &m.series else { panic!() };
        let r = &s.rows[0];
        assert!(r.certificate.certified());
        assert!(r.max_unit_variance_error <= 1e-9);
        assert_eq!(r.a1_violations + r.sup_violations + r.inf_violations, 0);
    }
}
