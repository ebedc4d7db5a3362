use mclt_core::bounds::{evaluate_rate, BoundId, Param, RateParams};
use mclt_core::conditions::{certify_auto, ReportMode};
use mclt_core::kernel::{sample_paths, simulate_terminal, PathBundle, RegistryKernel, TerminalStatistics};
use mclt_core::transforms::{pad_to_unit_variance, restrict_to_v, StopVariant};
use mclt_core::{kolmogorov_distance, std_normal_cdf};
use proptest::prelude::*;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn simulation_is_independent_of_worker_count() {
    let kernel = RegistryKernel::variance_drift(0.3, 40).unwrap();
    let one = pool(1).install(|| simulate_terminal(&kernel, 99, 5_000, 1.0).unwrap());
    let four = pool(4).install(|| simulate_terminal(&kernel, 99, 5_000, 1.0).unwrap());
    assert_eq!(one, four);
    let paths = pool(3).install(|| sample_paths(&kernel, 99, 200).unwrap());
    for (b, r) in paths.iter().zip(&one) {
        assert_eq!(b.terminal().to_bits(), r.terminal.to_bits());
        assert_eq!(b.terminal_variance().to_bits(), r.variance.to_bits());
    }
}

#[test]
fn statistics_merge_like_a_single_collection() {
    let kernel = RegistryKernel::three_point(0.2, None, 50).unwrap();
    let records = simulate_terminal(&kernel, 5, 6_000, 2.0).unwrap();
    let whole = TerminalStatistics::from_records(&records, 2.0).unwrap();
    let (left, right) = records.split_at(2_500);
    let merged = TerminalStatistics::from_records(left, 2.0)
        .unwrap()
        .merge(&TerminalStatistics::from_records(right, 2.0).unwrap())
        .unwrap();
    assert_eq!(merged.count, whole.count);
    assert_eq!(merged.terminal_samples, whole.terminal_samples);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
    assert!(close(merged.var_deviation_moment(), whole.var_deviation_moment()));
    assert!(close(merged.max_increment_moment(), whole.max_increment_moment()));
    assert!(close(merged.summed_increment_moment(), whole.summed_increment_moment()));
    assert_eq!(merged.var_deviation_max(), whole.var_deviation_max());
    let other_p = TerminalStatistics::from_records(left, 1.0).unwrap();
    assert!(whole.merge(&other_p).is_err());
}

#[test]
fn rademacher_pipeline_respects_the_log_rate() {
    for n in [64usize, 256] {
        let kernel = RegistryKernel::iid_rademacher(n).unwrap();
        let report = certify_auto(&kernel, 1.0, 1, 1_000).unwrap();
        assert_eq!(report.mode, ReportMode::Certified);
        let eps = report.epsilon.unwrap();
        assert!((eps - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        let records = simulate_terminal(&kernel, 3, 50_000, 1.0).unwrap();
        let stats = TerminalStatistics::from_records(&records, 1.0).unwrap();
        let d = kolmogorov_distance(&stats.terminal_samples, 0.05).unwrap();
        let params = RateParams::default()
            .with(Param::Epsilon, eps)
            .with(Param::Delta, report.delta.unwrap())
            .with(Param::Rho, 1.0);
        let c1 = evaluate_rate(BoundId::C1, &params).unwrap();
        assert!(d.d_hat <= c1, "n={n}: {} > {c1}", d.d_hat);
        // lattice jump at the origin: P(S_n = 0) / 2
        let atom = binomial_half(n, n / 2) / 2.0;
        assert!(d.d_hat >= atom - d.dkw_band, "n={n}: {} < {atom}", d.d_hat);
    }
}

fn binomial_half(n: usize, k: usize) -> f64 {
    let mut log = 0.0;
    for i in 0..k {
        log += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    (log - n as f64 * 2f64.ln()).exp()
}

#[test]
fn normal_cdf_reference_values() {
    assert_eq!(std_normal_cdf(0.0), 0.5);
    assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    assert!((std_normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-16);
}

fn bundle(steps: &[f64]) -> PathBundle {
    let mut variance = vec![0.0];
    let mut partial_sums = vec![0.0];
    let mut increments = Vec::new();
    for (i, &s) in steps.iter().enumerate() {
        let x = if i % 2 == 0 { s.sqrt() } else { -s.sqrt() };
        increments.push(x);
        partial_sums.push(partial_sums[i] + x);
        variance.push(variance[i] + s);
    }
    PathBundle {
        increments,
        partial_sums,
        variance,
        moments: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn padding_reaches_unit_variance_with_small_steps(
        eps in 0.05f64..=0.5,
        raw in prop::collection::vec(0.0f64..1.0, 1..30),
        seed in any::<u64>(),
    ) {
        let steps: Vec<f64> = raw.iter().map(|u| u * eps * eps).collect();
        let path = bundle(&steps);
        let padded = pad_to_unit_variance(&path, eps, seed, 0).unwrap();
        prop_assert!((padded.terminal_variance - 1.0).abs() <= 1e-9);
        prop_assert_eq!(padded.increments.len(), padded.total_steps);
        prop_assert!(padded.residual <= eps * (1.0 + 1e-12));
        for x in &padded.increments[padded.tau..] {
            prop_assert!(x.abs() <= eps * (1.0 + 1e-12));
        }
        let total: f64 = padded.second_moments.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn stopped_residual_is_bounded_by_the_last_step(
        eps in 0.05f64..=0.5,
        raw in prop::collection::vec(0.0f64..1.0, 1..40),
    ) {
        let steps: Vec<f64> = raw.iter().map(|u| u * eps * eps).collect();
        let path = bundle(&steps);
        for variant in [StopVariant::SupLe1, StopVariant::InfGe1] {
            let r = restrict_to_v(std::slice::from_ref(&path), variant, eps).unwrap();
            prop_assert!(r.holds());
            let in_hypothesis = path.terminal_variance() >= 1.0 - 1e-12;
            prop_assert_eq!(r.out_of_hypothesis.is_empty(), in_hypothesis);
        }
    }
}
