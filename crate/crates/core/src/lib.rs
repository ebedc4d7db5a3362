//! Martingale CLT rate laboratory: conditional kernels, condition certificates,
//! Kolmogorov distances, Berry-Esseen rate functionals, the padding and stopping
//! constructions, and Doob decompositions of separately Lipschitz functionals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod conditions;
pub mod distance;
pub mod kernel;
pub mod lipschitz;
pub mod normal;
pub mod rng;
pub mod transforms;

pub use bounds::{compare_table, evaluate_rate, verify_smoothing_lemma, BoundId, BoundTable, JointLaw, Param, RateParams};
pub use conditions::{
    certify, certify_auto, check_bernstein, delta_a2, epsilon_min, verify_moment_lemmas, ConditionReport,
    HistorySource, ReportMode,
};
pub use distance::{exact_kolmogorov_discrete, fit_rate, kolmogorov_distance, KolmogorovEstimate, RateFit, RatePoint};
pub use kernel::{
    sample_paths, simulate_terminal, ConditionalKernel, DiscreteLaw, History, KernelError, KernelSpec, PathBundle,
    RegistryKernel, StepDistribution, TerminalStatistics,
};
pub use lipschitz::{
    doob_decompose, epsilon_delta_n, variance_sandwich, verify_a1_lipschitz, CoordinateLaw, CoordinateMetric,
    Functional, LipschitzModel,
};
pub use normal::std_normal_cdf;
pub use rng::ReplicateRng;
pub use transforms::{pad_to_unit_variance, restrict_to_v, stop_time_v, PaddedPath, StopVariant};
