//! Training, hold-out validation and the finite-sample diagnostics.

mod diagnostics;
mod holdout;
mod nullspace;
mod optim;
mod probes;
mod report;
mod testbed;
mod train;

pub use diagnostics::{fixed_affine, loss_difference, loss_offset, unbiased_gap, PairedGap};
pub use holdout::{holdout_experiment, HoldoutConfig, HoldoutRun};
pub use nullspace::{
    harmonic_notch, nullspace_experiment, shift_invariant_atoms, NullspaceConfig, NullspaceResult, NullspaceRow,
};
pub use optim::{Optimizer, OptimizerSpec};
pub use probes::{
    gap_experiment, gmm_gap_config, gradient_variance_probe, noisier2noise_equivalence, variance_probe, GapConfig, GapResult,
    GradientVarianceProbe, Noisier2NoiseCheck, VarianceProbe, DEFAULT_REPEATS,
};
pub use report::{content_hash, timestamp_now, ExperimentReport, MetricRow};
pub use testbed::{
    affine_denoising_mse, fixed_operator, low_rank_gaussian, nullspace_mse, oracle_mse, positive_two_component,
    single_gaussian, test_time_errors, two_component, Testbed, TrainData,
};
pub use train::{multipliers, train, EpochRecord, TrainConfig, TrainOutcome};
