//! Optimizers, the best-epoch training protocol, early-time gradient
//! probes, data-efficiency sweeps and the MLP permutation test.

mod fit;
mod optim;
mod permutation;
mod probe;
mod sweep;

pub use fit::{
    check_split_alphabets, evaluate, fit, loss_for, loss_node, train, EpochRecord, Learner, Loss, Targets,
    TrainConfig, TrainingLog, DIVERGENCE_THRESHOLD,
};
pub use optim::{OptimState, Optimizer};
pub use permutation::{mlp_permutation_test, PermutationReport};
pub use probe::{directional_derivative, grad_probe, mean_se, CopyProbe, ProbeReport};
pub use sweep::{
    data_efficiency_sweep, median, median_test_loss, spearman, sweep_csv, sweep_vocab, CellFailure, SweepConfig,
    SweepOutcome, SweepRow, Variant,
};
