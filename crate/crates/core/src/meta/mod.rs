//! The one-step bilevel loop: a virtual SGD step, finite-difference
//! hypergradients for the training-time policy, test-time policy steps on
//! reverted predictions, and the committed parameter update.

mod config;
mod history;
mod hypergrad;
mod steps;
mod trainer;

pub use config::{Mode, PolicyInit, RunConfig};
pub use history::{append_history, read_history, truncate_history};
pub use hypergrad::{finite_difference_hypergrad, virtual_step, Hypergrad, PROBE_RADIUS};
pub use steps::{tea_policy_update, tea_step, tra_policy_step, TeaStepRecord};
pub use trainer::{
    initial_tea_policy, initial_tra_policy, refine_tea, tea_ops_for, tra_slots_for, train, IterationRecord,
    MetaState, PolicyEvent, TrainBatch, Trainer,
};
