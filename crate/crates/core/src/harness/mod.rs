//! Configuration, replay, the training loop, checkpoints and ablations.

pub mod ablate;
pub mod buffer;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod train;

pub use ablate::{parse_modes, parse_seeds, run_ablation};
pub use buffer::{BufferMeta, ReplayBuffer, Transition};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ExperimentConfig, Precision};
pub use train::{
    eval_skills, evaluate, evaluate_checkpoint, init_state, load_instructor, run_training, run_training_with,
    state_from_checkpoint, TrainingOutcome, TrainingState,
};
