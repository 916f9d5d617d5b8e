//! End-to-end orchestration: data, augmentation, training, evaluation,
//! ablations, self-checks and the command line.

pub mod ablate;
pub mod augment;
pub mod check;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;

pub use ablate::{run_ablation, AblationReport, AblationRow};
pub use augment::{augment_normal_noise, augment_occlusion, perturb_eval_variant, EvalVariant};
pub use cli::cli_main;
pub use config::{Pooling, RunConfig};
pub use dataset::{load_dir, load_split, split_rng, synth_split, Dataset};
pub use eval::{evaluate, MetricsReport, PROVENANCE_NOTE};
pub use model::{Model, ObjectPrediction, PreparedObject};
pub use synth::{sample_shape, synth_dataset, LabeledObject, Split, SynthSpec, SHAPES};
pub use train::{train, EpochStats, TrainOutcome};
