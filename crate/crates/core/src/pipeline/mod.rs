//! Data generation, training, sampling, evaluation and persistence.

mod checkpoint;
mod generate;
mod svg;
mod synth;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use generate::{
    evaluate, evaluate_checkpoint, sample_motion, DensityReport, EvalProtocol, EvaluationReport, GenerationRequest,
    GroundTruth, ModelGenerator, MotionGenerator,
};
pub use svg::trajectory_svg;
pub use synth::{generate_synthetic, stack_features, SyntheticSpec};
pub use train::{train, train_with_progress, EpochRecord, TrainLog, TrainOutcome};
