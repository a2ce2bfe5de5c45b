//! PLDA training from global, conversation-local or pooled speaker labels,
//! with LLR scoring, EER evaluation and a synthetic corpus generator.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod plda;
pub mod preprocess;
pub mod synth;
mod textio;

#[cfg(test)]
mod testutil;

pub use data::{
    build_global_view, build_local_view, build_pooled_view, read_dataset, write_dataset, Dataset, LabelStrategy,
    LabelView, UtteranceRecord,
};
pub use error::{Error, Result};
pub use eval::{compute_eer, generate_trials, EvalReport, Strategy, SweepGrid, TrialSet};
pub use plda::{load_model, save_model, train_em, PldaModel, TrainConfig, TrainOutcome};
pub use preprocess::{cosine_score, Preprocessor};
pub use synth::SynthConfig;
