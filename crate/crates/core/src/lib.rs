//! Temporal knowledge graph reasoning: a relational graph encoder over
//! snapshot sequences of several lengths, a length-aware convolutional
//! decoder, curriculum and online training, and ranking evaluation.
//!
//! Everything runs on a small reverse-mode autodiff tape over dense `f64`
//! tensors, so results are deterministic for a fixed seed.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod online;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use config::KeyValues;
pub use data::{
    add_inverse_relations, load_quadruples, save_dataset, synth_generate, verify_pattern_log,
    PatternLog, PatternTemplate, Quadruple, Snapshot, Split, SynthConfig, TkgDataset, Triple,
};
pub use encoder::SkipKind;
pub use error::{Error, Result};
pub use eval::{
    evaluate, EvalOptions, FilterMode, Metrics, MetricsReport, RankingResult, Scorer, TieRule,
};
pub use model::{Cen, ModelConfig};
pub use online::{run_online, OnlineConfig, OnlineReport, TrMode};
pub use params::ParamStore;
pub use tape::{Activation, Tape, Var};
pub use tensor::Tensor;
pub use trainer::{run_curriculum, CurriculumOutcome, CurriculumState, TrainConfig};
