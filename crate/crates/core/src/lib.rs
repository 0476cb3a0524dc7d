//! Core library: arena-based reverse-mode autodiff over 64-bit tensors,
//! recurrent sequence models with Monte-Carlo dropout, Gaussian uncertainty
//! heads, ego-motion and object-localization forecasting, a synthetic
//! egocentric driving scenario generator, training loops, and evaluation
//! metrics. Everything is implemented from first principles on the standard
//! library plus small utility crates; no external ML or linear-algebra
//! dependencies.

pub mod ckpt;
pub mod config;
pub mod dataset;
pub mod docsgen;
pub mod dump;
pub mod ego;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod loc;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod uncertainty;
pub mod variants;

pub use ckpt::{load_params, save_params};
pub use config::{config_hash, load_config, RunConfig};
pub use dataset::{generate_splits, read_scenes, write_scenes, DatasetSplits, SplitSpec};
pub use ego::{dead_reckon, fuse_passes, sample_modes, EgoConfig, EgoForecast, EgoModel, OdomStep, Pose2D};
pub use loc::{BoxForecast, BoxState, FlowFeature, LocConfig, LocModel, SampleSettings};
pub use dump::{forecast_scene, forecast_scenes, read_forecasts, write_forecasts, SceneForecast};
pub use error::{Error, Result};
pub use eval::{
    ade_fde, best_of_k, fiou, render_table, render_tsv, run_benchmark, EvalSettings, MetricReport,
    MetricRow,
};
pub use graph::{finite_diff_check, Graph, NodeId};
pub use nn::{DropoutMode, DropoutSpec, ParamStore};
pub use synth::{generate_scene, Camera, EgoKind, Scene, ScenarioConfig, TargetKind, TargetTrack};
pub use tensor::Array;
pub use train::{
    train_ego, train_joint, ModelVariant, PriorSource, TrainConfig, TrainOutcome, UncMode,
};
pub use uncertainty::{fuse, FusedGaussian, Gauss2D};
pub use variants::{registry, Group, VariantCard};
