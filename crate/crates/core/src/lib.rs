//! Spatial regression with a thermodynamic regime mixture.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the precision for callers that do
//! not need the choice.

pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod tabular;
pub mod training;

pub use baselines::{fit_baseline, fit_dnn, fit_gnn, fit_ols, BaselineKind, FittedBaseline, NetConfig};
pub use diagnostics::{finite_difference_check, gradient_matching, sensitivity_fields, SensitivityAtlas};
pub use error::{Error, Result};
pub use evaluation::{hyper_search, regime_usage, run_cv, CvOptions, CvReport, GridPoint, Protocol, SearchGrid};
pub use graph::{
    block_partition, build_knn_graph, morans_i, random_folds, training_subgraph, BlockPartition, SpatialGraph,
};
pub use model::{
    assemble, backward, forward, forward_with_cache, init_params, input_sensitivities, positive_transform,
    Checkpoint, ForwardOutputs, InputSensitivities, ModelConfig, ModelKind, Upstream, ZegnnParams,
};
pub use scalar::Scalar;
pub use synthetic::{generate_scenario, GroundTruthFields, ScenarioKind, ScenarioSpec};
pub use training::{fit, loss, predict, FittedModel, LossParts, TrainConfig, TrainReport};
pub use tabular::{load_dataset, write_dataset, RoleSchema, SpatialDataset, StandardInputs, TrainStats, ZScore};

pub type Dataset = SpatialDataset<f64>;
pub type Params = ZegnnParams<f64>;
pub type Outputs = ForwardOutputs<f64>;
pub type Dataset32 = SpatialDataset<f32>;
pub type Params32 = ZegnnParams<f32>;
pub type Outputs32 = ForwardOutputs<f32>;
