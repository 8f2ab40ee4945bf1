//! Split a layered CNN between a trusted enclave and an untrusted
//! accelerator: model graphs with partition points, a desk-scale inference
//! engine with input gradients, a calibrated runtime cost model, SSIM-scored
//! feature-map inversion, a privacy-constrained planner and a split-execution
//! simulator that audits what crosses the trust boundary.

pub mod arch;
pub mod attack;
pub mod chart;
pub mod cli;
pub mod cost;
pub mod engine;
pub mod error;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod planner;
pub mod privacy;
pub mod ssim;
pub mod tensor;

pub use arch::{build_architecture, build_architecture_seeded, toy_cnn};
pub use attack::{invert_feature_map, invert_feature_map_traced, AttackConfig, Reconstruction};
pub use cost::{CostProfile, PointCost, RuntimeBreakdown, TransferModel};
pub use engine::{backward, forward, forward_prefix, forward_until, input_gradient, trace, Trace};
pub use error::{Error, Result};
pub use graph::{
    BlockKind, BlockTag, LayerCensus, LayerKind, LayerParams, LayerSpec, ModelGraph,
    PartitionAssignment, PartitionPoint, Source,
};
pub use pipeline::{simulate_pipeline, Artifact, LedgerEvent, PipelineRun, TrustLedger, Zone};
pub use planner::{
    brute_force_plan, plan, Alternative, Decision, FullEnclaveReason, PartitionPlan, PlanRequest,
};
pub use privacy::{evaluate_privacy, select_optimal_partition, PointPrivacy, PrivacyReport};
pub use ssim::{ssim, SsimParams};
pub use tensor::Tensor;
