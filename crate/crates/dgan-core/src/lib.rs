//! Trajectory prediction for mixed traffic: vehicles, cyclists and
//! pedestrians share one model that encodes per-agent history, state and
//! (optionally) a rasterized semantic map, exchanges information over a
//! velocity-dependent interaction graph, and decodes multi-modal futures as
//! anchor trajectories plus per-step offsets.
//!
//! Everything is deterministic given a seed: parameter init, anchor
//! clustering, batch order, rasterization and evaluation all reproduce
//! bit-identical results run to run.

pub mod anchors;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod scene;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scene::{
    AgentClass, AgentFrame, AgentId, MapElement, MapElementKind, Point2, Rect, Scenario,
    SemanticMap, Track, TrafficState,
};
