pub mod anchors;
pub mod eval;
pub mod import;
pub mod predict;
pub mod rasterize;
pub mod synth;
pub mod train;
