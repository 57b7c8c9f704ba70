use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use dgan_core::anchors::AnchorSet;
use dgan_core::checkpoint::{load_checkpoint, CheckpointMeta};
use dgan_core::data::load_scenario;
use dgan_core::graph::build_graph;
use dgan_core::metrics::top_n;
use dgan_core::model::{forward, ModelConfig, ModelParams, TrajectoryHypothesis};
use dgan_core::raster::{rasterize, scenario_center};
use dgan_core::scene::AgentId;
use dgan_core::tensor::Tensor;
use dgan_core::{Error, Result};

use crate::svg;

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Scenario JSON to forecast.
    #[arg(long)]
    pub scenario: PathBuf,

    /// Hypotheses kept per agent, ranked by joint probability.
    #[arg(long, default_value_t = 5)]
    pub top: usize,

    /// Output file; `.svg` renders an overlay, anything else is JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Forecast<'a> {
    agent: AgentId,
    class_probs: &'a [f64],
    hypotheses: Vec<&'a TrajectoryHypothesis>,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    top: usize,
    agents: Vec<Forecast<'a>>,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let (model, anchors, params) = load_model(&args.checkpoint)?;
    let scenario = load_scenario(&args.scenario)?;
    let build = build_graph(&scenario, scenario.t_ob, model.zone_scale);
    for id in &build.skipped {
        log::warn!("agent {id} not forecast: no position or speed at the observation boundary");
    }
    let raster = if model.use_map {
        Some(rasterize(
            &scenario.map,
            scenario_center(&scenario),
            model.raster_size,
            model.raster_resolution,
        )?)
    } else {
        None
    };
    let predictions = forward(&model, &params, &scenario, &build.graph, &anchors, raster.as_ref())?;
    if predictions.is_empty() {
        return Err(Error::InsufficientData("no agent in the scenario could be forecast".into()));
    }
    if args.top == 0 {
        return Err(Error::Config("--top must be >= 1".into()));
    }
    let available = model.total_anchors();
    let top = if args.top > available {
        log::warn!("--top {} exceeds the {available} hypotheses produced; clamping", args.top);
        available
    } else {
        args.top
    };
    let forecasts: Vec<Forecast> = predictions
        .iter()
        .map(|p| {
            Ok(Forecast {
                agent: p.agent,
                class_probs: &p.class_probs,
                hypotheses: top_n(p, top)?,
            })
        })
        .collect::<Result<_>>()?;

    let wants_svg = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg"));
    if wants_svg {
        let per_agent: Vec<(AgentId, Vec<&TrajectoryHypothesis>)> =
            forecasts.iter().map(|f| (f.agent, f.hypotheses.clone())).collect();
        std::fs::write(&args.out, svg::render(&scenario, &per_agent))?;
    } else {
        let report = Report { top, agents: forecasts };
        let mut body = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::InvalidValue(format!("encoding forecasts: {e}")))?;
        body.push('\n');
        std::fs::write(&args.out, body)?;
    }
    println!("wrote forecasts for {} agents to {}", predictions.len(), args.out.display());
    Ok(())
}

/// Loads a model checkpoint: configuration and anchors from the sidecar,
/// parameters from the binary store (optimizer state ignored).
pub(crate) fn load_model(path: &Path) -> Result<(ModelConfig, AnchorSet, ModelParams)> {
    let (meta, store) = load_checkpoint(path)?;
    let CheckpointMeta::Dgan { model, anchors } = meta else {
        return Err(Error::Config(format!("{} is not a model checkpoint", path.display())));
    };
    let model_store: BTreeMap<String, Tensor> = store
        .into_iter()
        .filter(|(name, _)| !(name.starts_with("opt.") || name.starts_with("trainer.")))
        .collect();
    let params = ModelParams::from_named(&model, &model_store)?;
    Ok((model, anchors, params))
}
