use std::path::PathBuf;

use clap::Args;

use dgan_core::baselines::{
    linear_baseline, lstm_baseline, train_lstm_baseline, LstmBaselineConfig, LstmTrainOptions,
};
use dgan_core::data::load_scenario_dir;
use dgan_core::graph::build_graph;
use dgan_core::metrics::{ade, baseline_row, evaluate_prediction, fde, EvalReport};
use dgan_core::model::forward;
use dgan_core::raster::{rasterize, scenario_center};
use dgan_core::scene::{target_ids, Scenario, TargetRule, Track};
use dgan_core::{Error, Point2, Result};

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Scenario directory to score.
    #[arg(long)]
    pub data: PathBuf,

    /// Comma-separated extra rows: any of `linear`, `lstm`, or `none`.
    #[arg(long, default_value = "linear")]
    pub baselines: String,

    /// Report CSV to write.
    #[arg(long)]
    pub out: PathBuf,

    /// n for the min-over-n-most-probable metrics.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

pub fn run(args: &EvalArgs, seed: Option<u64>) -> Result<()> {
    let (model, anchors, params) = super::predict::load_model(&args.checkpoint)?;
    let mut want_linear = false;
    let mut want_lstm = false;
    for token in args.baselines.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "linear" => want_linear = true,
            "lstm" => want_lstm = true,
            "none" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown baseline {other}; expected linear, lstm or none"
                )))
            }
        }
    }
    if args.top == 0 {
        return Err(Error::Config("--top must be >= 1".into()));
    }
    let n = if args.top > model.total_anchors() {
        log::warn!(
            "--top {} exceeds the {} hypotheses produced; clamping",
            args.top,
            model.total_anchors()
        );
        model.total_anchors()
    } else {
        args.top
    };

    let scenarios = load_scenario_dir(&args.data)?;
    let mut evals = Vec::new();
    let mut linear_errors = Vec::new();
    for scenario in &scenarios {
        let build = build_graph(scenario, scenario.t_ob, model.zone_scale);
        let raster = if model.use_map {
            Some(rasterize(
                &scenario.map,
                scenario_center(scenario),
                model.raster_size,
                model.raster_resolution,
            )?)
        } else {
            None
        };
        let predictions =
            forward(&model, &params, scenario, &build.graph, &anchors, raster.as_ref())?;
        for (track, gt) in scored_targets(scenario) {
            let Some(pred) = predictions.iter().find(|p| p.agent == track.agent_id) else {
                continue;
            };
            evals.push(evaluate_prediction(pred, track.class, &gt, n)?);
            if want_linear {
                let forecast = linear_baseline(track, scenario.t_ob, scenario.horizon_steps())?;
                linear_errors.push((ade(&forecast, &gt)?, fde(&forecast, &gt)?));
            }
        }
    }
    let mut report = EvalReport::from_evals(&evals, n)?;
    if want_linear {
        report.push_row(baseline_row("linear", &linear_errors)?);
    }
    if want_lstm {
        let options = LstmTrainOptions { seed: seed.unwrap_or(0), ..LstmTrainOptions::default() };
        let lstm = train_lstm_baseline(
            &LstmBaselineConfig::default(),
            &options,
            &scenarios,
            TargetRule::FullObserved,
        )?;
        let mut errors = Vec::new();
        for scenario in &scenarios {
            for (track, gt) in scored_targets(scenario) {
                let forecast = lstm_baseline(&lstm, track, scenario.t_ob, scenario.horizon_steps())?;
                errors.push((ade(&forecast, &gt)?, fde(&forecast, &gt)?));
            }
        }
        report.push_row(baseline_row("lstm", &errors)?);
    }
    std::fs::write(&args.out, report.to_csv())?;
    print!("{}", report.to_table());
    println!("wrote report to {}", args.out.display());
    Ok(())
}

/// Fully observed targets with complete ground-truth futures.
fn scored_targets(scenario: &Scenario) -> Vec<(&Track, Vec<Point2>)> {
    target_ids(scenario, TargetRule::FullObserved)
        .into_iter()
        .filter_map(|id| {
            let gt = scenario.future_of(id)?;
            let track = scenario.agents.iter().find(|a| a.agent_id == id)?;
            Some((track, gt))
        })
        .collect()
}
