use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use dgan_core::anchors::{kmeans_anchors, normalize_future, uniform_sample_anchors, AnchorSet};
use dgan_core::data::load_scenario_dir;
use dgan_core::scene::{target_ids, AgentClass, AgentFrame, Point2, Scenario, TargetRule};
use dgan_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    /// Seeded k-means over normalized futures.
    Kmeans,
    /// K futures per class sampled without replacement.
    Uniform,
    /// Validate and pass through an existing anchor JSON.
    ManualFile,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    /// Scenario directory supplying ground-truth futures.
    #[arg(long, required_unless_present = "manual")]
    pub data: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Method::Kmeans)]
    pub method: Method,

    /// Anchors per class.
    #[arg(long, default_value_t = 20)]
    pub k_per_class: usize,

    /// Anchor JSON to pass through with --method manual-file.
    #[arg(long)]
    pub manual: Option<PathBuf>,

    /// Anchor JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &AnchorsArgs, seed: u64) -> Result<()> {
    let set = match args.method {
        Method::ManualFile => {
            let path = args
                .manual
                .as_ref()
                .ok_or_else(|| Error::Config("--method manual-file needs --manual <file>".into()))?;
            AnchorSet::load(path)?
        }
        Method::Kmeans | Method::Uniform => {
            let dir = args
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("--data <dir> is required to build anchors".into()))?;
            let scenarios = load_scenario_dir(dir)?;
            let futures = collect_normalized_futures(&scenarios)?;
            match args.method {
                Method::Kmeans => kmeans_anchors(&futures, args.k_per_class, seed)?,
                Method::Uniform => uniform_sample_anchors(&futures, args.k_per_class, seed)?,
                Method::ManualFile => unreachable!(),
            }
        }
    };
    set.save(&args.out)?;
    for ca in &set.classes {
        match &ca.populations {
            Some(pops) => println!(
                "{}: {} anchors, cluster populations {:?}",
                ca.class.name(),
                ca.trajectories.len(),
                pops
            ),
            None => println!("{}: {} anchors", ca.class.name(), ca.trajectories.len()),
        }
    }
    println!("wrote anchors to {}", args.out.display());
    Ok(())
}

/// Ground-truth futures of every fully observed target, expressed in that
/// agent's frame and pooled by class.
pub fn collect_normalized_futures(
    scenarios: &[Scenario],
) -> Result<BTreeMap<AgentClass, Vec<Vec<Point2>>>> {
    let mut pool: BTreeMap<AgentClass, Vec<Vec<Point2>>> = BTreeMap::new();
    for scenario in scenarios {
        for id in target_ids(scenario, TargetRule::FullObserved) {
            let track = scenario.agents.iter().find(|a| a.agent_id == id).expect("target id");
            if scenario.future_of(id).is_none() {
                continue;
            }
            let frame = AgentFrame::for_track(track, scenario.t_ob)?;
            let future = normalize_future(track, &frame, scenario.t_ob, scenario.t_f)?;
            pool.entry(track.class).or_default().push(future);
        }
    }
    if pool.is_empty() {
        return Err(Error::InsufficientData("no complete ground-truth futures in the data".into()));
    }
    Ok(pool)
}
