use std::path::PathBuf;

use clap::Args;

use dgan_core::data::{save_scenario, synth_scenarios, SynthSpec};
use dgan_core::Result;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec JSON; omitted, a mixed-class default is used.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// Directory receiving one JSON file per scenario.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SynthArgs, seed: u64) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => SynthSpec::load(path)?,
        None => SynthSpec::default(),
    };
    let scenarios = synth_scenarios(&spec, seed)?;
    std::fs::create_dir_all(&args.out)?;
    for (i, scenario) in scenarios.iter().enumerate() {
        save_scenario(scenario, &args.out.join(format!("scenario_{i:04}.json")))?;
    }
    println!("wrote {} scenarios to {}", scenarios.len(), args.out.display());
    Ok(())
}
