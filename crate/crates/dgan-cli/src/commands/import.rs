use std::path::PathBuf;

use clap::Args;

use dgan_core::data::{load_ethucy, save_scenario, window_scenarios, ColumnOrder, WindowOptions};
use dgan_core::scene::DistanceUnit;
use dgan_core::{Error, Result};

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Whitespace-separated recording, one observation per line.
    #[arg(long)]
    pub input: PathBuf,

    /// Column order, e.g. "frame,id,x,y". Some distributions swap x and y,
    /// so this is never guessed.
    #[arg(long, default_value = "frame,id,x,y")]
    pub columns: String,

    /// Seconds between consecutive frames in the recording.
    #[arg(long, default_value_t = 0.4)]
    pub frame_period: f64,

    /// Observed steps per window.
    #[arg(long, default_value_t = 8)]
    pub t_ob: usize,

    /// Future steps per window.
    #[arg(long, default_value_t = 12)]
    pub t_f: usize,

    /// Timeline steps between consecutive window starts.
    #[arg(long, default_value_t = 20)]
    pub stride: usize,

    /// Directory receiving one JSON file per window.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &ImportArgs) -> Result<()> {
    let columns = ColumnOrder::parse(&args.columns)?;
    let dataset = load_ethucy(&args.input, columns, args.frame_period)?;
    let options = WindowOptions {
        t_ob_steps: args.t_ob,
        t_f_steps: args.t_f,
        stride: args.stride,
        frame_period: args.frame_period,
        unit: DistanceUnit::Meters,
    };
    let scenarios = window_scenarios(&dataset.tracks, &options)?;
    if scenarios.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} is too short for one {}-step window",
            args.input.display(),
            options.window_len()
        )));
    }
    std::fs::create_dir_all(&args.out)?;
    for (i, scenario) in scenarios.iter().enumerate() {
        save_scenario(scenario, &args.out.join(format!("scenario_{i:04}.json")))?;
    }
    println!(
        "imported {} tracks into {} scenarios at {}",
        dataset.tracks.len(),
        scenarios.len(),
        args.out.display()
    );
    Ok(())
}
