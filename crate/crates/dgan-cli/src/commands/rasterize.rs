use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;

use dgan_core::data::load_scenario;
use dgan_core::raster::{rasterize, scenario_center};
use dgan_core::Result;

#[derive(Debug, Args)]
pub struct RasterizeArgs {
    /// Scenario JSON whose map is rendered.
    #[arg(long)]
    pub scenario: PathBuf,

    /// Output image; `.ppm` writes binary PPM, anything else PNG.
    #[arg(long)]
    pub out: PathBuf,

    /// Square image side in pixels.
    #[arg(long, default_value_t = 200)]
    pub size: usize,

    /// World units per pixel.
    #[arg(long, default_value_t = 0.5)]
    pub resolution: f64,
}

pub fn run(args: &RasterizeArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let image =
        rasterize(&scenario.map, scenario_center(&scenario), args.size, args.resolution)?;
    let wants_ppm = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if wants_ppm {
        let mut f = BufWriter::new(File::create(&args.out)?);
        image.write_ppm(&mut f)?;
    } else {
        image.save_png(&args.out)?;
    }
    println!("wrote {}x{} raster to {}", image.width, image.height, args.out.display());
    Ok(())
}
