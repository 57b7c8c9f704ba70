use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use dgan_core::anchors::AnchorSet;
use dgan_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use dgan_core::data::load_scenario_dir;
use dgan_core::model::{ModelConfig, ModelParams};
use dgan_core::scene::{Scenario, TargetRule};
use dgan_core::training::{
    prepare_scenario, Optimizer, PreparedScenario, Trainer, TrainingConfig, LOG_HEADER,
};
use dgan_core::{Error, Result};

/// On-disk training configuration: a `model` section and a `training`
/// section, each falling back to defaults key by key.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFileConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl TrainFileConfig {
    pub fn load(path: &Path) -> Result<TrainFileConfig> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scenario directory to train on.
    #[arg(long)]
    pub data: PathBuf,

    /// Anchor JSON; required unless resuming (checkpoints embed theirs).
    #[arg(long)]
    pub anchors: Option<PathBuf>,

    /// Config JSON with `model` and `training` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Checkpoint to write; a `.json` sidecar appears next to it.
    #[arg(long)]
    pub out: PathBuf,

    /// CSV loss log to write.
    #[arg(long)]
    pub log: Option<PathBuf>,

    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Override the configured batch size (scenarios per step).
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Override the configured learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Override the configured trajectory-loss weight.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Override how often (in steps) the checkpoint is rewritten;
    /// 0 writes only at the end.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

pub fn run(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => TrainFileConfig::load(path)?,
        None => TrainFileConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.training.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.training.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.training.learning_rate = v;
    }
    if let Some(v) = args.alpha {
        cfg.training.alpha = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.training.checkpoint_every = v;
    }
    if let Some(v) = seed {
        cfg.training.seed = v;
    }
    cfg.training.validate()?;

    let scenarios = load_scenario_dir(&args.data)?;
    let mut trainer = match &args.resume {
        Some(ckpt) => {
            let (meta, store) = load_checkpoint(ckpt)?;
            let CheckpointMeta::Dgan { model, anchors } = meta else {
                return Err(Error::Config(format!(
                    "{} is not a model checkpoint",
                    ckpt.display()
                )));
            };
            if args.anchors.is_some() {
                log::warn!("--anchors ignored on resume; the checkpoint embeds its anchor set");
            }
            let prepared = prepare_all(&model, &anchors, scenarios)?;
            Trainer::from_snapshot(model, cfg.training.clone(), anchors, prepared, &store)?
        }
        None => {
            let anchors_path = args.anchors.as_ref().ok_or_else(|| {
                Error::Config("--anchors <file> is required unless resuming".into())
            })?;
            let anchors = AnchorSet::load(anchors_path)?;
            let params = ModelParams::init(&cfg.model, cfg.training.seed)?;
            let optimizer = Optimizer::new(cfg.training.optimizer);
            let prepared = prepare_all(&cfg.model, &anchors, scenarios)?;
            Trainer::new(cfg.model.clone(), cfg.training.clone(), anchors, params, optimizer, prepared)?
        }
    };

    let mut log_file = match &args.log {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let total = trainer.total_steps();
    let every = trainer.train_config.checkpoint_every;
    while let Some(stats) = trainer.step()? {
        if let Some(f) = &mut log_file {
            writeln!(f, "{}", stats.csv_row())?;
        }
        println!(
            "step {}/{}  class {:.6}  offset {:.6}  total {:.6}",
            stats.step, total, stats.loss_class, stats.loss_offset, stats.loss_total
        );
        if every > 0 && stats.step % every == 0 && stats.step < total {
            save(&args.out, &trainer)?;
        }
    }
    if let Some(f) = &mut log_file {
        f.flush()?;
    }
    save(&args.out, &trainer)?;
    println!("saved checkpoint to {}", args.out.display());
    Ok(())
}

fn prepare_all(
    model: &ModelConfig,
    anchors: &AnchorSet,
    scenarios: Vec<Scenario>,
) -> Result<Vec<PreparedScenario>> {
    scenarios
        .into_iter()
        .map(|s| prepare_scenario(model, anchors, s, TargetRule::FullObserved))
        .collect()
}

fn save(path: &Path, trainer: &Trainer) -> Result<()> {
    save_checkpoint(
        path,
        &CheckpointMeta::Dgan {
            model: trainer.model_config.clone(),
            anchors: trainer.anchors.clone(),
        },
        &trainer.snapshot(),
    )
}
