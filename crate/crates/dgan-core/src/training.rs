//! Loss functions and the optimization loop: hierarchical classification
//! loss, matched-anchor offset loss, Adam/SGD updates, and a deterministic
//! batching trainer.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{nearest_anchor, normalize_future, AnchorSet};
use crate::error::{Error, Result};
use crate::graph::{build_graph, InteractionGraph};
use crate::model::{
    check_anchor_compat, forward_heads, HeadOutputs, ModelConfig, ModelParams,
};
use crate::raster::{rasterize, scenario_center, RasterImage};
use crate::scene::{target_ids, AgentFrame, AgentId, Point2, Scenario, TargetRule};
use crate::tensor::{Gradients, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the matched-anchor offset loss.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Scenarios per optimization step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> TrainingConfig {
        TrainingConfig {
            alpha: 1.0,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainingConfig> {
        let body = std::fs::read_to_string(path)?;
        let config: TrainingConfig = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}

/// Mean over timesteps of the Euclidean residual between a predicted
/// agent-frame trajectory and the normalized ground truth.
pub fn loss_offset(pred: &[Point2], gt: &[Point2]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(
            "loss_offset",
            format!("lengths {} vs {} (both nonzero) required", pred.len(), gt.len()),
        ));
    }
    let total: f64 = pred.iter().zip(gt).map(|(p, q)| p.distance(*q)).sum();
    Ok(total / pred.len() as f64)
}

/// Negative log of the joint probability of the ground-truth class and
/// anchor, clamped at 1e-12.
pub fn loss_class(
    class_probs: &[f64],
    anchor_probs: &[Vec<f64>],
    c_star: usize,
    k_star: usize,
) -> Result<f64> {
    let pc = class_probs
        .get(c_star)
        .ok_or_else(|| Error::InvalidValue(format!("class index {c_star} out of range")))?;
    let pk = anchor_probs
        .get(c_star)
        .and_then(|a| a.get(k_star))
        .ok_or_else(|| Error::InvalidValue(format!("anchor index {k_star} out of range")))?;
    Ok(-(pc * pk).max(1e-12).ln())
}

/// Tape version of [`loss_offset`] over a `[T, 2]` prediction.
pub fn loss_offset_tape(tape: &mut Tape, pred: &Tensor, gt: &[Point2]) -> Result<Tensor> {
    let t = gt.len();
    if pred.shape() != [t, 2] || t == 0 {
        return Err(Error::shape(
            "loss_offset",
            format!("prediction {:?} vs ground truth of {t} steps", pred.shape()),
        ));
    }
    let flat: Vec<f64> = gt.iter().flat_map(|p| [p.x, p.y]).collect();
    let target = Tensor::new(&[t, 2], flat).expect("length checked");
    let res = tape.sub(pred, &target)?;
    let sq = tape.mul(&res, &res)?;
    let ones = Tensor::filled(&[2, 1], 1.0);
    let step_sq = tape.matmul(&sq, &ones)?;
    let step_sq = tape.reshape(&step_sq, &[t])?;
    let norms = tape.sqrt(&step_sq)?;
    tape.mean(&norms)
}

/// Tape version of [`loss_class`]: `class_probs` is `[C]`,
/// `anchor_probs_class` the `[K_c]` block of the ground-truth class.
pub fn loss_class_tape(
    tape: &mut Tape,
    class_probs: &Tensor,
    anchor_probs_class: &Tensor,
    c_star: usize,
    k_star: usize,
) -> Result<Tensor> {
    if c_star >= class_probs.len() {
        return Err(Error::InvalidValue(format!("class index {c_star} out of range")));
    }
    if k_star >= anchor_probs_class.len() {
        return Err(Error::InvalidValue(format!("anchor index {k_star} out of range")));
    }
    let pc = tape.slice_last(class_probs, c_star, 1)?;
    let pk = tape.slice_last(anchor_probs_class, k_star, 1)?;
    let joint = tape.mul(&pc, &pk)?;
    let joint = tape.clamp_min(&joint, 1e-12)?;
    let log = tape.ln(&joint)?;
    tape.affine(&log, -1.0, 0.0)
}

/// Training target for one agent: ground-truth class/anchor indices and
/// the normalized future.
#[derive(Debug, Clone)]
pub struct TrainTarget {
    pub agent: AgentId,
    /// Index into the model's class list.
    pub class_index: usize,
    /// Matched anchor within the class.
    pub anchor_index: usize,
    /// Ground-truth future in the agent frame.
    pub future: Vec<Point2>,
}

/// Per-agent loss for every target: classification plus the matched
/// anchor's offset loss, per [`loss_class`] and [`loss_offset`]. Returns
/// the (sum, class-part sum, offset-part sum) over agents.
pub fn loss_total_tape(
    tape: &mut Tape,
    config: &ModelConfig,
    anchors: &AnchorSet,
    heads: &BTreeMap<AgentId, &HeadOutputs>,
    targets: &[TrainTarget],
    alpha: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    let t = config.horizon_steps;
    let mut class_sum = Tensor::zeros(&[1]);
    let mut offset_sum = Tensor::zeros(&[1]);
    for target in targets {
        let head = heads
            .get(&target.agent)
            .ok_or_else(|| Error::NotFound(format!("no head outputs for agent {}", target.agent)))?;
        let lc = loss_class_tape(
            tape,
            &head.class_probs,
            &head.anchor_probs[target.class_index],
            target.class_index,
            target.anchor_index,
        )?;
        class_sum = tape.add(&class_sum, &lc)?;

        let class = config.classes[target.class_index];
        let anchor = anchors.anchor(class, target.anchor_index).ok_or_else(|| {
            Error::NotFound(format!(
                "anchor {} of class {}",
                target.anchor_index,
                class.name()
            ))
        })?;
        let row = config.anchor_offset(target.class_index) + target.anchor_index;
        let flat = tape.reshape(&head.offsets, &[config.total_anchors() * t * 2])?;
        let mu = tape.slice_last(&flat, row * t * 2, t * 2)?;
        let mu = tape.reshape(&mu, &[t, 2])?;
        let base: Vec<f64> = anchor.iter().flat_map(|p| [p.x, p.y]).collect();
        let base = Tensor::new(&[t, 2], base).expect("anchor length validated");
        let pred = tape.add(&mu, &base)?;
        let lo = loss_offset_tape(tape, &pred, &target.future)?;
        offset_sum = tape.add(&offset_sum, &lo)?;
    }
    let weighted = tape.affine(&offset_sum, alpha, 0.0)?;
    let total = tape.add(&class_sum, &weighted)?;
    Ok((total, class_sum, offset_sum))
}

/// A scenario with everything derivable cached: interaction graph, raster,
/// and per-target anchor assignments.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub graph: InteractionGraph,
    pub raster: Option<RasterImage>,
    pub targets: Vec<TrainTarget>,
}

/// Builds the graph, renders the map once, and assigns each target agent
/// its nearest anchor. Agents outside the graph or with classes the model
/// does not cover are skipped.
pub fn prepare_scenario(
    config: &ModelConfig,
    anchors: &AnchorSet,
    scenario: Scenario,
    rule: TargetRule,
) -> Result<PreparedScenario> {
    check_anchor_compat(config, anchors)?;
    let build = build_graph(&scenario, scenario.t_ob, config.zone_scale);
    let raster = if config.use_map {
        Some(rasterize(
            &scenario.map,
            scenario_center(&scenario),
            config.raster_size,
            config.raster_resolution,
        )?)
    } else {
        None
    };
    let mut targets = Vec::new();
    for id in target_ids(&scenario, rule) {
        if !build.graph.contains(id) {
            continue;
        }
        let track = scenario.agent(id).expect("target id from scenario");
        let Some(class_index) = config.class_index(track.class) else {
            log::warn!("agent {id}: class {} not covered by the model, skipped", track.class.name());
            continue;
        };
        if scenario.future_of(id).is_none() {
            log::warn!("agent {id}: incomplete ground-truth future, skipped");
            continue;
        }
        let frame = AgentFrame::for_track(track, scenario.t_ob)?;
        let future = normalize_future(track, &frame, scenario.t_ob, scenario.t_f)?;
        let anchor_index = nearest_anchor(anchors, track.class, &future)?;
        targets.push(TrainTarget { agent: id, class_index, anchor_index, future });
    }
    Ok(PreparedScenario { scenario, graph: build.graph, raster, targets })
}

/// Adam moment estimates, keyed like the parameter store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Optimizer {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState {
                m: BTreeMap::new(),
                v: BTreeMap::new(),
                step: 0,
            }),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    /// Called once per step before per-tensor updates.
    pub(crate) fn begin_step(&mut self) {
        if let Optimizer::Adam(state) = self {
            state.step += 1;
        }
    }

    pub(crate) fn update(&mut self, name: &str, value: &mut Tensor, grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => value.update(|data| {
                for (x, g) in data.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }),
            Optimizer::Adam(state) => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; grad.len()]);
                let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; grad.len()]);
                let bc1 = 1.0 - BETA1.powi(state.step as i32);
                let bc2 = 1.0 - BETA2.powi(state.step as i32);
                value.update(|data| {
                    for i in 0..grad.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                });
            }
        }
    }

    /// Optimizer state as named tensors for checkpointing.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        match self {
            Optimizer::Sgd => Vec::new(),
            Optimizer::Adam(state) => {
                let mut out = vec![(
                    "opt.step".to_string(),
                    Tensor::new(&[1], vec![state.step as f64]).expect("scalar"),
                )];
                for (name, m) in &state.m {
                    out.push((format!("opt.m.{name}"), Tensor::new(&[m.len()], m.clone()).expect("vector")));
                }
                for (name, v) in &state.v {
                    out.push((format!("opt.v.{name}"), Tensor::new(&[v.len()], v.clone()).expect("vector")));
                }
                out
            }
        }
    }

    /// Restores optimizer state from checkpoint tensors; absent state
    /// yields a fresh optimizer of the requested kind.
    pub fn from_named(kind: OptimizerKind, store: &BTreeMap<String, Tensor>) -> Optimizer {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => {
                let step = store.get("opt.step").map(|t| t.data()[0] as u64).unwrap_or(0);
                let mut m = BTreeMap::new();
                let mut v = BTreeMap::new();
                for (name, t) in store {
                    if let Some(rest) = name.strip_prefix("opt.m.") {
                        m.insert(rest.to_string(), t.data().to_vec());
                    } else if let Some(rest) = name.strip_prefix("opt.v.") {
                        v.insert(rest.to_string(), t.data().to_vec());
                    }
                }
                Optimizer::Adam(AdamState { m, v, step })
            }
        }
    }
}

/// Loss values from one optimization step, per-agent means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss_class: f64,
    pub loss_offset: f64,
    pub loss_total: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "step,loss_class,loss_offset,loss_total,wall_ms";

impl StepStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.3}",
            self.step, self.loss_class, self.loss_offset, self.loss_total, self.wall_ms
        )
    }
}

/// One optimization step over a batch: forward on a fresh tape, summed
/// loss averaged over target agents, backward, parameter update.
pub fn train_step(
    config: &ModelConfig,
    train: &TrainingConfig,
    anchors: &AnchorSet,
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    batch: &[&PreparedScenario],
) -> Result<StepStats> {
    let started = Instant::now();
    let n_agents: usize = batch.iter().map(|p| p.targets.len()).sum();
    if n_agents == 0 {
        return Err(Error::InsufficientData("batch has no target agents".into()));
    }
    let mut tape = Tape::new();
    let tracked = params.tracked(&mut tape);
    let mut total = Tensor::zeros(&[1]);
    let mut class_part = Tensor::zeros(&[1]);
    let mut offset_part = Tensor::zeros(&[1]);
    for prepared in batch {
        let heads = forward_heads(
            &mut tape,
            config,
            &tracked,
            &prepared.scenario,
            &prepared.graph,
            prepared.raster.as_ref(),
        )?;
        let by_agent: BTreeMap<AgentId, &HeadOutputs> =
            heads.iter().map(|h| (h.agent, h)).collect();
        let (t, c, o) = loss_total_tape(
            &mut tape,
            config,
            anchors,
            &by_agent,
            &prepared.targets,
            train.alpha,
        )?;
        total = tape.add(&total, &t)?;
        class_part = tape.add(&class_part, &c)?;
        offset_part = tape.add(&offset_part, &o)?;
    }
    let scale = 1.0 / n_agents as f64;
    let mean_loss = tape.affine(&total, scale, 0.0)?;
    let grads: Gradients = tape.backward(&mean_loss)?;

    optimizer.begin_step();
    for ((name, master), (_, leaf)) in params.named().iter().zip(tracked.named().iter()) {
        if let Some(g) = grads.of(leaf) {
            let mut updated = master.detach();
            optimizer.update(name, &mut updated, g, train.learning_rate);
            apply_update(params, name, updated);
        }
    }
    Ok(StepStats {
        step: 0,
        loss_class: class_part.data()[0] * scale,
        loss_offset: offset_part.data()[0] * scale,
        loss_total: mean_loss.data()[0],
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Writes an updated tensor back into the matching params slot.
fn apply_update(params: &mut ModelParams, name: &str, value: Tensor) {
    let slot: &mut Tensor = match name {
        "map_mlp.w" => &mut params.map_mlp.as_mut().expect("map branch present").w,
        "map_mlp.b" => &mut params.map_mlp.as_mut().expect("map branch present").b,
        "traj_embed.w" => &mut params.traj_embed.w,
        "traj_embed.b" => &mut params.traj_embed.b,
        "lstm.w_ih" => &mut params.lstm.w_ih,
        "lstm.w_hh" => &mut params.lstm.w_hh,
        "lstm.bias" => &mut params.lstm.bias,
        "state_mlp.w" => &mut params.state_mlp.w,
        "state_mlp.b" => &mut params.state_mlp.b,
        _ => {
            let mut parts = name.split('.');
            let family = parts.next().unwrap_or_default();
            let index: usize = parts.next().and_then(|s| s.parse().ok()).expect("indexed name");
            let field = parts.next().unwrap_or_default();
            match (family, field) {
                ("cnn", "kernels") => &mut params.cnn[index].kernels,
                ("cnn", "bias") => &mut params.cnn[index].bias,
                ("gat", "w") => &mut params.gat[index].w,
                ("gat", "a") => &mut params.gat[index].a,
                ("head_class", "w") => &mut params.head_class[index].w,
                ("head_class", "b") => &mut params.head_class[index].b,
                ("head_offset", "w") => &mut params.head_offset[index].w,
                ("head_offset", "b") => &mut params.head_offset[index].b,
                _ => panic!("unknown parameter name {name}"),
            }
        }
    };
    *slot = value;
}

/// Deterministic epoch-batching training loop. Each epoch visits every
/// prepared scenario once in a seed-derived order.
pub struct Trainer {
    pub model_config: ModelConfig,
    pub train_config: TrainingConfig,
    pub anchors: AnchorSet,
    pub params: ModelParams,
    pub optimizer: Optimizer,
    scenarios: Vec<PreparedScenario>,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(
        model_config: ModelConfig,
        train_config: TrainingConfig,
        anchors: AnchorSet,
        params: ModelParams,
        optimizer: Optimizer,
        scenarios: Vec<PreparedScenario>,
    ) -> Result<Trainer> {
        model_config.validate()?;
        train_config.validate()?;
        check_anchor_compat(&model_config, &anchors)?;
        let scenarios: Vec<PreparedScenario> =
            scenarios.into_iter().filter(|p| !p.targets.is_empty()).collect();
        if scenarios.is_empty() {
            return Err(Error::InsufficientData("no scenarios with target agents".into()));
        }
        let mut trainer = Trainer {
            model_config,
            train_config,
            anchors,
            params,
            optimizer,
            scenarios,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            step: 0,
        };
        trainer.reshuffle();
        Ok(trainer)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train_config.seed);
        rng.set_stream(self.epoch as u64);
        self.order = (0..self.scenarios.len()).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.scenarios.len().div_ceil(self.train_config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.train_config.epochs
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.train_config.epochs
    }

    /// Runs one batch; returns `None` once all epochs are exhausted.
    pub fn step(&mut self) -> Result<Option<StepStats>> {
        if self.is_done() {
            return Ok(None);
        }
        let end = (self.cursor + self.train_config.batch_size).min(self.order.len());
        let batch: Vec<&PreparedScenario> =
            self.order[self.cursor..end].iter().map(|&i| &self.scenarios[i]).collect();
        let mut stats = train_step(
            &self.model_config,
            &self.train_config,
            &self.anchors,
            &mut self.params,
            &mut self.optimizer,
            &batch,
        )?;
        self.step += 1;
        stats.step = self.step;
        self.cursor = end;
        if self.cursor >= self.order.len() {
            // Reshuffle even after the final epoch so the cursor always
            // points at the start of the next epoch; a snapshot of a
            // finished run can then be resumed with a larger epoch budget.
            self.epoch += 1;
            self.reshuffle();
        }
        Ok(Some(stats))
    }

    /// Everything needed to continue this run later: model parameters,
    /// optimizer state, and the position within the epoch schedule.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        let mut store: BTreeMap<String, Tensor> = self.params.named().into_iter().collect();
        store.extend(self.optimizer.named());
        store.insert("trainer.epoch".into(), Tensor::scalar(self.epoch as f64));
        store.insert("trainer.cursor".into(), Tensor::scalar(self.cursor as f64));
        store.insert("trainer.step".into(), Tensor::scalar(self.step as f64));
        store
    }

    /// Rebuilds a trainer from a [`Trainer::snapshot`] store. Batch order
    /// is recomputed from the seed, so stepping resumes the interrupted
    /// sequence exactly.
    pub fn from_snapshot(
        model_config: ModelConfig,
        train_config: TrainingConfig,
        anchors: AnchorSet,
        scenarios: Vec<PreparedScenario>,
        store: &BTreeMap<String, Tensor>,
    ) -> Result<Trainer> {
        let model_store: BTreeMap<String, Tensor> = store
            .iter()
            .filter(|(name, _)| !(name.starts_with("opt.") || name.starts_with("trainer.")))
            .map(|(name, tensor)| (name.clone(), tensor.clone()))
            .collect();
        let params = ModelParams::from_named(&model_config, &model_store)?;
        let optimizer = Optimizer::from_named(train_config.optimizer, store);
        let counter = |name: &str| -> Result<usize> {
            let t = store
                .get(name)
                .ok_or_else(|| Error::NotFound(format!("{name} missing from checkpoint")))?;
            if t.len() != 1 {
                return Err(Error::shape("from_snapshot", format!("{name} must be a scalar")));
            }
            Ok(t.data()[0] as usize)
        };
        let epoch = counter("trainer.epoch")?;
        let cursor = counter("trainer.cursor")?;
        let step = counter("trainer.step")?;
        let mut trainer =
            Trainer::new(model_config, train_config, anchors, params, optimizer, scenarios)?;
        trainer.epoch = epoch;
        if !trainer.is_done() {
            trainer.reshuffle();
        }
        trainer.cursor = cursor.min(trainer.order.len());
        trainer.step = step;
        Ok(trainer)
    }
}
