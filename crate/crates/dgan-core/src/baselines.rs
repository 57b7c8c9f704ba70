//! Reference predictors the main model is compared against: a
//! least-squares constant-velocity extrapolation and a plain LSTM
//! encoder-decoder over positions, with no interaction or map terms.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::normalize_future;
use crate::error::{Error, Result};
use crate::model::{uniform_tensor, LinearParams};
use crate::scene::{AgentFrame, Point2, Scenario, TargetRule, Track, target_ids};
use crate::tensor::{lstm_cell, LstmParams, Tape, Tensor};
use crate::training::{loss_offset_tape, Optimizer, OptimizerKind};

/// Constant-velocity forecast: an independent least-squares line fit of x
/// and y against the timestep over the observed window, extrapolated.
pub fn linear_baseline(track: &Track, t_ob: i64, horizon: usize) -> Result<Vec<Point2>> {
    let observed: Vec<(i64, Point2)> =
        track.points.iter().filter(|(t, _)| *t <= t_ob).copied().collect();
    if observed.len() < 2 {
        return Err(Error::InsufficientHistory {
            agent: track.agent_id,
            detail: format!("{} observed points, need at least 2 for a line fit", observed.len()),
        });
    }
    let n = observed.len() as f64;
    let t_mean = observed.iter().map(|(t, _)| *t as f64).sum::<f64>() / n;
    let x_mean = observed.iter().map(|(_, p)| p.x).sum::<f64>() / n;
    let y_mean = observed.iter().map(|(_, p)| p.y).sum::<f64>() / n;
    let mut tt = 0.0;
    let mut tx = 0.0;
    let mut ty = 0.0;
    for (t, p) in &observed {
        let dt = *t as f64 - t_mean;
        tt += dt * dt;
        tx += dt * (p.x - x_mean);
        ty += dt * (p.y - y_mean);
    }
    // All observations share one timestep only if frames collide, which
    // tracks forbid; guard anyway so a malformed track cannot divide by 0.
    let (slope_x, slope_y) = if tt > 0.0 { (tx / tt, ty / tt) } else { (0.0, 0.0) };
    Ok((1..=horizon)
        .map(|k| {
            let t = (t_ob + k as i64) as f64 - t_mean;
            Point2::new(x_mean + slope_x * t, y_mean + slope_y * t)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmBaselineConfig {
    pub embed_dim: usize,
    pub units: usize,
}

impl Default for LstmBaselineConfig {
    fn default() -> LstmBaselineConfig {
        LstmBaselineConfig { embed_dim: 32, units: 32 }
    }
}

impl LstmBaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.units == 0 {
            return Err(Error::Config("lstm baseline dimensions must be nonzero".into()));
        }
        Ok(())
    }
}

/// Encoder-decoder weights: position embedding, one LSTM cell shared by
/// encode and decode, and a displacement readout.
#[derive(Debug, Clone)]
pub struct LstmBaselineParams {
    pub embed: LinearParams,
    pub lstm: LstmParams,
    pub out: LinearParams,
}

impl LstmBaselineParams {
    pub fn init(config: &LstmBaselineConfig, seed: u64) -> Result<LstmBaselineParams> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let embed = LinearParams::init(config.embed_dim, 2, rng);
        let u = config.units;
        let mut lstm = LstmParams {
            w_ih: uniform_tensor(&[4 * u, config.embed_dim], config.embed_dim, rng),
            w_hh: uniform_tensor(&[4 * u, u], u, rng),
            bias: Tensor::zeros(&[4 * u]),
        };
        lstm.bias.update(|b| {
            for v in &mut b[u..2 * u] {
                *v = 1.0;
            }
        });
        let out = LinearParams::init(2, u, rng);
        Ok(LstmBaselineParams { embed, lstm, out })
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        vec![
            ("embed.w".to_string(), self.embed.w.clone()),
            ("embed.b".to_string(), self.embed.b.clone()),
            ("lstm.w_ih".to_string(), self.lstm.w_ih.clone()),
            ("lstm.w_hh".to_string(), self.lstm.w_hh.clone()),
            ("lstm.bias".to_string(), self.lstm.bias.clone()),
            ("out.w".to_string(), self.out.w.clone()),
            ("out.b".to_string(), self.out.b.clone()),
        ]
    }

    pub fn from_named(
        config: &LstmBaselineConfig,
        store: &BTreeMap<String, Tensor>,
    ) -> Result<LstmBaselineParams> {
        let template = LstmBaselineParams::init(config, 0)?;
        let mut fetched = Vec::new();
        for (name, expected) in template.named() {
            let tensor = store
                .get(&name)
                .ok_or_else(|| Error::NotFound(format!("checkpoint tensor {name}")))?;
            if tensor.shape() != expected.shape() {
                return Err(Error::shape(
                    "from_named",
                    format!("{name}: stored {:?}, expected {:?}", tensor.shape(), expected.shape()),
                ));
            }
            fetched.push(tensor.detach());
        }
        let mut it = fetched.into_iter();
        Ok(LstmBaselineParams {
            embed: LinearParams { w: it.next().unwrap(), b: it.next().unwrap() },
            lstm: LstmParams {
                w_ih: it.next().unwrap(),
                w_hh: it.next().unwrap(),
                bias: it.next().unwrap(),
            },
            out: LinearParams { w: it.next().unwrap(), b: it.next().unwrap() },
        })
    }

    fn tracked(&self, tape: &mut Tape) -> LstmBaselineParams {
        LstmBaselineParams {
            embed: LinearParams { w: tape.leaf(&self.embed.w), b: tape.leaf(&self.embed.b) },
            lstm: LstmParams {
                w_ih: tape.leaf(&self.lstm.w_ih),
                w_hh: tape.leaf(&self.lstm.w_hh),
                bias: tape.leaf(&self.lstm.bias),
            },
            out: LinearParams { w: tape.leaf(&self.out.w), b: tape.leaf(&self.out.b) },
        }
    }
}

/// Decodes `horizon` agent-frame positions: the observed window primes
/// the LSTM, then each step embeds the current position, advances the
/// cell, and adds the read-out displacement.
fn decode_agent_frame(
    tape: &mut Tape,
    params: &LstmBaselineParams,
    observed: &[Point2],
    horizon: usize,
) -> Result<Tensor> {
    if observed.is_empty() {
        return Err(Error::InsufficientData("lstm baseline needs observed points".into()));
    }
    let mut state = params.lstm.zero_state();
    let mut position = Tensor::new(&[2], vec![observed[0].x, observed[0].y]).expect("pair");
    for p in observed {
        let x = Tensor::new(&[2], vec![p.x, p.y]).expect("pair");
        let embedded = params.embed.apply(tape, &x)?;
        let embedded = tape.relu(&embedded)?;
        state = lstm_cell(tape, &params.lstm, &embedded, &state)?;
        position = x;
    }
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let embedded = params.embed.apply(tape, &position)?;
        let embedded = tape.relu(&embedded)?;
        state = lstm_cell(tape, &params.lstm, &embedded, &state)?;
        let displacement = params.out.apply(tape, &state.h)?;
        position = tape.add(&position, &displacement)?;
        steps.push(position.clone());
    }
    let rows: Vec<&Tensor> = steps.iter().collect();
    tape.stack_rows(&rows)
}

/// World-frame LSTM forecast for one track.
pub fn lstm_baseline(
    params: &LstmBaselineParams,
    track: &Track,
    t_ob: i64,
    horizon: usize,
) -> Result<Vec<Point2>> {
    let frame = AgentFrame::for_track(track, t_ob)?;
    let observed: Vec<Point2> = track
        .points
        .iter()
        .filter(|(t, _)| *t <= t_ob)
        .map(|(_, p)| frame.to_agent_frame(*p))
        .collect();
    let mut tape = Tape::inactive();
    let decoded = decode_agent_frame(&mut tape, params, &observed, horizon)?;
    let data = decoded.data();
    Ok((0..horizon)
        .map(|i| frame.from_agent_frame(Point2::new(data[2 * i], data[2 * i + 1])))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmTrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LstmTrainOptions {
    fn default() -> LstmTrainOptions {
        LstmTrainOptions { learning_rate: 1e-3, epochs: 20, seed: 0 }
    }
}

/// Fits the LSTM baseline on every target agent of every scenario with
/// Adam, one scenario per step, mean trajectory loss over its targets.
pub fn train_lstm_baseline(
    config: &LstmBaselineConfig,
    options: &LstmTrainOptions,
    scenarios: &[Scenario],
    rule: TargetRule,
) -> Result<LstmBaselineParams> {
    let mut cases = Vec::new();
    for scenario in scenarios {
        let horizon = scenario.horizon_steps();
        for id in target_ids(scenario, rule) {
            let track = scenario.agent(id).expect("target id from scenario");
            let Ok(frame) = AgentFrame::for_track(track, scenario.t_ob) else { continue };
            let Ok(future) = normalize_future(track, &frame, scenario.t_ob, scenario.t_f) else {
                continue;
            };
            let observed: Vec<Point2> = track
                .points
                .iter()
                .filter(|(t, _)| *t <= scenario.t_ob)
                .map(|(_, p)| frame.to_agent_frame(*p))
                .collect();
            cases.push((observed, future, horizon));
        }
    }
    if cases.is_empty() {
        return Err(Error::InsufficientData("no trainable agents for the lstm baseline".into()));
    }

    let mut params = LstmBaselineParams::init(config, options.seed)?;
    let mut optimizer = Optimizer::new(OptimizerKind::Adam);
    for _ in 0..options.epochs {
        for (observed, future, horizon) in &cases {
            let mut tape = Tape::new();
            let tracked = params.tracked(&mut tape);
            let decoded = decode_agent_frame(&mut tape, &tracked, observed, *horizon)?;
            let loss = loss_offset_tape(&mut tape, &decoded, future)?;
            let grads = tape.backward(&loss)?;
            optimizer.begin_step();
            for ((name, master), (_, leaf)) in
                params.named().iter().zip(tracked.named().iter())
            {
                if let Some(g) = grads.of(leaf) {
                    let mut updated = master.detach();
                    optimizer.update(name, &mut updated, g, options.learning_rate);
                    write_back(&mut params, name, updated);
                }
            }
        }
    }
    Ok(params)
}

fn write_back(params: &mut LstmBaselineParams, name: &str, value: Tensor) {
    let slot = match name {
        "embed.w" => &mut params.embed.w,
        "embed.b" => &mut params.embed.b,
        "lstm.w_ih" => &mut params.lstm.w_ih,
        "lstm.w_hh" => &mut params.lstm.w_hh,
        "lstm.bias" => &mut params.lstm.bias,
        "out.w" => &mut params.out.w,
        "out.b" => &mut params.out.b,
        _ => panic!("unknown baseline parameter {name}"),
    };
    *slot = value;
}
