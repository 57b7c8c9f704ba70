//! The prediction network: per-agent encoders over map patch, observed
//! trajectory and kinematic state, stacked graph attention layers over the
//! interaction graph, and a two-head output producing hierarchical
//! class/anchor probabilities plus per-anchor offset trajectories.
//!
//! Every encoder input is expressed in the agent-centric frame, so a rigid
//! transform of the world (with the map disabled) leaves the network's
//! outputs unchanged up to the same transform.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::raster::{rasterize, scenario_center, RasterImage};
use crate::scene::{AgentClass, AgentFrame, AgentId, Point2, Scenario, Track, TrafficState};
use crate::tensor::{lstm_cell, LstmParams, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture and problem-geometry settings. Serialized next to every
/// checkpoint so a saved model is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Map-patch embedding width.
    pub d_map: usize,
    /// Trajectory embedding width (also the LSTM hidden width).
    pub d_traj: usize,
    /// State embedding width.
    pub d_state: usize,
    /// Per-point location embedding width feeding the LSTM.
    pub d_embed: usize,
    pub gat_layers: usize,
    pub gat_hidden: usize,
    /// Hidden width of the two output heads.
    pub head_hidden: usize,
    /// Convolution stack over the rendered map, resolution-preserving by
    /// default so patches need no upsampling.
    pub cnn: Vec<ConvLayerSpec>,
    /// Classes the model predicts over, in output order.
    pub classes: Vec<AgentClass>,
    /// Anchors per class, aligned with `classes`.
    pub k_c: Vec<usize>,
    pub t_ob_steps: usize,
    pub horizon_steps: usize,
    /// Side length of the square feature patch per agent, odd.
    pub patch: usize,
    pub raster_size: usize,
    pub raster_resolution: f64,
    /// Attention-zone length multiplier when building the graph.
    pub zone_scale: f64,
    /// With the map disabled the CNN branch has no parameters at all and
    /// the fused embedding shrinks accordingly.
    pub use_map: bool,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            d_map: 256,
            d_traj: 256,
            d_state: 128,
            d_embed: 64,
            gat_layers: 2,
            gat_hidden: 640,
            head_hidden: 128,
            cnn: vec![
                ConvLayerSpec { out_channels: 8, kernel: 3, stride: 1 },
                ConvLayerSpec { out_channels: 16, kernel: 3, stride: 1 },
                ConvLayerSpec { out_channels: 16, kernel: 3, stride: 1 },
                ConvLayerSpec { out_channels: 8, kernel: 3, stride: 1 },
            ],
            classes: vec![AgentClass::Vehicle, AgentClass::Cyclist, AgentClass::Pedestrian],
            k_c: vec![20, 20, 20],
            t_ob_steps: 8,
            horizon_steps: 12,
            patch: 11,
            raster_size: 200,
            raster_resolution: 0.5,
            zone_scale: 0.5,
            use_map: true,
        }
    }
}

impl ModelConfig {
    /// Width of the fused per-agent embedding entering the first GAT layer.
    pub fn fused_dim(&self) -> usize {
        (if self.use_map { self.d_map } else { 0 }) + self.d_traj + self.d_state
    }

    /// Width of the head input: final GAT output concatenated with the
    /// agent's own fused embedding.
    pub fn head_input_dim(&self) -> usize {
        self.gat_hidden + self.fused_dim()
    }

    pub fn state_input_dim(&self) -> usize {
        6 + self.classes.len()
    }

    pub fn total_anchors(&self) -> usize {
        self.k_c.iter().sum()
    }

    pub fn class_index(&self, class: AgentClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// First row of class `ci`'s block in the flattened anchor dimension.
    pub fn anchor_offset(&self, ci: usize) -> usize {
        self.k_c[..ci].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_map", self.d_map),
            ("d_traj", self.d_traj),
            ("d_state", self.d_state),
            ("d_embed", self.d_embed),
            ("gat_layers", self.gat_layers),
            ("gat_hidden", self.gat_hidden),
            ("head_hidden", self.head_hidden),
            ("t_ob_steps", self.t_ob_steps),
            ("horizon_steps", self.horizon_steps),
            ("raster_size", self.raster_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.classes.is_empty() {
            return Err(Error::Config("at least one class required".into()));
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::Config("duplicate class in classes".into()));
        }
        if self.k_c.len() != self.classes.len() {
            return Err(Error::Config(format!(
                "k_c has {} entries for {} classes",
                self.k_c.len(),
                self.classes.len()
            )));
        }
        if self.k_c.iter().any(|&k| k == 0) {
            return Err(Error::Config("every k_c entry must be >= 1".into()));
        }
        if self.patch % 2 == 0 {
            return Err(Error::Config(format!("patch {} must be odd", self.patch)));
        }
        if self.use_map {
            if self.cnn.is_empty() {
                return Err(Error::Config("cnn layer list is empty with use_map".into()));
            }
            for (i, l) in self.cnn.iter().enumerate() {
                if l.out_channels == 0 || l.kernel % 2 == 0 || l.stride == 0 {
                    return Err(Error::Config(format!(
                        "cnn layer {i}: channels >= 1, odd kernel and stride >= 1 required"
                    )));
                }
            }
        }
        if !(self.raster_resolution.is_finite() && self.raster_resolution > 0.0) {
            return Err(Error::Config("raster_resolution must be > 0".into()));
        }
        if !(self.zone_scale.is_finite() && self.zone_scale >= 0.0) {
            return Err(Error::Config("zone_scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("encoding model config: {e}")))?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelConfig> {
        let body = std::fs::read_to_string(path)?;
        let config: ModelConfig = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}

/// Checks that an anchor set lines up with the model's output layout.
pub fn check_anchor_compat(config: &ModelConfig, anchors: &AnchorSet) -> Result<()> {
    if anchors.horizon_steps() != config.horizon_steps {
        return Err(Error::Config(format!(
            "anchor horizon {} != model horizon {}",
            anchors.horizon_steps(),
            config.horizon_steps
        )));
    }
    let counts = anchors.counts();
    if counts.len() != config.classes.len() {
        return Err(Error::Config(format!(
            "anchor set covers {} classes, model has {}",
            counts.len(),
            config.classes.len()
        )));
    }
    for ((class, count), (&want_class, &want_k)) in
        counts.iter().zip(config.classes.iter().zip(&config.k_c))
    {
        if *class != want_class || *count != want_k {
            return Err(Error::Config(format!(
                "anchor set has {count} anchors for {}, model wants {want_k} for {}",
                class.name(),
                want_class.name()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LinearParams {
    /// `[out, in]`.
    pub w: Tensor,
    /// `[out]`.
    pub b: Tensor,
}

impl LinearParams {
    pub(crate) fn init(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> LinearParams {
        LinearParams { w: uniform_tensor(&[out, inp], inp, rng), b: Tensor::zeros(&[out]) }
    }

    pub fn apply(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        let y = tape.matvec(&self.w, x)?;
        tape.add(&y, &self.b)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayerParams {
    /// `[F, C, k, k]`.
    pub kernels: Tensor,
    /// `[F]`.
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct GatLayerParams {
    /// Shared projection, `[hidden, in]`.
    pub w: Tensor,
    /// Attention vector over a projected pair, `[2 * hidden]`.
    pub a: Tensor,
}

/// Every learned tensor in the network. With `use_map = false` the CNN
/// stack and map MLP are absent entirely.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cnn: Vec<ConvLayerParams>,
    pub map_mlp: Option<LinearParams>,
    pub traj_embed: LinearParams,
    pub lstm: LstmParams,
    pub state_mlp: LinearParams,
    pub gat: Vec<GatLayerParams>,
    pub head_class: Vec<LinearParams>,
    pub head_offset: Vec<LinearParams>,
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
pub(crate) fn uniform_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound).collect();
    Tensor::new(shape, data).expect("shape matches construction")
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut cnn = Vec::new();
        let mut map_mlp = None;
        if config.use_map {
            let mut c_in = 3usize;
            for spec in &config.cnn {
                let fan_in = c_in * spec.kernel * spec.kernel;
                cnn.push(ConvLayerParams {
                    kernels: uniform_tensor(
                        &[spec.out_channels, c_in, spec.kernel, spec.kernel],
                        fan_in,
                        rng,
                    ),
                    bias: Tensor::zeros(&[spec.out_channels]),
                    stride: spec.stride,
                });
                c_in = spec.out_channels;
            }
            let flat = c_in * config.patch * config.patch;
            map_mlp = Some(LinearParams::init(config.d_map, flat, rng));
        }
        let traj_embed = LinearParams::init(config.d_embed, 2, rng);
        let u = config.d_traj;
        let mut lstm = LstmParams {
            w_ih: uniform_tensor(&[4 * u, config.d_embed], config.d_embed, rng),
            w_hh: uniform_tensor(&[4 * u, u], u, rng),
            bias: Tensor::zeros(&[4 * u]),
        };
        // Standard forget-gate bias of +1 so early training does not wipe
        // the cell state.
        lstm.bias.update(|b| {
            for v in &mut b[u..2 * u] {
                *v = 1.0;
            }
        });
        let state_mlp = LinearParams::init(config.d_state, config.state_input_dim(), rng);
        let mut gat = Vec::new();
        let mut in_dim = config.fused_dim();
        for _ in 0..config.gat_layers {
            gat.push(GatLayerParams {
                w: uniform_tensor(&[config.gat_hidden, in_dim], in_dim, rng),
                a: uniform_tensor(&[2 * config.gat_hidden], 2 * config.gat_hidden, rng),
            });
            in_dim = config.gat_hidden;
        }
        let head_in = config.head_input_dim();
        let total = config.total_anchors();
        let head_class = vec![
            LinearParams::init(config.head_hidden, head_in, rng),
            LinearParams::init(config.classes.len() + total, config.head_hidden, rng),
        ];
        let head_offset = vec![
            LinearParams::init(config.head_hidden, head_in, rng),
            LinearParams::init(total * config.horizon_steps * 2, config.head_hidden, rng),
        ];
        Ok(ModelParams { cnn, map_mlp, traj_embed, lstm, state_mlp, gat, head_class, head_offset })
    }

    /// Applies `f` to every learned tensor, preserving structure.
    pub fn map_tensors(&self, mut f: impl FnMut(&Tensor) -> Tensor) -> ModelParams {
        ModelParams {
            cnn: self
                .cnn
                .iter()
                .map(|l| ConvLayerParams {
                    kernels: f(&l.kernels),
                    bias: f(&l.bias),
                    stride: l.stride,
                })
                .collect(),
            map_mlp: self
                .map_mlp
                .as_ref()
                .map(|m| LinearParams { w: f(&m.w), b: f(&m.b) }),
            traj_embed: LinearParams { w: f(&self.traj_embed.w), b: f(&self.traj_embed.b) },
            lstm: LstmParams {
                w_ih: f(&self.lstm.w_ih),
                w_hh: f(&self.lstm.w_hh),
                bias: f(&self.lstm.bias),
            },
            state_mlp: LinearParams { w: f(&self.state_mlp.w), b: f(&self.state_mlp.b) },
            gat: self
                .gat
                .iter()
                .map(|l| GatLayerParams { w: f(&l.w), a: f(&l.a) })
                .collect(),
            head_class: self
                .head_class
                .iter()
                .map(|l| LinearParams { w: f(&l.w), b: f(&l.b) })
                .collect(),
            head_offset: self
                .head_offset
                .iter()
                .map(|l| LinearParams { w: f(&l.w), b: f(&l.b) })
                .collect(),
        }
    }

    /// Registers every tensor as a tape leaf so gradients accumulate.
    pub fn tracked(&self, tape: &mut Tape) -> ModelParams {
        self.map_tensors(|t| tape.leaf(t))
    }

    /// Name/tensor pairs in canonical order, the checkpoint layout.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.cnn.iter().enumerate() {
            out.push((format!("cnn.{i}.kernels"), l.kernels.clone()));
            out.push((format!("cnn.{i}.bias"), l.bias.clone()));
        }
        if let Some(m) = &self.map_mlp {
            out.push(("map_mlp.w".into(), m.w.clone()));
            out.push(("map_mlp.b".into(), m.b.clone()));
        }
        out.push(("traj_embed.w".into(), self.traj_embed.w.clone()));
        out.push(("traj_embed.b".into(), self.traj_embed.b.clone()));
        out.push(("lstm.w_ih".into(), self.lstm.w_ih.clone()));
        out.push(("lstm.w_hh".into(), self.lstm.w_hh.clone()));
        out.push(("lstm.bias".into(), self.lstm.bias.clone()));
        out.push(("state_mlp.w".into(), self.state_mlp.w.clone()));
        out.push(("state_mlp.b".into(), self.state_mlp.b.clone()));
        for (l, layer) in self.gat.iter().enumerate() {
            out.push((format!("gat.{l}.w"), layer.w.clone()));
            out.push((format!("gat.{l}.a"), layer.a.clone()));
        }
        for (name, layers) in
            [("head_class", &self.head_class), ("head_offset", &self.head_offset)]
        {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{name}.{i}.w"), l.w.clone()));
                out.push((format!("{name}.{i}.b"), l.b.clone()));
            }
        }
        out
    }

    /// Rebuilds params from a named store, validating shapes against the
    /// config-derived layout.
    pub fn from_named(config: &ModelConfig, store: &BTreeMap<String, Tensor>) -> Result<ModelParams> {
        let template = ModelParams::init(config, 0)?;
        let expected: Vec<(String, Tensor)> = template.named();
        if store.len() != expected.len() {
            return Err(Error::Config(format!(
                "parameter store has {} tensors, config implies {}",
                store.len(),
                expected.len()
            )));
        }
        let mut loaded: BTreeMap<&str, Tensor> = BTreeMap::new();
        for (name, want) in &expected {
            let got = store
                .get(name)
                .ok_or_else(|| Error::NotFound(format!("parameter {name} missing from store")))?;
            if got.shape() != want.shape() {
                return Err(Error::shape(
                    "from_named",
                    format!("parameter {name}: stored {:?}, config implies {:?}", got.shape(), want.shape()),
                ));
            }
            loaded.insert(name.as_str(), got.detach());
        }
        let take = |name: &str| loaded[name].clone();
        let cnn = (0..template.cnn.len())
            .map(|i| ConvLayerParams {
                kernels: take(&format!("cnn.{i}.kernels")),
                bias: take(&format!("cnn.{i}.bias")),
                stride: config.cnn[i].stride,
            })
            .collect();
        let map_mlp = template
            .map_mlp
            .is_some()
            .then(|| LinearParams { w: take("map_mlp.w"), b: take("map_mlp.b") });
        Ok(ModelParams {
            cnn,
            map_mlp,
            traj_embed: LinearParams { w: take("traj_embed.w"), b: take("traj_embed.b") },
            lstm: LstmParams {
                w_ih: take("lstm.w_ih"),
                w_hh: take("lstm.w_hh"),
                bias: take("lstm.bias"),
            },
            state_mlp: LinearParams { w: take("state_mlp.w"), b: take("state_mlp.b") },
            gat: (0..config.gat_layers)
                .map(|l| GatLayerParams { w: take(&format!("gat.{l}.w")), a: take(&format!("gat.{l}.a")) })
                .collect(),
            head_class: (0..2)
                .map(|i| LinearParams {
                    w: take(&format!("head_class.{i}.w")),
                    b: take(&format!("head_class.{i}.b")),
                })
                .collect(),
            head_offset: (0..2)
                .map(|i| LinearParams {
                    w: take(&format!("head_offset.{i}.w")),
                    b: take(&format!("head_offset.{i}.b")),
                })
                .collect(),
        })
    }
}

/// Full CNN pass over the rendered map, shared by all agents in a scene.
pub fn cnn_features(tape: &mut Tape, params: &ModelParams, raster: &Tensor) -> Result<Tensor> {
    let mut x = raster.clone();
    for layer in &params.cnn {
        let k = layer.kernels.shape()[2];
        let y = tape.conv2d(&x, &layer.kernels, Some(&layer.bias), layer.stride, k / 2)?;
        x = tape.relu(&y)?;
    }
    Ok(x)
}

/// Map embedding for one agent: patch of the shared feature map at the
/// agent's pixel, flattened through a single-layer MLP.
pub fn patch_embed(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    feature_map: &Tensor,
    agent_px: (i64, i64),
) -> Result<Tensor> {
    let mlp = params
        .map_mlp
        .as_ref()
        .ok_or_else(|| Error::Config("map branch disabled in this model".into()))?;
    let patch = tape.extract_patch(feature_map, agent_px.0, agent_px.1, config.patch)?;
    let flat = tape.reshape(&patch, &[patch.len()])?;
    let y = mlp.apply(tape, &flat)?;
    tape.relu(&y)
}

/// Spec'd single-call form: CNN over the raster, then the agent's patch.
pub fn encode_map(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    raster: &RasterImage,
    agent_px: (i64, i64),
) -> Result<Tensor> {
    let fmap = cnn_features(tape, params, &raster.to_tensor())?;
    patch_embed(tape, config, params, &fmap, agent_px)
}

/// Observed positions in the agent frame, embedded pointwise and consumed
/// by the LSTM; the final hidden state is the trajectory embedding.
/// Histories shorter than `t_ob_steps` are front-padded by repeating the
/// first observed point.
pub fn encode_trajectory(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    track: &Track,
    t_ob: i64,
    frame: &AgentFrame,
) -> Result<Tensor> {
    let observed = track.observed_until(t_ob);
    if observed.is_empty() {
        return Err(Error::InsufficientHistory {
            agent: track.agent_id,
            detail: format!("no observed positions at or before timestep {t_ob}"),
        });
    }
    let mut points: Vec<Point2> = Vec::with_capacity(config.t_ob_steps);
    for _ in observed.len()..config.t_ob_steps {
        points.push(observed[0]);
    }
    points.extend(observed.iter().copied());
    let mut state = params.lstm.zero_state();
    for p in points {
        let local = frame.to_agent_frame(p);
        let xy = Tensor::new(&[2], vec![local.x, local.y]).expect("pair");
        let e = params.traj_embed.apply(tape, &xy)?;
        let e = tape.relu(&e)?;
        state = lstm_cell(tape, &params.lstm, &e, &state)?;
    }
    Ok(state.h)
}

/// Kinematic state embedding. The heading enters relative to the agent
/// frame as (cos, sin); the class as a one-hot over the model's classes.
pub fn encode_state(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    state: &TrafficState,
    frame: &AgentFrame,
) -> Result<Tensor> {
    let ci = config.class_index(state.class).ok_or_else(|| {
        Error::Config(format!("class {} not covered by this model", state.class.name()))
    })?;
    let rel = state.heading - frame.rotation;
    let mut features = vec![
        state.velocity,
        state.acceleration,
        rel.cos(),
        rel.sin(),
        state.width,
        state.length,
    ];
    features.resize(6 + config.classes.len(), 0.0);
    features[6 + ci] = 1.0;
    let x = Tensor::new(&[config.state_input_dim()], features).expect("feature length");
    let y = params.state_mlp.apply(tape, &x)?;
    tape.relu(&y)
}

/// Concatenation of the per-source embeddings, map first.
pub fn fuse(
    tape: &mut Tape,
    config: &ModelConfig,
    v_map: Option<&Tensor>,
    v_traj: &Tensor,
    v_state: &Tensor,
) -> Result<Tensor> {
    let check = |name: &str, t: &Tensor, want: usize| -> Result<()> {
        if t.shape() != [want] {
            return Err(Error::shape(
                "fuse",
                format!("{name} has shape {:?}, expected [{want}]", t.shape()),
            ));
        }
        Ok(())
    };
    check("v_traj", v_traj, config.d_traj)?;
    check("v_state", v_state, config.d_state)?;
    match (config.use_map, v_map) {
        (true, Some(m)) => {
            check("v_map", m, config.d_map)?;
            tape.concat(&[m, v_traj, v_state])
        }
        (true, None) => Err(Error::shape("fuse", "missing map embedding".to_string())),
        (false, Some(_)) => {
            Err(Error::shape("fuse", "map embedding supplied but disabled".to_string()))
        }
        (false, None) => tape.concat(&[v_traj, v_state]),
    }
}

/// One graph attention layer. Also returns, per agent, the neighbor ids
/// and attention weights so normalization is observable.
pub fn gat_layer_attention(
    tape: &mut Tape,
    params: &GatLayerParams,
    graph: &InteractionGraph,
    features: &BTreeMap<AgentId, Tensor>,
) -> Result<(BTreeMap<AgentId, Tensor>, BTreeMap<AgentId, Vec<(AgentId, f64)>>)> {
    let hidden = params.w.shape()[0];
    let mut wh: BTreeMap<AgentId, Tensor> = BTreeMap::new();
    let mut s_left: BTreeMap<AgentId, Tensor> = BTreeMap::new();
    let mut s_right: BTreeMap<AgentId, Tensor> = BTreeMap::new();
    let a_left = tape.slice_last(&params.a, 0, hidden)?;
    let a_right = tape.slice_last(&params.a, hidden, hidden)?;
    for &id in &graph.vertices {
        let h = features
            .get(&id)
            .ok_or_else(|| Error::NotFound(format!("no feature for agent {id}")))?;
        let p = tape.matvec(&params.w, h)?;
        s_left.insert(id, tape.dot(&a_left, &p)?);
        s_right.insert(id, tape.dot(&a_right, &p)?);
        wh.insert(id, p);
    }
    let mut out = BTreeMap::new();
    let mut weights = BTreeMap::new();
    for &id in &graph.vertices {
        let neighbors = graph.neighbors(id).expect("vertex of the graph");
        // Logit for (i, j) is a . [Wh_i || Wh_j], split into the two halves
        // of a so each projection is scored once.
        let mut logits = Vec::with_capacity(neighbors.len());
        for j in neighbors {
            logits.push(tape.add(&s_left[&id], &s_right[j])?);
        }
        let refs: Vec<&Tensor> = logits.iter().collect();
        let stacked = tape.concat(&refs)?;
        let activated = tape.leaky_relu(&stacked, 0.2)?;
        let att = tape.softmax(&activated)?;
        weights.insert(id, neighbors.iter().copied().zip(att.data().iter().copied()).collect());
        let rows: Vec<&Tensor> = neighbors.iter().map(|j| &wh[j]).collect();
        let stacked_wh = tape.stack_rows(&rows)?;
        let att_row = tape.reshape(&att, &[1, neighbors.len()])?;
        let mixed = tape.matmul(&att_row, &stacked_wh)?;
        out.insert(id, tape.reshape(&mixed, &[hidden])?);
    }
    Ok((out, weights))
}

pub fn gat_layer(
    tape: &mut Tape,
    params: &GatLayerParams,
    graph: &InteractionGraph,
    features: &BTreeMap<AgentId, Tensor>,
) -> Result<BTreeMap<AgentId, Tensor>> {
    Ok(gat_layer_attention(tape, params, graph, features)?.0)
}

/// Raw head outputs for one agent, still in the agent-centric frame.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub agent: AgentId,
    pub frame: AgentFrame,
    /// `[C]`, sums to one.
    pub class_probs: Tensor,
    /// Per class, `[K_c]`, each summing to one.
    pub anchor_probs: Vec<Tensor>,
    /// `[total_anchors, horizon_steps, 2]`.
    pub offsets: Tensor,
}

/// The two parallel heads over `concat(p_final, v_orig)`: hierarchical
/// class/anchor probabilities and per-anchor offset trajectories.
pub fn predict_head(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    p_final: &Tensor,
    v_orig: &Tensor,
) -> Result<(Tensor, Vec<Tensor>, Tensor)> {
    let x = tape.concat(&[p_final, v_orig])?;
    if x.len() != config.head_input_dim() {
        return Err(Error::shape(
            "predict_head",
            format!("head input {} != configured {}", x.len(), config.head_input_dim()),
        ));
    }
    let c = config.classes.len();
    let total = config.total_anchors();

    let h = params.head_class[0].apply(tape, &x)?;
    let h = tape.relu(&h)?;
    let logits = params.head_class[1].apply(tape, &h)?;
    let class_logits = tape.slice_last(&logits, 0, c)?;
    let class_probs = tape.softmax(&class_logits)?;
    let mut anchor_probs = Vec::with_capacity(c);
    for ci in 0..c {
        let block = tape.slice_last(&logits, c + config.anchor_offset(ci), config.k_c[ci])?;
        anchor_probs.push(tape.softmax(&block)?);
    }

    let g = params.head_offset[0].apply(tape, &x)?;
    let g = tape.relu(&g)?;
    let flat = params.head_offset[1].apply(tape, &g)?;
    let offsets = tape.reshape(&flat, &[total, config.horizon_steps, 2])?;
    Ok((class_probs, anchor_probs, offsets))
}

/// Encoders, GAT stack and heads for every vertex of the graph, on the
/// given tape. Agents are processed in ascending id order.
pub fn forward_heads(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    scenario: &Scenario,
    graph: &InteractionGraph,
    raster: Option<&RasterImage>,
) -> Result<Vec<HeadOutputs>> {
    let rendered;
    let raster = if config.use_map {
        Some(match raster {
            Some(r) => r,
            None => {
                rendered = rasterize(
                    &scenario.map,
                    scenario_center(scenario),
                    config.raster_size,
                    config.raster_resolution,
                )?;
                &rendered
            }
        })
    } else {
        None
    };
    let fmap = match raster {
        Some(img) => Some(cnn_features(tape, params, &img.to_tensor())?),
        None => None,
    };

    let mut fused: BTreeMap<AgentId, Tensor> = BTreeMap::new();
    let mut frames: BTreeMap<AgentId, AgentFrame> = BTreeMap::new();
    for &id in &graph.vertices {
        let track = scenario
            .agent(id)
            .ok_or_else(|| Error::NotFound(format!("agent {id} not in scenario")))?;
        let frame = AgentFrame::for_track(track, scenario.t_ob)?;
        let state = track.state_or_derived(scenario.t_ob, scenario.frame_period)?;
        let v_map = match (&fmap, raster) {
            (Some(f), Some(img)) => {
                let pos = track.position_at(scenario.t_ob).ok_or_else(|| {
                    Error::InsufficientHistory {
                        agent: id,
                        detail: format!("no position at timestep {}", scenario.t_ob),
                    }
                })?;
                Some(patch_embed(tape, config, params, f, img.world_to_pixel(pos))?)
            }
            _ => None,
        };
        let v_traj = encode_trajectory(tape, config, params, track, scenario.t_ob, &frame)?;
        let v_state = encode_state(tape, config, params, &state, &frame)?;
        let v = fuse(tape, config, v_map.as_ref(), &v_traj, &v_state)?;
        fused.insert(id, v);
        frames.insert(id, frame);
    }

    let mut features = fused.clone();
    for (l, layer) in params.gat.iter().enumerate() {
        let mut next = gat_layer(tape, layer, graph, &features)?;
        if l + 1 < params.gat.len() {
            for v in next.values_mut() {
                *v = tape.relu(v)?;
            }
        }
        features = next;
    }

    let mut out = Vec::with_capacity(graph.vertices.len());
    for &id in &graph.vertices {
        let (class_probs, anchor_probs, offsets) =
            predict_head(tape, config, params, &features[&id], &fused[&id])?;
        out.push(HeadOutputs {
            agent: id,
            frame: frames[&id],
            class_probs,
            anchor_probs,
            offsets,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHypothesis {
    pub class: AgentClass,
    pub anchor: usize,
    /// Joint probability: class probability times the in-class anchor
    /// probability.
    pub probability: f64,
    /// World-frame points over the prediction horizon.
    pub points: Vec<Point2>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub agent: AgentId,
    pub class_probs: Vec<f64>,
    pub anchor_probs: Vec<Vec<f64>>,
    /// Class-major, anchor-index order; probabilities sum to one.
    pub hypotheses: Vec<TrajectoryHypothesis>,
}

/// Full inference: anchors plus regressed offsets, mapped back to the
/// world frame, with joint probabilities.
pub fn forward(
    config: &ModelConfig,
    params: &ModelParams,
    scenario: &Scenario,
    graph: &InteractionGraph,
    anchors: &AnchorSet,
    raster: Option<&RasterImage>,
) -> Result<Vec<Prediction>> {
    check_anchor_compat(config, anchors)?;
    let mut tape = Tape::inactive();
    let heads = forward_heads(&mut tape, config, params, scenario, graph, raster)?;
    heads.into_iter().map(|h| assemble_prediction(config, anchors, h)).collect()
}

/// Converts one agent's head outputs into world-frame hypotheses.
pub fn assemble_prediction(
    config: &ModelConfig,
    anchors: &AnchorSet,
    head: HeadOutputs,
) -> Result<Prediction> {
    let t = config.horizon_steps;
    let offsets = head.offsets.data();
    let mut hypotheses = Vec::with_capacity(config.total_anchors());
    for (ci, &class) in config.classes.iter().enumerate() {
        let class_p = head.class_probs.data()[ci];
        let in_class = head.anchor_probs[ci].data();
        for k in 0..config.k_c[ci] {
            let anchor = anchors
                .anchor(class, k)
                .ok_or_else(|| Error::NotFound(format!("anchor {k} of class {}", class.name())))?;
            let row = config.anchor_offset(ci) + k;
            let mut points = Vec::with_capacity(t);
            for (step, a) in anchor.iter().enumerate() {
                let dx = offsets[(row * t + step) * 2];
                let dy = offsets[(row * t + step) * 2 + 1];
                points.push(head.frame.from_agent_frame(Point2::new(a.x + dx, a.y + dy)));
            }
            hypotheses.push(TrajectoryHypothesis {
                class,
                anchor: k,
                probability: class_p * in_class[k],
                points,
            });
        }
    }
    Ok(Prediction {
        agent: head.agent,
        class_probs: head.class_probs.data().to_vec(),
        anchor_probs: head.anchor_probs.iter().map(|t| t.data().to_vec()).collect(),
        hypotheses,
    })
}
