//! Scene representation: agents, observation tracks, traffic state and the
//! semantic map. A scenario fixes a discrete timeline: timesteps `1..=t_ob`
//! are observed, `t_ob+1..=t_f` are the prediction horizon, and consecutive
//! timesteps are `frame_period` seconds apart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vehicle,
    Cyclist,
    Pedestrian,
}

impl AgentClass {
    pub const COUNT: usize = 3;

    pub fn all() -> [AgentClass; 3] {
        [AgentClass::Vehicle, AgentClass::Cyclist, AgentClass::Pedestrian]
    }

    pub fn index(self) -> usize {
        match self {
            AgentClass::Vehicle => 0,
            AgentClass::Cyclist => 1,
            AgentClass::Pedestrian => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<AgentClass> {
        match i {
            0 => Ok(AgentClass::Vehicle),
            1 => Ok(AgentClass::Cyclist),
            2 => Ok(AgentClass::Pedestrian),
            _ => Err(Error::InvalidValue(format!("agent class index {i} out of range"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentClass::Vehicle => "vehicle",
            AgentClass::Cyclist => "cyclist",
            AgentClass::Pedestrian => "pedestrian",
        }
    }

    /// Footprint defaults used when a dataset carries no extents.
    pub fn default_width(self) -> f64 {
        match self {
            AgentClass::Vehicle => 1.8,
            AgentClass::Cyclist => 0.8,
            AgentClass::Pedestrian => 0.5,
        }
    }

    pub fn default_length(self) -> f64 {
        match self {
            AgentClass::Vehicle => 4.5,
            AgentClass::Cyclist => 2.0,
            AgentClass::Pedestrian => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Point2 {
        Point2 { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r >= std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Kinematic state of one agent at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficState {
    /// Speed along the heading, m/s. Non-negative.
    pub velocity: f64,
    /// Signed acceleration along the heading, m/s^2.
    pub acceleration: f64,
    /// World-frame heading in `[-pi, pi)`.
    pub heading: f64,
    /// Footprint width in meters, positive.
    pub width: f64,
    /// Footprint length in meters, positive.
    pub length: f64,
    pub class: AgentClass,
}

impl TrafficState {
    pub fn validate(&self) -> Result<()> {
        if !(self.velocity.is_finite() && self.velocity >= 0.0) {
            return Err(Error::InvalidValue(format!("velocity {} must be >= 0", self.velocity)));
        }
        if !self.acceleration.is_finite() {
            return Err(Error::InvalidValue("acceleration must be finite".into()));
        }
        if !self.heading.is_finite()
            || self.heading < -std::f64::consts::PI
            || self.heading >= std::f64::consts::PI
        {
            return Err(Error::InvalidValue(format!("heading {} outside [-pi, pi)", self.heading)));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::InvalidValue(format!("width {} must be > 0", self.width)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidValue(format!("length {} must be > 0", self.length)));
        }
        Ok(())
    }

    /// Reconstructs a state from position history when a dataset provides
    /// none: speed from the last displacement, acceleration from the change
    /// in speed, heading from the motion direction, extents from class
    /// defaults. Requires two points at or before `t`; three give a real
    /// acceleration estimate, otherwise it is zero.
    pub fn derive(track: &Track, t: i64, frame_period: f64) -> Result<TrafficState> {
        let hist = track.observed_until(t);
        if hist.len() < 2 {
            return Err(Error::InsufficientHistory {
                agent: track.agent_id,
                detail: format!("need 2 points at or before timestep {t} to derive a state"),
            });
        }
        let n = hist.len();
        let v_last = hist[n - 1].distance(hist[n - 2]) / frame_period;
        let acceleration = if n >= 3 {
            let v_prev = hist[n - 2].distance(hist[n - 3]) / frame_period;
            (v_last - v_prev) / frame_period
        } else {
            0.0
        };
        Ok(TrafficState {
            velocity: v_last,
            acceleration,
            heading: heading_from_points(&hist),
            width: track.class.default_width(),
            length: track.class.default_length(),
            class: track.class,
        })
    }
}

/// One agent's observations: world positions indexed by timestep, plus
/// optional per-timestep states. Timesteps are strictly increasing but may
/// have gaps (occlusion).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Track {
    pub agent_id: AgentId,
    pub class: AgentClass,
    pub points: Vec<(i64, Point2)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<(i64, TrafficState)>,
}

impl Track {
    pub fn position_at(&self, t: i64) -> Option<Point2> {
        self.points
            .binary_search_by_key(&t, |(ts, _)| *ts)
            .ok()
            .map(|i| self.points[i].1)
    }

    pub fn state_at(&self, t: i64) -> Option<&TrafficState> {
        self.states
            .binary_search_by_key(&t, |(ts, _)| *ts)
            .ok()
            .map(|i| &self.states[i].1)
    }

    /// The state used by the model at timestep `t`: recorded if present,
    /// derived from history otherwise.
    pub fn state_or_derived(&self, t: i64, frame_period: f64) -> Result<TrafficState> {
        match self.state_at(t) {
            Some(s) => Ok(*s),
            None => TrafficState::derive(self, t, frame_period),
        }
    }

    /// Positions observed at or before `t`, oldest first.
    pub fn observed_until(&self, t: i64) -> Vec<Point2> {
        self.points.iter().filter(|(ts, _)| *ts <= t).map(|(_, p)| *p).collect()
    }

    /// True when the track has a point at every timestep in `range`.
    pub fn covers(&self, range: std::ops::RangeInclusive<i64>) -> bool {
        range.into_iter().all(|t| self.position_at(t).is_some())
    }
}

/// Heading of the latest displacement in `hist`; walks back past degenerate
/// (sub-1e-9) steps and returns 0 for a fully stationary history.
fn heading_from_points(hist: &[Point2]) -> f64 {
    for w in hist.windows(2).rev() {
        let dx = w[1].x - w[0].x;
        let dy = w[1].y - w[0].y;
        if dx.hypot(dy) >= 1e-9 {
            return normalize_angle(dy.atan2(dx));
        }
    }
    0.0
}

/// Motion direction of `track` at timestep `t`, from the most recent
/// non-degenerate displacement at or before `t`.
pub fn heading_from_history(track: &Track, t: i64) -> Result<f64> {
    let hist = track.observed_until(t);
    if hist.len() < 2 {
        return Err(Error::InsufficientHistory {
            agent: track.agent_id,
            detail: format!("need 2 points at or before timestep {t} to estimate a heading"),
        });
    }
    Ok(heading_from_points(&hist))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapElementKind {
    UnmovableObstacle,
    RoadBoundary,
    PedestrianCrossing,
    BicycleLane,
    LaneCenterline,
    MovableObstacleBox,
    LaneLineDotted,
    EdgeLineSolid,
}

impl MapElementKind {
    /// Polygon kinds are filled; the rest are stroked as polylines.
    pub fn is_polygon(self) -> bool {
        matches!(
            self,
            MapElementKind::UnmovableObstacle
                | MapElementKind::PedestrianCrossing
                | MapElementKind::BicycleLane
                | MapElementKind::MovableObstacleBox
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapElement {
    pub kind: MapElementKind,
    pub points: Vec<Point2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Rect {
        Rect { min_x, min_y, max_x, max_y }
    }

    /// Smallest rectangle containing `points`, or a unit box at the origin
    /// when there are none.
    pub fn bounding(points: impl IntoIterator<Item = Point2>) -> Rect {
        let mut it = points.into_iter();
        let Some(first) = it.next() else {
            return Rect::new(0.0, 0.0, 1.0, 1.0);
        };
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in it {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        r
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn union(&self, other: Rect) -> Rect {
        Rect::new(
            self.min_x.min(other.min_x),
            self.min_y.min(other.min_y),
            self.max_x.max(other.max_x),
            self.max_y.max(other.max_y),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticMap {
    pub elements: Vec<MapElement>,
    pub bounds: Rect,
}

impl SemanticMap {
    pub fn empty(bounds: Rect) -> SemanticMap {
        SemanticMap { elements: Vec::new(), bounds }
    }

    /// Grows `bounds` to cover every element, so the "geometry lies within
    /// bounds" invariant holds without cutting geometry.
    pub fn reconcile_bounds(&mut self) {
        let mut bounds = self.bounds;
        for el in &self.elements {
            bounds = bounds.union(Rect::bounding(el.points.iter().copied()));
        }
        self.bounds = bounds;
    }
}

/// Distance unit of a scenario's coordinates. Pixel-space datasets work
/// end to end; only reported metrics change meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceUnit {
    Meters,
    Pixels,
}

/// One prediction problem: agents with observed history over `1..=t_ob`,
/// ground-truth futures (where known) over `t_ob+1..=t_f`, and the map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub agents: Vec<Track>,
    pub map: SemanticMap,
    pub t_ob: i64,
    pub t_f: i64,
    pub frame_period: f64,
    pub unit: DistanceUnit,
}

impl Scenario {
    /// Number of future steps in the horizon.
    pub fn horizon_steps(&self) -> usize {
        (self.t_f - self.t_ob).max(0) as usize
    }

    /// Horizon length in seconds.
    pub fn horizon_seconds(&self) -> f64 {
        self.horizon_steps() as f64 * self.frame_period
    }

    pub fn agent(&self, id: AgentId) -> Option<&Track> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    /// Ground-truth future of `id`, if every horizon step is present.
    pub fn future_of(&self, id: AgentId) -> Option<Vec<Point2>> {
        let track = self.agent(id)?;
        let mut future = Vec::with_capacity(self.horizon_steps());
        for t in self.t_ob + 1..=self.t_f {
            future.push(track.position_at(t)?);
        }
        Some(future)
    }
}

/// Which agents get predictions (and loss, and metrics). Agents that fail
/// the rule still shape the interaction graph as context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// Present at every observed timestep `1..=t_ob`.
    #[default]
    FullObserved,
    /// Every agent with enough history for a frame (>= 2 observed points).
    AllObserved,
}

/// Ids of the agents that `rule` selects as prediction targets, sorted.
pub fn target_ids(scenario: &Scenario, rule: TargetRule) -> Vec<AgentId> {
    let mut out: Vec<AgentId> = scenario
        .agents
        .iter()
        .filter(|a| match rule {
            TargetRule::FullObserved => a.covers(1..=scenario.t_ob),
            TargetRule::AllObserved => {
                a.points.iter().filter(|(t, _)| *t <= scenario.t_ob).count() >= 2
                    && a.position_at(scenario.t_ob).is_some()
            }
        })
        .map(|a| a.agent_id)
        .collect();
    out.sort_unstable();
    out
}

/// Agent-centric coordinates: origin at the agent's position, x axis along
/// its motion direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub origin: Point2,
    pub rotation: f64,
}

impl AgentFrame {
    /// Frame anchored at `track`'s position at `t_ob`. Rotation prefers the
    /// recorded state heading and falls back to the motion direction.
    pub fn for_track(track: &Track, t_ob: i64) -> Result<AgentFrame> {
        let origin = track.position_at(t_ob).ok_or_else(|| Error::InsufficientHistory {
            agent: track.agent_id,
            detail: format!("no observation at timestep {t_ob}"),
        })?;
        let rotation = match track.state_at(t_ob) {
            Some(state) => state.heading,
            None => heading_from_history(track, t_ob)?,
        };
        Ok(AgentFrame { origin, rotation })
    }

    pub fn to_agent_frame(&self, p: Point2) -> Point2 {
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        let (s, c) = self.rotation.sin_cos();
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn from_agent_frame(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(c * p.x - s * p.y + self.origin.x, s * p.x + c * p.y + self.origin.y)
    }
}

/// A single problem found by [`validate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinitePoint { agent: AgentId, timestep: i64 },
    TimestepsNotIncreasing { agent: AgentId },
    TooFewObserved { agent: AgentId, got: usize },
    BadState { agent: AgentId, timestep: i64, detail: String },
    BadHorizon { t_ob: i64, t_f: i64 },
    BadFramePeriod { frame_period: f64 },
    DuplicateAgentId { agent: AgentId },
    DegenerateMapElement { index: usize, kind: MapElementKind, points: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonFinitePoint { agent, timestep } => {
                write!(f, "agent {agent}: non-finite position at timestep {timestep}")
            }
            Violation::TimestepsNotIncreasing { agent } => {
                write!(f, "agent {agent}: timesteps are not strictly increasing")
            }
            Violation::TooFewObserved { agent, got } => {
                write!(f, "agent {agent}: {got} observed point(s), need at least 2")
            }
            Violation::BadState { agent, timestep, detail } => {
                write!(f, "agent {agent}: bad state at timestep {timestep}: {detail}")
            }
            Violation::BadHorizon { t_ob, t_f } => {
                write!(f, "horizon t_f {t_f} must be greater than t_ob {t_ob} (and t_ob >= 2)")
            }
            Violation::BadFramePeriod { frame_period } => {
                write!(f, "frame period {frame_period} must be positive and finite")
            }
            Violation::DuplicateAgentId { agent } => {
                write!(f, "agent id {agent} appears more than once")
            }
            Violation::DegenerateMapElement { index, kind, points } => {
                write!(f, "map element {index} ({kind:?}): {points} point(s) is too few")
            }
        }
    }
}

/// Checks every scenario invariant and returns all violations rather than
/// stopping at the first, so a bad file can be fixed in one pass.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(s.frame_period.is_finite() && s.frame_period > 0.0) {
        out.push(Violation::BadFramePeriod { frame_period: s.frame_period });
    }
    if s.t_ob < 2 || s.t_f <= s.t_ob {
        out.push(Violation::BadHorizon { t_ob: s.t_ob, t_f: s.t_f });
    }
    let mut seen = std::collections::BTreeSet::new();
    for track in &s.agents {
        if !seen.insert(track.agent_id) {
            out.push(Violation::DuplicateAgentId { agent: track.agent_id });
        }
        for w in track.points.windows(2) {
            if w[1].0 <= w[0].0 {
                out.push(Violation::TimestepsNotIncreasing { agent: track.agent_id });
                break;
            }
        }
        for (t, p) in &track.points {
            if !p.is_finite() {
                out.push(Violation::NonFinitePoint { agent: track.agent_id, timestep: *t });
            }
        }
        let observed = track.points.iter().filter(|(t, _)| *t <= s.t_ob).count();
        if observed < 2 {
            out.push(Violation::TooFewObserved { agent: track.agent_id, got: observed });
        }
        for (t, state) in &track.states {
            let check = state.validate().and_then(|()| {
                if state.class != track.class {
                    Err(Error::InvalidValue(format!(
                        "state class {} differs from track class {}",
                        state.class.name(),
                        track.class.name()
                    )))
                } else {
                    Ok(())
                }
            });
            if let Err(e) = check {
                out.push(Violation::BadState {
                    agent: track.agent_id,
                    timestep: *t,
                    detail: e.to_string(),
                });
            }
        }
    }
    for (index, el) in s.map.elements.iter().enumerate() {
        let min = if el.kind.is_polygon() { 3 } else { 2 };
        if el.points.len() < min {
            out.push(Violation::DegenerateMapElement {
                index,
                kind: el.kind,
                points: el.points.len(),
            });
        }
    }
    out
}
