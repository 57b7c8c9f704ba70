//! Interaction graphs. Each agent projects a circular attention zone whose
//! radius grows with speed (it must cover everywhere the agent could matter
//! within the prediction horizon) plus a body-size term. Two agents interact
//! when their zones overlap; the graph of those overlaps is rebuilt from
//! scratch at every timestep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scene::{AgentId, Point2, Scenario, Track};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionZone {
    pub center: Point2,
    pub radius: f64,
}

/// Zone radius: `velocity * t_f_seconds + lambda * length`. Strictly
/// positive for any valid agent since `length > 0`.
pub fn attention_radius(
    velocity: f64,
    t_f_seconds: f64,
    lambda: f64,
    length: f64,
) -> Result<f64> {
    if !(velocity.is_finite() && velocity >= 0.0) {
        return Err(Error::InvalidValue(format!("attention radius: velocity {velocity} < 0")));
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidValue(format!("attention radius: length {length} <= 0")));
    }
    if !(t_f_seconds.is_finite() && t_f_seconds > 0.0) {
        return Err(Error::InvalidValue(format!("attention radius: horizon {t_f_seconds} <= 0")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidValue(format!("attention radius: lambda {lambda} < 0")));
    }
    Ok(velocity * t_f_seconds + lambda * length)
}

/// Closed intersection test: tangent circles count as intersecting.
pub fn zones_intersect(a: AttentionZone, b: AttentionZone) -> bool {
    a.center.distance(b.center) <= a.radius + b.radius
}

/// Attention zone of `track` at timestep `t`. Speed comes from the recorded
/// state when present, otherwise from the displacement over the previous
/// frame; length falls back to the class default.
pub fn agent_zone(
    track: &Track,
    t: i64,
    t_f_seconds: f64,
    lambda: f64,
    frame_period: f64,
) -> Result<AttentionZone> {
    let center = track.position_at(t).ok_or_else(|| Error::InsufficientHistory {
        agent: track.agent_id,
        detail: format!("no position at timestep {t}"),
    })?;
    let (velocity, length) = match track.state_at(t) {
        Some(state) => (state.velocity, state.length),
        None => {
            let prev = track.position_at(t - 1).ok_or_else(|| Error::InsufficientHistory {
                agent: track.agent_id,
                detail: format!(
                    "no state at timestep {t} and no position at {} for a speed estimate",
                    t - 1
                ),
            })?;
            (center.distance(prev) / frame_period, track.class.default_length())
        }
    };
    Ok(AttentionZone { center, radius: attention_radius(velocity, t_f_seconds, lambda, length)? })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    /// Sorted agent ids.
    pub vertices: Vec<AgentId>,
    /// Unordered pairs stored as (low, high), sorted lexicographically.
    pub edges: Vec<(AgentId, AgentId)>,
    /// Neighbor lists, each sorted and containing the vertex itself.
    pub adjacency: BTreeMap<AgentId, Vec<AgentId>>,
}

impl InteractionGraph {
    /// Builds the graph from an explicit vertex and edge set, deriving the
    /// self-inclusive adjacency lists.
    pub fn from_edges(mut vertices: Vec<AgentId>, mut edges: Vec<(AgentId, AgentId)>) -> Self {
        vertices.sort_unstable();
        vertices.dedup();
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency: BTreeMap<AgentId, Vec<AgentId>> =
            vertices.iter().map(|&v| (v, vec![v])).collect();
        for &(i, j) in &edges {
            adjacency.get_mut(&i).expect("edge endpoint in vertex set").push(j);
            adjacency.get_mut(&j).expect("edge endpoint in vertex set").push(i);
        }
        for list in adjacency.values_mut() {
            list.sort_unstable();
        }
        InteractionGraph { vertices, edges, adjacency }
    }

    pub fn neighbors(&self, id: AgentId) -> Option<&[AgentId]> {
        self.adjacency.get(&id).map(|v| v.as_slice())
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.adjacency.contains_key(&id)
    }

    pub fn has_edge(&self, i: AgentId, j: AgentId) -> bool {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).is_ok()
    }

    /// One `id_i id_j` line per edge, lexicographic; used for golden dumps.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = String::new();
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

/// Graph plus the agents that had to be left out at this timestep.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: InteractionGraph,
    /// Agents without a position or speed source at `t`.
    pub skipped: Vec<AgentId>,
}

/// Interaction graph of `scenario` at timestep `t`. Vertices are the agents
/// with a usable zone at `t`; an edge connects every pair of intersecting
/// zones. Agents without the needed inputs are skipped and reported.
pub fn build_graph(scenario: &Scenario, t: i64, lambda: f64) -> GraphBuild {
    let t_f_seconds = scenario.horizon_seconds();
    let mut zones: Vec<(AgentId, AttentionZone)> = Vec::with_capacity(scenario.agents.len());
    let mut skipped = Vec::new();
    for track in &scenario.agents {
        match agent_zone(track, t, t_f_seconds, lambda, scenario.frame_period) {
            Ok(zone) => zones.push((track.agent_id, zone)),
            Err(e) => {
                log::warn!("graph at t={t}: skipping agent {}: {e}", track.agent_id);
                skipped.push(track.agent_id);
            }
        }
    }
    zones.sort_by_key(|(id, _)| *id);
    let vertices: Vec<AgentId> = zones.iter().map(|(id, _)| *id).collect();
    let mut edges = Vec::new();
    for a in 0..zones.len() {
        for b in a + 1..zones.len() {
            if zones_intersect(zones[a].1, zones[b].1) {
                edges.push((zones[a].0, zones[b].0));
            }
        }
    }
    GraphBuild { graph: InteractionGraph::from_edges(vertices, edges), skipped }
}

/// Induced subgraph of every vertex within `hops` edges of `target`.
/// Exists for visualization; the model itself consumes the full graph.
pub fn ego_subgraph(g: &InteractionGraph, target: AgentId, hops: usize) -> Result<InteractionGraph> {
    if !g.contains(target) {
        return Err(Error::NotFound(format!("agent {target} is not in the graph")));
    }
    let mut keep = std::collections::BTreeSet::new();
    keep.insert(target);
    let mut frontier = vec![target];
    for _ in 0..hops {
        let mut next = Vec::new();
        for v in frontier {
            for &n in g.neighbors(v).unwrap_or(&[]) {
                if keep.insert(n) {
                    next.push(n);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let vertices: Vec<AgentId> = keep.iter().copied().collect();
    let edges: Vec<(AgentId, AgentId)> = g
        .edges
        .iter()
        .copied()
        .filter(|(i, j)| keep.contains(i) && keep.contains(j))
        .collect();
    Ok(InteractionGraph::from_edges(vertices, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentClass, DistanceUnit, Rect, SemanticMap, TrafficState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn zone(x: f64, y: f64, r: f64) -> AttentionZone {
        AttentionZone { center: Point2::new(x, y), radius: r }
    }

    #[test]
    fn radius_values() {
        assert_relative_eq!(attention_radius(2.0, 3.0, 0.5, 4.0).unwrap(), 8.0);
        assert_relative_eq!(attention_radius(0.0, 3.0, 0.5, 4.0).unwrap(), 2.0);
        assert_relative_eq!(attention_radius(1.0, 4.8, 0.5, 0.5).unwrap(), 5.05);
    }

    #[test]
    fn radius_rejects_bad_inputs() {
        assert!(attention_radius(-1.0, 3.0, 0.5, 4.0).is_err());
        assert!(attention_radius(1.0, 3.0, 0.5, 0.0).is_err());
        assert!(attention_radius(1.0, 0.0, 0.5, 4.0).is_err());
        assert!(attention_radius(1.0, 3.0, -0.5, 4.0).is_err());
    }

    #[test]
    fn intersection_cases() {
        assert!(zones_intersect(zone(0.0, 0.0, 3.0), zone(5.0, 0.0, 3.0)));
        assert!(!zones_intersect(zone(0.0, 0.0, 1.0), zone(5.0, 0.0, 1.0)));
        // Tangency counts.
        assert!(zones_intersect(zone(0.0, 0.0, 2.0), zone(4.0, 0.0, 2.0)));
    }

    /// A scenario where agents sit at given x positions with given speeds.
    /// Two observations per agent so histories are valid; class Pedestrian
    /// (default length 0.5).
    fn line_scenario(agents: &[(AgentId, f64, f64)]) -> Scenario {
        let tracks = agents
            .iter()
            .map(|&(id, x, v)| Track {
                agent_id: id,
                class: AgentClass::Pedestrian,
                points: vec![(1, Point2::new(x - v, 0.0)), (2, Point2::new(x, 0.0))],
                states: Vec::new(),
            })
            .collect();
        Scenario {
            agents: tracks,
            map: SemanticMap::empty(Rect::new(-100.0, -100.0, 100.0, 100.0)),
            t_ob: 2,
            t_f: 4,
            frame_period: 1.0,
            unit: DistanceUnit::Meters,
        }
    }

    #[test]
    fn chain_graph() {
        // Horizon = 2 s; speed 1 -> radius 2.25, speed 0 -> radius 0.25.
        // A at 0, B at 4, C at 8.5: A-B touch (2.25+2.25 >= 4), B-C touch,
        // A-C do not (distance 8.5 > 4.5).
        let s = line_scenario(&[(1, 0.0, 1.0), (2, 4.0, 1.0), (3, 8.5, 1.0)]);
        let built = build_graph(&s, 2, 0.5);
        assert!(built.skipped.is_empty());
        assert_eq!(built.graph.edges, vec![(1, 2), (2, 3)]);
        assert_eq!(built.graph.neighbors(1).unwrap(), &[1, 2]);
        assert_eq!(built.graph.neighbors(2).unwrap(), &[1, 2, 3]);
        assert_eq!(built.graph.neighbors(3).unwrap(), &[2, 3]);
    }

    #[test]
    fn single_agent_graph() {
        let s = line_scenario(&[(5, 0.0, 1.0)]);
        let built = build_graph(&s, 2, 0.5);
        assert!(built.graph.edges.is_empty());
        assert_eq!(built.graph.neighbors(5).unwrap(), &[5]);
    }

    #[test]
    fn coincident_agents_form_complete_graph() {
        let s = line_scenario(&[(1, 2.0, 0.0), (2, 2.0, 0.0), (3, 2.0, 0.0)]);
        let built = build_graph(&s, 2, 0.5);
        assert_eq!(built.graph.edges, vec![(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn agent_without_speed_source_is_skipped() {
        let mut s = line_scenario(&[(1, 0.0, 1.0)]);
        // Agent 2 appears only at t=2: no state, no previous position.
        s.agents.push(Track {
            agent_id: 2,
            class: AgentClass::Pedestrian,
            points: vec![(2, Point2::new(1.0, 0.0))],
            states: Vec::new(),
        });
        let built = build_graph(&s, 2, 0.5);
        assert_eq!(built.skipped, vec![2]);
        assert!(!built.graph.contains(2));
    }

    #[test]
    fn recorded_state_overrides_displacement() {
        let mut s = line_scenario(&[(1, 0.0, 0.0), (2, 3.0, 0.0)]);
        // Zones of stationary pedestrians (r = 0.25) do not reach across 3 m,
        // but a recorded state with a high speed does.
        for track in &mut s.agents {
            track.states = vec![(
                2,
                TrafficState {
                    velocity: 2.0,
                    acceleration: 0.0,
                    heading: 0.0,
                    width: 0.5,
                    length: 0.5,
                    class: AgentClass::Pedestrian,
                },
            )];
        }
        let built = build_graph(&s, 2, 0.5);
        assert_eq!(built.graph.edges, vec![(1, 2)]);
    }

    #[test]
    fn ego_subgraph_by_hops() {
        let g = InteractionGraph::from_edges(vec![1, 2, 3], vec![(1, 2), (2, 3)]);
        let one_hop = ego_subgraph(&g, 1, 1).unwrap();
        assert_eq!(one_hop.vertices, vec![1, 2]);
        assert_eq!(one_hop.edges, vec![(1, 2)]);
        let two_hops = ego_subgraph(&g, 1, 2).unwrap();
        assert_eq!(two_hops.vertices, vec![1, 2, 3]);
        let isolated = InteractionGraph::from_edges(vec![4], vec![]);
        assert_eq!(ego_subgraph(&isolated, 4, 1).unwrap().vertices, vec![4]);
        assert!(matches!(ego_subgraph(&g, 99, 1), Err(Error::NotFound(_))));
    }

    #[test]
    fn edge_list_text_is_lexicographic() {
        let g = InteractionGraph::from_edges(vec![3, 1, 2], vec![(3, 1), (2, 3)]);
        assert_eq!(g.to_edge_list_text(), "1 3\n2 3\n");
    }

    proptest! {
        #[test]
        fn intersection_is_symmetric(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, ar in 0.01..20.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, br in 0.01..20.0f64,
        ) {
            let a = zone(ax, ay, ar);
            let b = zone(bx, by, br);
            prop_assert_eq!(zones_intersect(a, b), zones_intersect(b, a));
        }

        #[test]
        fn growing_a_radius_never_disconnects(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, ar in 0.01..20.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, br in 0.01..20.0f64,
            grow in 0.0..10.0f64,
        ) {
            let a = zone(ax, ay, ar);
            let b = zone(bx, by, br);
            if zones_intersect(a, b) {
                prop_assert!(zones_intersect(zone(ax, ay, ar + grow), b));
            }
        }

        #[test]
        fn radius_is_linear_in_velocity_and_length(
            v in 0.0..30.0f64, len in 0.1..10.0f64,
            t_f in 0.1..10.0f64, lambda in 0.0..2.0f64,
            dv in 0.1..5.0f64, dl in 0.1..5.0f64,
        ) {
            let base = attention_radius(v, t_f, lambda, len).unwrap();
            let dv_slope = (attention_radius(v + dv, t_f, lambda, len).unwrap() - base) / dv;
            let dl_slope = (attention_radius(v, t_f, lambda, len + dl).unwrap() - base) / dl;
            prop_assert!((dv_slope - t_f).abs() < 1e-9);
            prop_assert!((dl_slope - lambda).abs() < 1e-9);
        }
    }
}
