//! Shared fixtures for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dgan_core::data::{synth_scenarios, AgentGroup, Archetype, SynthSpec};
use dgan_core::scene::{AgentClass, DistanceUnit, Point2, Rect, Scenario, SemanticMap, Track};

/// A crowd of constant-velocity walkers dense enough that the interaction
/// graph has plenty of edges.
pub fn crowd(n: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity(n);
    for id in 1..=n as u64 {
        let start = Point2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let vel = Point2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let points = (1..=8)
            .map(|t| {
                let dt = t as f64 * 0.4;
                (t, Point2::new(start.x + vel.x * dt, start.y + vel.y * dt))
            })
            .collect();
        agents.push(Track {
            agent_id: id,
            class: AgentClass::Pedestrian,
            points,
            states: vec![],
        });
    }
    let bounds = Rect::bounding(agents.iter().flat_map(|a| a.points.iter().map(|(_, p)| *p)));
    Scenario {
        agents,
        map: SemanticMap::empty(bounds),
        t_ob: 8,
        t_f: 20,
        frame_period: 0.4,
        unit: DistanceUnit::Meters,
    }
}

/// One mixed-class scene on the bundled synthetic map.
pub fn mixed_scene(seed: u64) -> Scenario {
    let spec = SynthSpec {
        scenarios: 1,
        t_ob_steps: 4,
        t_f_steps: 6,
        frame_period: 0.4,
        noise_sigma: 0.02,
        groups: vec![
            AgentGroup { class: AgentClass::Vehicle, archetype: Archetype::LaneFollow, count: 2 },
            AgentGroup { class: AgentClass::Cyclist, archetype: Archetype::ConstantTurn, count: 2 },
            AgentGroup {
                class: AgentClass::Pedestrian,
                archetype: Archetype::ConstantVelocity,
                count: 2,
            },
        ],
    };
    synth_scenarios(&spec, seed).expect("synthetic scene").remove(0)
}

/// Random futures for clustering benchmarks.
pub fn futures(count: usize, horizon: usize, seed: u64) -> Vec<Vec<Point2>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let vel = Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            (1..=horizon)
                .map(|t| {
                    Point2::new(
                        vel.x * t as f64 + rng.gen_range(-0.1..0.1),
                        vel.y * t as f64 + rng.gen_range(-0.1..0.1),
                    )
                })
                .collect()
        })
        .collect()
}
