//! Scenario persistence as JSON with stable key order and float
//! formatting, so save → load → save is byte-identical.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scene::Scenario;

/// Canonical JSON encoding: struct field order, two-space indentation,
/// shortest-round-trip floats, trailing newline.
pub fn scenario_to_json(scenario: &Scenario) -> Result<String> {
    let body = serde_json::to_string_pretty(scenario)
        .map_err(|e| Error::InvalidValue(format!("encoding scenario: {e}")))?;
    Ok(body + "\n")
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_json(scenario)?)?;
    Ok(())
}

/// Unknown fields are ignored for forward compatibility; missing required
/// fields fail with the field name and position.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let body = std::fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| Error::Parse {
        path: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        detail: e.to_string(),
    })
}

/// Loads every `*.json` file in `dir`, sorted by file name so the order
/// is stable across platforms.
pub fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InsufficientData(format!("no scenario files in {}", dir.display())));
    }
    paths.iter().map(|p| load_scenario(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        AgentClass, DistanceUnit, MapElement, MapElementKind, Point2, Rect, SemanticMap,
        TrafficState, Track,
    };
    use tempfile::tempdir;

    fn fixture() -> Scenario {
        let track = Track {
            agent_id: 3,
            class: AgentClass::Cyclist,
            points: vec![(1, Point2::new(0.25, -1.5)), (2, Point2::new(1.0 / 3.0, 2.0))],
            states: vec![(
                2,
                TrafficState {
                    velocity: 1.5,
                    acceleration: 0.0,
                    heading: 0.7853981633974483,
                    width: 0.8,
                    length: 2.0,
                    class: AgentClass::Cyclist,
                },
            )],
        };
        let map = SemanticMap {
            elements: vec![MapElement {
                kind: MapElementKind::LaneCenterline,
                points: vec![Point2::new(-5.0, 0.0), Point2::new(5.0, 0.0)],
            }],
            bounds: Rect::new(-5.0, -5.0, 5.0, 5.0),
        };
        Scenario {
            agents: vec![track],
            map,
            t_ob: 1,
            t_f: 2,
            frame_period: 0.4,
            unit: DistanceUnit::Meters,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let first = dir.path().join("a.json");
        let second = dir.path().join("b.json");
        let scenario = fixture();
        save_scenario(&scenario, &first).unwrap();
        let loaded = load_scenario(&first).unwrap();
        save_scenario(&loaded, &second).unwrap();
        let bytes_a = std::fs::read(&first).unwrap();
        let bytes_b = std::fs::read(&second).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert!(bytes_a.ends_with(b"\n"));
    }

    #[test]
    fn missing_field_error_names_the_field_and_position() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("broken.json");
        let mut body = scenario_to_json(&fixture()).unwrap();
        body = body.replace("\"t_ob\": 1,\n", "");
        std::fs::write(&path, body).unwrap();
        let err = load_scenario(&path).unwrap_err();
        match err {
            Error::Parse { path: at, detail } => {
                assert!(detail.contains("t_ob"), "detail: {detail}");
                assert!(at.contains("broken.json:"), "path: {at}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_extra_fields_are_ignored() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("extra.json");
        let body = scenario_to_json(&fixture()).unwrap();
        let with_extra = body.replacen('{', "{\n  \"future_extension\": {\"a\": [1, 2]},", 1);
        std::fs::write(&path, with_extra).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded.agents.len(), 1);
        assert_eq!(loaded.agents[0].agent_id, 3);
    }

    #[test]
    fn directory_loading_is_name_sorted_and_rejects_empty() {
        let dir = tempdir().unwrap();
        let mut a = fixture();
        a.agents[0].agent_id = 10;
        let mut b = fixture();
        b.agents[0].agent_id = 20;
        save_scenario(&b, &dir.path().join("scenario_0002.json")).unwrap();
        save_scenario(&a, &dir.path().join("scenario_0001.json")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "not a scenario").unwrap();

        let loaded = load_scenario_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].agents[0].agent_id, 10);
        assert_eq!(loaded[1].agents[0].agent_id, 20);

        let empty = tempdir().unwrap();
        assert!(load_scenario_dir(empty.path()).is_err());
    }
}
