//! Sliding-window extraction: cuts long recordings into fixed-length
//! scenarios with timesteps relabeled to `1..=t_ob+t_f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{DistanceUnit, Rect, Scenario, SemanticMap, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowOptions {
    pub t_ob_steps: usize,
    pub t_f_steps: usize,
    /// Window start spacing, counted in timeline frames.
    pub stride: usize,
    pub frame_period: f64,
    pub unit: DistanceUnit,
}

impl Default for WindowOptions {
    fn default() -> WindowOptions {
        WindowOptions {
            t_ob_steps: 8,
            t_f_steps: 12,
            stride: 20,
            frame_period: 0.4,
            unit: DistanceUnit::Meters,
        }
    }
}

impl WindowOptions {
    pub fn validate(&self) -> Result<()> {
        if self.t_ob_steps < 2 || self.t_f_steps == 0 {
            return Err(Error::Config(format!(
                "window needs t_ob >= 2 and t_f >= 1, got {}/{}",
                self.t_ob_steps, self.t_f_steps
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(self.frame_period.is_finite() && self.frame_period > 0.0) {
            return Err(Error::Config(format!("frame period {} must be > 0", self.frame_period)));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.t_ob_steps + self.t_f_steps
    }
}

/// Cuts the recordings into scenarios. The timeline is the sorted set of
/// distinct frames across all tracks; each window covers `window_len`
/// consecutive timeline entries and relabels them `1..=window_len`.
/// Agents keep membership if they are observed at least once inside the
/// window's observation segment; empty windows are dropped.
pub fn window_scenarios(tracks: &[Track], options: &WindowOptions) -> Result<Vec<Scenario>> {
    options.validate()?;
    let mut timeline: Vec<i64> = tracks.iter().flat_map(|t| t.points.iter().map(|(f, _)| *f)).collect();
    timeline.sort_unstable();
    timeline.dedup();

    let len = options.window_len();
    let mut scenarios = Vec::new();
    let mut start = 0;
    while start + len <= timeline.len() {
        let frames = &timeline[start..start + len];
        let mut agents = Vec::new();
        for track in tracks {
            let mut points = Vec::new();
            for (step, frame) in frames.iter().enumerate() {
                if let Some(p) = track.points.iter().find(|(f, _)| f == frame) {
                    points.push((step as i64 + 1, p.1));
                }
            }
            let observed = points.iter().filter(|(t, _)| *t <= options.t_ob_steps as i64).count();
            if observed >= 1 {
                agents.push(Track {
                    agent_id: track.agent_id,
                    class: track.class,
                    points,
                    states: vec![],
                });
            }
        }
        if !agents.is_empty() {
            let bounds = bounds_of(&agents);
            scenarios.push(Scenario {
                agents,
                map: SemanticMap::empty(bounds),
                t_ob: options.t_ob_steps as i64,
                t_f: len as i64,
                frame_period: options.frame_period,
                unit: options.unit,
            });
        }
        start += options.stride;
    }
    Ok(scenarios)
}

fn bounds_of(tracks: &[Track]) -> Rect {
    Rect::bounding(tracks.iter().flat_map(|t| t.points.iter().map(|(_, p)| *p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentClass, Point2};

    fn track(id: u64, frames: &[i64], step: f64) -> Track {
        Track {
            agent_id: id,
            class: AgentClass::Pedestrian,
            points: frames
                .iter()
                .enumerate()
                .map(|(i, &f)| (f, Point2::new(id as f64 * 10.0 + i as f64 * step, 0.0)))
                .collect(),
            states: vec![],
        }
    }

    fn opts(t_ob: usize, t_f: usize, stride: usize) -> WindowOptions {
        WindowOptions { t_ob_steps: t_ob, t_f_steps: t_f, stride, ..WindowOptions::default() }
    }

    #[test]
    fn three_track_fixture_matches_hand_computation() {
        // Frames every 10 units. Track 1 spans the whole recording,
        // track 2 only the first window, track 3 starts mid-recording.
        let frames_all: Vec<i64> = (0..8).map(|i| i * 10).collect();
        let tracks = vec![
            track(1, &frames_all, 1.0),
            track(2, &[0, 10, 20, 30], 1.0),
            track(3, &[40, 50, 60, 70], 1.0),
        ];
        let scenarios = window_scenarios(&tracks, &opts(2, 2, 2)).unwrap();
        // Timeline has 8 frames; windows of 4 at stride 2: starts 0, 2, 4.
        assert_eq!(scenarios.len(), 3);

        let first = &scenarios[0];
        assert_eq!(first.t_ob, 2);
        assert_eq!(first.t_f, 4);
        let ids: Vec<u64> = first.agents.iter().map(|a| a.agent_id).collect();
        assert_eq!(ids, vec![1, 2]);
        // Track 1's first four points, relabeled 1..=4.
        assert_eq!(
            first.agents[0].points,
            vec![
                (1, Point2::new(10.0, 0.0)),
                (2, Point2::new(11.0, 0.0)),
                (3, Point2::new(12.0, 0.0)),
                (4, Point2::new(13.0, 0.0)),
            ]
        );

        let second = &scenarios[1];
        let ids: Vec<u64> = second.agents.iter().map(|a| a.agent_id).collect();
        // Track 2 has frames 20, 30 at window steps 1, 2: still observed.
        assert_eq!(ids, vec![1, 2]);

        let third = &scenarios[2];
        let ids: Vec<u64> = third.agents.iter().map(|a| a.agent_id).collect();
        // Track 3's frames 40, 50 land at steps 1, 2 of the third window;
        // track 2 ended before it.
        assert_eq!(ids, vec![1, 3]);
    }

    #[test]
    fn exact_span_track_yields_one_window_at_full_stride() {
        let frames: Vec<i64> = (0..6).map(|i| i * 10).collect();
        let tracks = vec![track(1, &frames, 1.0)];
        let options = opts(3, 3, 6);
        let scenarios = window_scenarios(&tracks, &options).unwrap();
        assert_eq!(scenarios.len(), 1);
        assert_eq!(scenarios[0].agents[0].points.len(), 6);
    }

    #[test]
    fn future_only_agents_are_dropped_from_the_window() {
        let tracks = vec![
            track(1, &[0, 10, 20, 30, 40, 50], 1.0),
            // Present only in the future segment (steps 4..6).
            track(2, &[30, 40, 50], 1.0),
        ];
        let scenarios = window_scenarios(&tracks, &opts(3, 3, 6)).unwrap();
        assert_eq!(scenarios.len(), 1);
        let ids: Vec<u64> = scenarios[0].agents.iter().map(|a| a.agent_id).collect();
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn partially_observed_agents_stay_as_context() {
        let tracks = vec![
            track(1, &[0, 10, 20, 30, 40, 50], 1.0),
            // One observed point at step 2, then gone: context only.
            track(2, &[10], 1.0),
        ];
        let scenarios = window_scenarios(&tracks, &opts(3, 3, 6)).unwrap();
        let ids: Vec<u64> = scenarios[0].agents.iter().map(|a| a.agent_id).collect();
        assert_eq!(ids, vec![1, 2]);
        assert_eq!(scenarios[0].agents[1].points, vec![(2, Point2::new(20.0, 0.0))]);
    }

    #[test]
    fn short_recordings_produce_no_windows() {
        let tracks = vec![track(1, &[0, 10, 20], 1.0)];
        let scenarios = window_scenarios(&tracks, &opts(3, 3, 1)).unwrap();
        assert!(scenarios.is_empty());
    }

    #[test]
    fn invalid_options_are_rejected() {
        let tracks = vec![track(1, &[0, 10, 20, 30], 1.0)];
        assert!(window_scenarios(&tracks, &opts(1, 3, 1)).is_err());
        assert!(window_scenarios(&tracks, &opts(3, 0, 1)).is_err());
        assert!(window_scenarios(&tracks, &opts(3, 3, 0)).is_err());
        let mut bad = opts(3, 3, 1);
        bad.frame_period = -0.4;
        assert!(window_scenarios(&tracks, &bad).is_err());
    }

    #[test]
    fn windows_use_the_union_timeline_across_tracks() {
        // Track 2 fills frames track 1 skips; the union timeline makes
        // both windows contiguous.
        let tracks = vec![track(1, &[0, 20, 40, 60], 1.0), track(2, &[10, 30, 50, 70], 1.0)];
        let scenarios = window_scenarios(&tracks, &opts(4, 4, 8)).unwrap();
        assert_eq!(scenarios.len(), 1);
        let ids: Vec<u64> = scenarios[0].agents.iter().map(|a| a.agent_id).collect();
        assert_eq!(ids, vec![1, 2]);
        // Track 1 occupies the odd steps 1, 3, 5, 7 of the merged timeline.
        let steps: Vec<i64> = scenarios[0].agents[0].points.iter().map(|(t, _)| *t).collect();
        assert_eq!(steps, vec![1, 3, 5, 7]);
    }
}
