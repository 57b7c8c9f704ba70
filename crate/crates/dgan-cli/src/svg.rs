//! SVG forecast overlay: the semantic map drawn from its vector elements
//! (same palette as the raster), observed history dashed in white, and
//! predicted futures colored by class with opacity tracking probability.

use std::fmt::Write;

use dgan_core::model::TrajectoryHypothesis;
use dgan_core::raster::{color_code, BACKGROUND};
use dgan_core::scene::{AgentClass, AgentId, Point2, Scenario};

fn hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn class_color(class: AgentClass) -> &'static str {
    match class {
        AgentClass::Vehicle => "#e74c3c",
        AgentClass::Cyclist => "#2ecc71",
        AgentClass::Pedestrian => "#3498db",
    }
}

pub(crate) fn render(
    scenario: &Scenario,
    forecasts: &[(AgentId, Vec<&TrajectoryHypothesis>)],
) -> String {
    // View window: map bounds grown to cover every drawn point.
    let mut b = scenario.map.bounds;
    let mut grow = |p: Point2| {
        b.min_x = b.min_x.min(p.x);
        b.min_y = b.min_y.min(p.y);
        b.max_x = b.max_x.max(p.x);
        b.max_y = b.max_y.max(p.y);
    };
    for track in &scenario.agents {
        for (_, p) in &track.points {
            grow(*p);
        }
    }
    for (_, hypotheses) in forecasts {
        for h in hypotheses {
            for p in &h.points {
                grow(*p);
            }
        }
    }
    let pad = 2.0;
    let (min_x, min_y) = (b.min_x - pad, b.min_y - pad);
    let (w, h) = (b.max_x - b.min_x + 2.0 * pad, b.max_y - b.min_y + 2.0 * pad);
    // World y grows upward, SVG y downward: mirror inside the view box.
    let (sum_y_lo, sum_y_hi) = (b.min_y, b.max_y);
    let vy = move |y: f64| sum_y_hi + sum_y_lo - y;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{min_x:.3} {min_y:.3} {w:.3} {h:.3}\" width=\"900\" height=\"{:.0}\">",
        900.0 * h / w.max(1e-9),
    );
    let _ = writeln!(
        out,
        "<rect x=\"{min_x:.3}\" y=\"{min_y:.3}\" width=\"{w:.3}\" height=\"{h:.3}\" fill=\"{}\"/>",
        hex(BACKGROUND),
    );

    let points_attr = |pts: &[Point2]| {
        let mut s = String::new();
        for p in pts {
            let _ = write!(s, "{:.3},{:.3} ", p.x, vy(p.y));
        }
        s.trim_end().to_string()
    };

    for element in &scenario.map.elements {
        let color = hex(color_code(element.kind));
        if element.kind.is_polygon() {
            let _ = writeln!(
                out,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.35\"/>",
                points_attr(&element.points),
            );
        } else {
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.2\" stroke-opacity=\"0.8\"/>",
                points_attr(&element.points),
            );
        }
    }

    for track in &scenario.agents {
        let observed: Vec<Point2> = track
            .points
            .iter()
            .filter(|(t, _)| *t <= scenario.t_ob)
            .map(|(_, p)| *p)
            .collect();
        if observed.len() < 2 {
            continue;
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#ffffff\" stroke-width=\"0.18\" stroke-dasharray=\"0.6 0.45\"/>",
            points_attr(&observed),
        );
        let last = observed[observed.len() - 1];
        let _ = writeln!(
            out,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"0.35\" fill=\"#ffffff\"/>",
            last.x,
            vy(last.y),
        );
    }

    for (agent, hypotheses) in forecasts {
        let max_p = hypotheses.iter().map(|h| h.probability).fold(0.0_f64, f64::max).max(1e-12);
        let anchor_point =
            scenario.agents.iter().find(|t| t.agent_id == *agent).and_then(|t| {
                t.points.iter().filter(|(ts, _)| *ts <= scenario.t_ob).map(|(_, p)| *p).last()
            });
        for h in hypotheses {
            let mut pts = Vec::with_capacity(h.points.len() + 1);
            if let Some(p) = anchor_point {
                pts.push(p);
            }
            pts.extend_from_slice(&h.points);
            let opacity = 0.25 + 0.7 * h.probability / max_p;
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.25\" stroke-opacity=\"{opacity:.3}\"><title>agent {agent}: {} anchor {}, probability {:.4}</title></polyline>",
                points_attr(&pts),
                class_color(h.class),
                h.class.name(),
                h.anchor,
                h.probability,
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
