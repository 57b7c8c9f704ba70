//! Loader for the ETH/UCY pedestrian text format: whitespace-separated
//! rows of frame, agent id, x, y in a distribution-dependent column
//! order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AgentClass, AgentId, Point2, Track};

/// Zero-based token positions of each field in a row. Distributions of
/// the datasets disagree (some swap x and y), so this is explicit
/// configuration, never guessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnOrder {
    pub frame: usize,
    pub id: usize,
    pub x: usize,
    pub y: usize,
}

impl ColumnOrder {
    /// The common "frame id x y" layout.
    pub const FRAME_ID_XY: ColumnOrder = ColumnOrder { frame: 0, id: 1, x: 2, y: 3 };
    /// The layout with swapped coordinates, "frame id y x".
    pub const FRAME_ID_YX: ColumnOrder = ColumnOrder { frame: 0, id: 1, x: 3, y: 2 };

    /// Parses a comma-separated field list such as `frame,id,x,y`: the
    /// position of each name becomes that field's column index.
    pub fn parse(text: &str) -> Result<ColumnOrder> {
        let names: Vec<&str> = text.split(',').map(str::trim).collect();
        if names.len() != 4 {
            return Err(Error::Config(format!(
                "column order needs exactly the 4 fields frame,id,x,y, got {text:?}"
            )));
        }
        let position = |field: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| *n == field)
                .ok_or_else(|| Error::Config(format!("column order {text:?} is missing {field}")))
        };
        Ok(ColumnOrder {
            frame: position("frame")?,
            id: position("id")?,
            x: position("x")?,
            y: position("y")?,
        })
    }

    fn max_index(&self) -> usize {
        self.frame.max(self.id).max(self.x).max(self.y)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = [self.frame, self.id, self.x, self.y];
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("column order reuses an index: {self:?}")));
        }
        Ok(())
    }
}

impl Default for ColumnOrder {
    fn default() -> ColumnOrder {
        ColumnOrder::FRAME_ID_XY
    }
}

/// Tracks plus the sampling period they were recorded at.
#[derive(Debug, Clone)]
pub struct EthucyDataset {
    pub tracks: Vec<Track>,
    pub frame_period: f64,
}

/// Parses a float token that must hold an integral value (frames and ids
/// are written as floats in some distributions).
fn integral(token: &str, what: &str, line: usize) -> Result<i64> {
    let value: f64 = token.parse().map_err(|_| Error::Parse {
        path: format!("line {line}"),
        detail: format!("{what} {token:?} is not a number"),
    })?;
    if value.fract() != 0.0 || !value.is_finite() || value.abs() > 2f64.powi(53) {
        return Err(Error::Parse {
            path: format!("line {line}"),
            detail: format!("{what} {token:?} is not an integral value"),
        });
    }
    Ok(value as i64)
}

/// Loads one ETH/UCY text file into per-agent tracks: frames sorted,
/// class pedestrian, no recorded states. Duplicate (frame, id) rows are
/// an error, as are malformed rows (reported with their line number).
pub fn load_ethucy(path: &Path, columns: ColumnOrder, frame_period: f64) -> Result<EthucyDataset> {
    columns.validate()?;
    if !(frame_period.is_finite() && frame_period > 0.0) {
        return Err(Error::Config(format!("frame period {frame_period} must be > 0")));
    }
    let body = std::fs::read_to_string(path)?;
    let mut by_agent: BTreeMap<AgentId, Vec<(i64, Point2)>> = BTreeMap::new();
    for (index, raw) in body.lines().enumerate() {
        let line = index + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = row.split_whitespace().collect();
        if tokens.len() <= columns.max_index() {
            return Err(Error::Parse {
                path: format!("{}:{line}", path.display()),
                detail: format!(
                    "{} columns, need at least {}",
                    tokens.len(),
                    columns.max_index() + 1
                ),
            });
        }
        let frame = integral(tokens[columns.frame], "frame", line)?;
        let id = integral(tokens[columns.id], "agent id", line)?;
        if id < 0 {
            return Err(Error::Parse {
                path: format!("{}:{line}", path.display()),
                detail: format!("agent id {id} is negative"),
            });
        }
        let coord = |index: usize, what: &str| -> Result<f64> {
            tokens[index].parse().map_err(|_| Error::Parse {
                path: format!("{}:{line}", path.display()),
                detail: format!("{what} {:?} is not a number", tokens[index]),
            })
        };
        let point = Point2::new(coord(columns.x, "x")?, coord(columns.y, "y")?);
        let points = by_agent.entry(id as AgentId).or_default();
        if points.iter().any(|(f, _)| *f == frame) {
            return Err(Error::DuplicateObservation { line, frame, agent: id as AgentId });
        }
        points.push((frame, point));
    }
    let tracks = by_agent
        .into_iter()
        .map(|(agent_id, mut points)| {
            points.sort_by_key(|(f, _)| *f);
            Track { agent_id, class: AgentClass::Pedestrian, points, states: vec![] }
        })
        .collect();
    Ok(EthucyDataset { tracks, frame_period })
}
