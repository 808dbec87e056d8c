//! Newline-delimited JSON traces.
//!
//! Line 1 is a `header` record (format version, seed, profile, time step,
//! the full scenario and run configuration, and the initial snapshot). Each
//! following line is a `tick` record in tick order, and the last line is an
//! `end` record with the run metrics. Within a record, fields appear in the
//! order they are declared below.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Metrics, RunConfig, Termination};
use crate::geom::Vec2;
use crate::planner::{CandidateStats, Sample};
use crate::prediction::{AgentKind, GaussianState};
use crate::risk::RiskEntry;
use crate::scenario::Scenario;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub acceleration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianRecord {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub arrived: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRecord {
    pub id: String,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

/// Positions of every actor at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub ego: EgoRecord,
    pub pedestrians: Vec<PedestrianRecord>,
    pub obstacles: Vec<ObstacleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub fallback: bool,
    pub max_risk: f64,
    pub max_harm: f64,
    pub max_probability: f64,
    pub stats: CandidateStats,
    pub sample: Option<Sample>,
    /// Planned ego positions over the horizon.
    pub path: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u32,
    pub kind: AgentKind,
    pub states: Vec<GaussianState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    #[serde(flatten)]
    pub snapshot: Snapshot,
    pub plan: PlanRecord,
    /// Nonzero-probability rows of the executed plan's risk report.
    pub risk: Vec<RiskEntry>,
    pub predictions: Vec<PredictionRecord>,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub seed: u64,
    pub profile: String,
    pub dt: f64,
    pub scenario: Scenario,
    pub config: RunConfig,
    pub initial: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndRecord {
    pub termination: Termination,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TraceRecord {
    Header(Box<TraceHeader>),
    Tick(Box<TickRecord>),
    End(EndRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub ticks: Vec<TickRecord>,
    pub end: EndRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {0}: record out of order")]
    Order(usize),
    #[error("trace is missing its {0} record")]
    Missing(&'static str),
}

impl Trace {
    /// Snapshot at `tick`; tick 0 is the initial state.
    pub fn snapshot(&self, tick: usize) -> Option<&Snapshot> {
        if tick == 0 {
            Some(&self.header.initial)
        } else {
            self.ticks.get(tick - 1).map(|t| &t.snapshot)
        }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let mut line = |r: &TraceRecord| {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        };
        line(&TraceRecord::Header(Box::new(self.header.clone())));
        for t in &self.ticks {
            line(&TraceRecord::Tick(Box::new(t.clone())));
        }
        line(&TraceRecord::End(self.end.clone()));
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, TraceError> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut end = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: TraceRecord = serde_json::from_str(raw).map_err(|source| TraceError::Json { line: i + 1, source })?;
            match rec {
                TraceRecord::Header(h) if header.is_none() => header = Some(*h),
                TraceRecord::Tick(t) if header.is_some() && end.is_none() => ticks.push(*t),
                TraceRecord::End(e) if header.is_some() && end.is_none() => end = Some(e),
                _ => return Err(TraceError::Order(i + 1)),
            }
        }
        Ok(Self {
            header: header.ok_or(TraceError::Missing("header"))?,
            ticks,
            end: end.ok_or(TraceError::Missing("end"))?,
        })
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
