//! Solve traces: the timestamped incumbent pool produced by branch-and-bound,
//! and its line-delimited JSON dump.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::MilpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Monotonic real time in seconds.
    Wall,
    /// One tick per processed branch-and-bound node.
    NodeCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub time: f64,
    pub objective: f64,
    pub x: Vec<f64>,
}

/// Result of a branch-and-bound run.
///
/// `incumbents` keeps the `pool_size` best solutions in the order they were
/// found (so objectives strictly decrease). `timeline` records every
/// improvement as `(time, objective)`, including ones evicted from the pool,
/// which is what primal-integral accounting needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub incumbents: Vec<Incumbent>,
    pub timeline: Vec<(f64, f64)>,
    pub best_bound: f64,
    pub status: SolveStatus,
    pub clock_mode: ClockMode,
    pub nodes: usize,
    pub elapsed: f64,
    /// Variables branched on at least once, ascending.
    pub branched: Vec<usize>,
}

impl SolveTrace {
    pub fn empty(clock_mode: ClockMode) -> Self {
        Self {
            incumbents: Vec::new(),
            timeline: Vec::new(),
            best_bound: f64::INFINITY,
            status: SolveStatus::Infeasible,
            clock_mode,
            nodes: 0,
            elapsed: 0.0,
            branched: Vec::new(),
        }
    }

    pub fn best(&self) -> Option<&Incumbent> {
        self.incumbents.last()
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.best().map(|i| i.objective)
    }

    /// Shifts every timestamp by `offset` (used when chaining solves).
    pub fn shifted(mut self, offset: f64) -> Self {
        for inc in &mut self.incumbents {
            inc.time += offset;
        }
        for t in &mut self.timeline {
            t.0 += offset;
        }
        self
    }
}

/// Writes one JSON object per incumbent: `{"time":..,"objective":..,"x":[..]}`.
pub fn write_trace_dump(trace: &SolveTrace, path: &Path) -> Result<(), MilpError> {
    let mut w = BufWriter::new(File::create(path)?);
    for inc in &trace.incumbents {
        serde_json::to_writer(&mut w, inc)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_dump(path: &Path) -> Result<Vec<Incumbent>, MilpError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
