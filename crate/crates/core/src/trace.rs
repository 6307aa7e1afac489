//! Episode traces as JSON Lines: one object per decision, fields in a
//! fixed order so diffs between runs line up.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agent::TraceStep;
use crate::error::{Error, Result};

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Episode index within the run.
    pub episode: usize,
    /// Task id within its world.
    pub task: usize,
    pub step: usize,
    pub node: usize,
    pub sigma: f64,
    pub stop_prob: f64,
    pub actions: Vec<usize>,
    pub probs: Vec<f64>,
    pub chosen: Option<usize>,
}

impl TraceRecord {
    pub fn new(episode: usize, task: usize, step: TraceStep) -> TraceRecord {
        TraceRecord {
            episode,
            task,
            step: step.step,
            node: step.node,
            sigma: step.sigma,
            stop_prob: step.stop_prob,
            actions: step.actions,
            probs: step.probs,
            chosen: step.chosen,
        }
    }
}

/// Streams records to a writer, one JSON object per line.
pub struct TraceWriter<W: Write> {
    out: W,
    lines: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> TraceWriter<W> {
        TraceWriter { out, lines: 0 }
    }

    pub fn record(&mut self, rec: &TraceRecord) -> Result<()> {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::format("trace", format!("serialize: {e}")))?;
        self.out
            .write_all(line.as_bytes())
            .and_then(|()| self.out.write_all(b"\n"))
            .map_err(|e| Error::io("trace", e))?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    /// Flushes and hands the writer back.
    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io("trace", e))?;
        Ok(self.out)
    }
}

/// Parses a trace file produced by [`TraceWriter`].
pub fn read_jsonl(text: &str) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line)
            .map_err(|e| Error::format("trace", format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}
