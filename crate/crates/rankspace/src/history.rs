//! Append-only record of every objective evaluation made during a search.
//!
//! The final answer of an exploration is the argmin over this record, not the
//! terminal vector of any particular phase. Entries can stream to a
//! line-delimited log as they are appended, so a killed run loses at most one
//! record.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rank::RankVector;
use crate::scalar::Real;

/// Which part of the exploration produced an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seed,
    Coarse,
    Fine,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Seed => write!(f, "seed"),
            Phase::Coarse => write!(f, "coarse"),
            Phase::Fine => write!(f, "fine"),
        }
    }
}

/// One objective evaluation: the rank vector tried and the metric obtained
/// (lower is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry<T> {
    pub evaluation_index: u64,
    pub phase: Phase,
    pub iteration: usize,
    pub ranks: Vec<usize>,
    pub metric: T,
}

impl<T: Real> HistoryEntry<T> {
    pub fn rank_vector(&self) -> RankVector {
        RankVector::new(self.ranks.clone())
    }
}

/// Append-only exploration history with an optional streaming sink.
pub struct ExplorationHistory<T> {
    entries: Vec<HistoryEntry<T>>,
    warnings: Vec<String>,
    sink: Option<Box<dyn Write + Send>>,
}

impl<T: Real> Default for ExplorationHistory<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ExplorationHistory<T> {
    pub fn new() -> Self {
        ExplorationHistory {
            entries: Vec::new(),
            warnings: Vec::new(),
            sink: None,
        }
    }

    /// Stream every appended entry to `sink` as one JSON record per line.
    pub fn with_sink(sink: impl Write + Send + 'static) -> Self {
        ExplorationHistory {
            entries: Vec::new(),
            warnings: Vec::new(),
            sink: Some(Box::new(sink)),
        }
    }

    pub fn push(
        &mut self,
        phase: Phase,
        iteration: usize,
        ranks: &RankVector,
        metric: T,
    ) -> Result<&HistoryEntry<T>, Error> {
        let entry = HistoryEntry {
            evaluation_index: self.entries.len() as u64,
            phase,
            iteration,
            ranks: ranks.as_slice().to_vec(),
            metric,
        };
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&entry)
                .map_err(|e| Error::Io(format!("history serialization: {e}")))?;
            writeln!(sink, "{line}").map_err(Error::from)?;
            sink.flush().map_err(Error::from)?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn push_warning(&mut self, warning: impl Into<String>) {
        self.warnings.push(warning.into());
    }

    pub fn entries(&self) -> &[HistoryEntry<T>] {
        &self.entries
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry with the minimal metric; the earliest one wins ties, so repeated
    /// reads agree. `None` only for an empty history.
    pub fn best(&self) -> Option<&HistoryEntry<T>> {
        let mut best: Option<&HistoryEntry<T>> = None;
        for entry in &self.entries {
            match best {
                Some(b) if entry.metric < b.metric => best = Some(entry),
                None => best = Some(entry),
                _ => {}
            }
        }
        best
    }

    /// Parse a line-delimited history log. Errors name the 1-based line.
    pub fn read_log(reader: impl BufRead) -> Result<Vec<HistoryEntry<T>>, Error> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(Error::from)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: HistoryEntry<T> =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(entries)
    }
}

impl<T: Real + std::fmt::Debug> std::fmt::Debug for ExplorationHistory<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExplorationHistory")
            .field("entries", &self.entries)
            .field("warnings", &self.warnings)
            .field("streaming", &self.sink.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_increase_and_best_is_stable() {
        let mut h = ExplorationHistory::<f64>::new();
        h.push(Phase::Seed, 0, &RankVector::new(vec![1]), 5.0).unwrap();
        h.push(Phase::Coarse, 1, &RankVector::new(vec![2]), 2.0).unwrap();
        h.push(Phase::Coarse, 1, &RankVector::new(vec![3]), 2.0).unwrap();
        let indices: Vec<u64> = h.entries().iter().map(|e| e.evaluation_index).collect();
        assert_eq!(indices, vec![0, 1, 2]);
        // Earliest of the tied minima, on every read.
        assert_eq!(h.best().unwrap().ranks, vec![2]);
        assert_eq!(h.best().unwrap().ranks, vec![2]);
    }

    #[test]
    fn log_round_trip_and_line_errors() {
        let shared = std::sync::Arc::new(std::sync::Mutex::new(Vec::<u8>::new()));
        struct SharedWriter(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);
        impl Write for SharedWriter {
            fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(data);
                Ok(data.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut h = ExplorationHistory::with_sink(SharedWriter(shared.clone()));
        h.push(Phase::Seed, 0, &RankVector::new(vec![1, 2]), 1.5).unwrap();
        h.push(Phase::Fine, 3, &RankVector::new(vec![0, 4]), 0.25).unwrap();

        let bytes = shared.lock().unwrap().clone();
        let parsed = ExplorationHistory::<f64>::read_log(bytes.as_slice()).unwrap();
        assert_eq!(parsed, h.entries());

        let bad = b"{\"evaluation_index\":0}\nnot json\n".to_vec();
        let err = ExplorationHistory::<f64>::read_log(bad.as_slice()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
