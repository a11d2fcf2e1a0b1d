//! Append-only reading log with an in-memory per-node index.
//!
//! On disk: one canonical JSON [`TelemetryRecord`] per LF-terminated line.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::gateway::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreCounters {
    pub ingested: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct ReadingStore {
    by_node: BTreeMap<u16, Vec<TelemetryRecord>>,
    keys: HashSet<(u16, u16, String)>,
    counters: StoreCounters,
    log: Option<File>,
}

fn validate(r: &TelemetryRecord) -> Result<(), StoreError> {
    let finite = [r.timestamp_s, r.temp_c, r.lat, r.lon, r.rssi_dbm]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(StoreError::Malformed("non-finite number".into()));
    }
    if !(-55.0..=125.0).contains(&r.temp_c) {
        return Err(StoreError::Malformed(format!(
            "temp_c {} outside sensor range",
            r.temp_c
        )));
    }
    if !crate::geo::GeoPoint::new(r.lat, r.lon).is_valid() {
        return Err(StoreError::Malformed("position out of range".into()));
    }
    if r.gateway_id.is_empty() {
        return Err(StoreError::Malformed("empty gateway_id".into()));
    }
    Ok(())
}

impl ReadingStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log file, replaying whatever it already holds.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let mut store = Self::replay(path.as_ref())?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())?;
        // Terminate a torn last line so new records start cleanly.
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")?;
        }
        store.log = Some(file);
        Ok(store)
    }

    /// Rebuilds an in-memory store from a log. Unparseable lines are counted
    /// as rejected and skipped.
    pub fn replay(path: &Path) -> Result<Self, StoreError> {
        let mut store = Self::default();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Err(e) = store.ingest_json(line.as_bytes()) {
                log::warn!("replay: skipping line: {e}");
            }
        }
        Ok(store)
    }

    pub fn ingest_json(&mut self, bytes: &[u8]) -> Result<IngestOutcome, StoreError> {
        match TelemetryRecord::from_json(bytes) {
            Ok(r) => self.ingest(r),
            Err(e) => {
                self.counters.rejected += 1;
                Err(StoreError::Malformed(e.to_string()))
            }
        }
    }

    pub fn ingest(&mut self, record: TelemetryRecord) -> Result<IngestOutcome, StoreError> {
        if let Err(e) = validate(&record) {
            self.counters.rejected += 1;
            return Err(e);
        }
        let key = (record.node_id, record.seq, record.gateway_id.clone());
        if self.keys.contains(&key) {
            self.counters.duplicates += 1;
            return Ok(IngestOutcome::Duplicate);
        }
        if let Some(f) = self.log.as_mut() {
            let mut line = record.to_canonical_json();
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.keys.insert(key);
        let series = self.by_node.entry(record.node_id).or_default();
        let at = series.partition_point(|r| r.timestamp_s <= record.timestamp_s);
        series.insert(at, record);
        self.counters.ingested += 1;
        Ok(IngestOutcome::Stored)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Some(f) = self.log.as_mut() {
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_node.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    pub fn counters(&self) -> StoreCounters {
        self.counters
    }

    pub fn node_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.by_node.keys().copied()
    }

    pub fn readings(&self, node_id: u16) -> Option<&[TelemetryRecord]> {
        self.by_node.get(&node_id).map(Vec::as_slice)
    }

    pub fn all(&self) -> impl Iterator<Item = &TelemetryRecord> {
        self.by_node.values().flatten()
    }

    /// Readings of `node_id` with `from_s <= ts <= to_s`.
    pub fn range(&self, node_id: u16, from_s: f64, to_s: f64) -> Option<&[TelemetryRecord]> {
        let series = self.by_node.get(&node_id)?;
        let lo = series.partition_point(|r| r.timestamp_s < from_s);
        let hi = series.partition_point(|r| r.timestamp_s <= to_s);
        Some(&series[lo..hi.max(lo)])
    }

    pub fn latest(&self, node_id: u16) -> Option<&TelemetryRecord> {
        self.by_node.get(&node_id).and_then(|s| s.last())
    }
}
