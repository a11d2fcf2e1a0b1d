//! Terminal monitoring: persistence, queries, smoothing, periodic snapshots
//! and the RSSI/distance curve fit over live data.

pub mod api;
pub mod http;
pub mod smoothing;
pub mod store;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::Serialize;
use thiserror::Error;

use crate::gateway::TelemetryRecord;
use crate::geo::GeoPoint;
use crate::pathloss::{fit_log_model, PathLossError, PathLossModel, RssiSample};

pub use smoothing::{smooth, SmoothingKind, SmoothingSpec};
pub use store::{IngestOutcome, ReadingStore, StoreCounters, StoreError};

pub const DEFAULT_HTTP_PORT: u16 = 8080;
pub const DEFAULT_REFRESH_PERIOD_S: f64 = 1.0;
pub const DEFAULT_TRAILING_WINDOW_S: f64 = 3600.0;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("from ({from}) is after to ({to})")]
    BadRange { from: f64, to: f64 },
    #[error("node {0} not found")]
    NotFound(u16),
    #[error("fit: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub ts: f64,
    pub seq: u16,
    pub temp_c: f64,
    pub rssi_dbm: f64,
    pub battery_mv: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub a: f64,
    pub b: f64,
    pub r_squared: Option<f64>,
    pub distance_unit_m: f64,
    pub samples: usize,
    pub distinct_distances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub node_id: u16,
    pub readings: usize,
    pub latest: TelemetryRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TempStats {
    pub from_ts: f64,
    pub to_ts: f64,
    pub count: usize,
    pub min_c: f64,
    pub max_c: f64,
    pub mean_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub nodes: Vec<NodeSummary>,
    pub node_count: usize,
    pub reading_count: usize,
    pub trailing: Option<TempStats>,
}

impl Snapshot {
    pub fn of(store: &ReadingStore, trailing_window_s: f64) -> Self {
        let nodes: Vec<NodeSummary> = store
            .node_ids()
            .filter_map(|id| {
                let series = store.readings(id)?;
                Some(NodeSummary {
                    node_id: id,
                    readings: series.len(),
                    latest: series.last()?.clone(),
                })
            })
            .collect();
        let newest = nodes
            .iter()
            .map(|n| n.latest.timestamp_s)
            .fold(f64::NEG_INFINITY, f64::max);
        let trailing = if nodes.is_empty() {
            None
        } else {
            let from = newest - trailing_window_s;
            let temps: Vec<f64> = store
                .all()
                .filter(|r| r.timestamp_s >= from)
                .map(|r| r.temp_c)
                .collect();
            Some(TempStats {
                from_ts: from,
                to_ts: newest,
                count: temps.len(),
                min_c: temps.iter().copied().fold(f64::INFINITY, f64::min),
                max_c: temps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_c: temps.iter().sum::<f64>() / temps.len() as f64,
            })
        };
        Snapshot {
            node_count: nodes.len(),
            reading_count: store.len(),
            nodes,
            trailing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    /// Known gateway positions, for turning readings into distances.
    pub gateways: BTreeMap<String, GeoPoint>,
    pub trailing_window_s: f64,
    pub refresh_period_s: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            gateways: BTreeMap::new(),
            trailing_window_s: DEFAULT_TRAILING_WINDOW_S,
            refresh_period_s: DEFAULT_REFRESH_PERIOD_S,
        }
    }
}

/// Single-writer / many-reader monitor state.
pub struct Monitor {
    config: MonitorConfig,
    store: RwLock<ReadingStore>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl Monitor {
    pub fn new(config: MonitorConfig, store: ReadingStore) -> Self {
        let snapshot = Arc::new(Snapshot::of(&store, config.trailing_window_s));
        Self {
            config,
            store: RwLock::new(store),
            snapshot: RwLock::new(snapshot),
        }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn ingest(&self, record: TelemetryRecord) -> Result<IngestOutcome, StoreError> {
        self.store.write().ingest(record)
    }

    pub fn ingest_json(&self, bytes: &[u8]) -> Result<IngestOutcome, StoreError> {
        self.store.write().ingest_json(bytes)
    }

    /// Runs `f` against a consistent view of the store.
    pub fn read<T>(&self, f: impl FnOnce(&ReadingStore) -> T) -> T {
        f(&self.store.read())
    }

    /// Rebuilds the published snapshot from the store.
    pub fn refresh(&self) -> Arc<Snapshot> {
        let fresh = {
            let store = self.store.read();
            Arc::new(Snapshot::of(&store, self.config.trailing_window_s))
        };
        *self.snapshot.write() = fresh.clone();
        fresh
    }

    /// Last published snapshot; may lag the store by one refresh period.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    pub fn counters(&self) -> StoreCounters {
        self.store.read().counters()
    }

    pub fn query_readings(
        &self,
        node_id: u16,
        from_s: f64,
        to_s: f64,
        smoothing: &SmoothingSpec,
    ) -> Result<Vec<SeriesPoint>, QueryError> {
        query_readings(&self.store.read(), node_id, from_s, to_s, smoothing)
    }

    pub fn fit_observed_rssi(&self, unit_m: f64) -> Result<FitReport, QueryError> {
        fit_observed_rssi(&self.store.read(), &self.config.gateways, unit_m)
    }
}

pub fn query_readings(
    store: &ReadingStore,
    node_id: u16,
    from_s: f64,
    to_s: f64,
    smoothing: &SmoothingSpec,
) -> Result<Vec<SeriesPoint>, QueryError> {
    if from_s > to_s {
        return Err(QueryError::BadRange {
            from: from_s,
            to: to_s,
        });
    }
    let rows = store
        .range(node_id, from_s, to_s)
        .ok_or(QueryError::NotFound(node_id))?;
    let temps: Vec<(f64, f64)> = rows.iter().map(|r| (r.timestamp_s, r.temp_c)).collect();
    Ok(smooth(&temps, smoothing)
        .into_iter()
        .zip(rows)
        .map(|((ts, temp_c), r)| SeriesPoint {
            ts,
            seq: r.seq,
            temp_c,
            rssi_dbm: r.rssi_dbm,
            battery_mv: r.battery_mv,
        })
        .collect())
}

/// Pairs every stored RSSI with its node-to-gateway distance and fits the
/// log-distance model. Readings from unknown gateways are skipped.
pub fn fit_observed_rssi(
    store: &ReadingStore,
    gateways: &BTreeMap<String, GeoPoint>,
    unit_m: f64,
) -> Result<FitReport, QueryError> {
    let samples: Vec<RssiSample> = store
        .all()
        .filter_map(|r| {
            let gw = gateways.get(&r.gateway_id)?;
            RssiSample::new(gw.distance_m(&r.position()), r.rssi_dbm).ok()
        })
        .collect();
    let mut distances: Vec<f64> = samples.iter().map(|s| s.distance_m).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    if distances.len() < 2 {
        return Err(QueryError::Fit(format!(
            "need readings from at least 2 distinct distances, have {}",
            distances.len()
        )));
    }
    let model: PathLossModel = fit_log_model(&samples, unit_m)
        .map_err(|e: PathLossError| QueryError::Fit(e.to_string()))?;
    Ok(FitReport {
        a: model.a,
        b: model.b,
        r_squared: model.r_squared,
        distance_unit_m: model.distance_unit_m,
        samples: samples.len(),
        distinct_distances: distances.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(node_id: u16, seq: u16, ts: f64, pos: GeoPoint, rssi: f64) -> TelemetryRecord {
        TelemetryRecord {
            node_id,
            seq,
            timestamp_s: ts,
            temp_c: 21.5,
            lat: pos.lat,
            lon: pos.lon,
            battery_mv: 4100,
            rssi_dbm: rssi,
            gateway_id: "gw1".into(),
        }
    }

    fn gw() -> GeoPoint {
        GeoPoint::new(20.0, 110.0)
    }

    fn monitor() -> Monitor {
        let mut cfg = MonitorConfig::default();
        cfg.gateways.insert("gw1".into(), gw());
        Monitor::new(cfg, ReadingStore::in_memory())
    }

    #[test]
    fn query_examples() {
        let m = monitor();
        for i in 0..10 {
            m.ingest(rec(
                1,
                i,
                f64::from(i) * 60.0,
                gw().offset_north(100.0),
                -60.0,
            ))
            .unwrap();
        }
        let all = m
            .query_readings(1, 0.0, 1e9, &SmoothingSpec::none())
            .unwrap();
        assert_eq!(all.len(), 10);
        assert!(all.windows(2).all(|w| w[0].ts < w[1].ts));
        assert!(m
            .query_readings(1, 1e6, 2e6, &SmoothingSpec::none())
            .unwrap()
            .is_empty());
        assert_eq!(
            m.query_readings(9, 0.0, 1.0, &SmoothingSpec::none()),
            Err(QueryError::NotFound(9))
        );
        assert!(matches!(
            m.query_readings(1, 5.0, 1.0, &SmoothingSpec::none()),
            Err(QueryError::BadRange { .. })
        ));
    }

    #[test]
    fn snapshot_examples() {
        let m = monitor();
        let s = m.refresh();
        assert!(s.nodes.is_empty());
        assert_eq!(s.reading_count, 0);
        for node in 1..=3u16 {
            for seq in 0..4u16 {
                m.ingest(rec(
                    node,
                    seq,
                    f64::from(seq * 10 + node),
                    gw().offset_north(100.0),
                    -60.0,
                ))
                .unwrap();
            }
        }
        let s = m.refresh();
        assert_eq!(s.nodes.len(), 3);
        for n in &s.nodes {
            let max_ts = m.read(|st| {
                st.readings(n.node_id)
                    .unwrap()
                    .iter()
                    .map(|r| r.timestamp_s)
                    .fold(0.0, f64::max)
            });
            assert_eq!(n.latest.timestamp_s, max_ts);
        }
        assert_eq!(s.trailing.unwrap().count, 12);
    }

    #[test]
    fn fit_needs_two_distances() {
        let m = monitor();
        m.ingest(rec(1, 0, 0.0, gw().offset_north(100.0), -60.0))
            .unwrap();
        m.ingest(rec(1, 1, 60.0, gw().offset_north(100.0), -61.0))
            .unwrap();
        assert!(matches!(m.fit_observed_rssi(60.0), Err(QueryError::Fit(_))));
    }

    #[test]
    fn fit_recovers_noiseless_model() {
        let m = monitor();
        let model = PathLossModel::reference();
        for k in 1..=20u16 {
            let p = gw().offset_north(60.0 * f64::from(k));
            let d = gw().distance_m(&p);
            m.ingest(rec(k, 0, 0.0, p, model.rssi_at(d).unwrap()))
                .unwrap();
        }
        let f = m.fit_observed_rssi(60.0).unwrap();
        assert!((f.a - model.a).abs() < 1e-9);
        assert!((f.b - model.b).abs() < 1e-9);
        assert_eq!(f.samples, 20);
    }

    #[test]
    fn snapshot_is_atomic_under_concurrent_ingest() {
        let m = Arc::new(monitor());
        let writer = {
            let m = m.clone();
            std::thread::spawn(move || {
                for i in 0..2000u16 {
                    m.ingest(rec(i % 4, i, f64::from(i), gw().offset_north(100.0), -60.0))
                        .unwrap();
                }
            })
        };
        let mut last_latest: BTreeMap<u16, f64> = BTreeMap::new();
        for _ in 0..200 {
            let s = m.refresh();
            let sum: usize = s.nodes.iter().map(|n| n.readings).sum();
            assert_eq!(sum, s.reading_count, "torn snapshot");
            for n in &s.nodes {
                let prev = last_latest
                    .insert(n.node_id, n.latest.timestamp_s)
                    .unwrap_or(f64::NEG_INFINITY);
                assert!(n.latest.timestamp_s >= prev);
            }
        }
        writer.join().unwrap();
        assert_eq!(m.refresh().reading_count, 2000);
    }
}
