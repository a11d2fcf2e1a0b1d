//! LoRa→MQTT bridge: radio channel, collision resolution, deduplication,
//! JSON telemetry and publishing through a client session.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::frame::{decode_frame, LoraFrame};
use crate::geo::GeoPoint;
use crate::mqtt::codec::QoS;
use crate::mqtt::session::{
    Backoff, ClientSession, Notice, SessionActions, SessionEvent, SessionState,
};
use crate::pathloss::{is_received, shadowed_rssi, PathLossModel, RadioParams};
use crate::rng::{stream_rng, SimRng, Stream};

pub const DEDUP_WINDOW: usize = 1024;
pub const DEFAULT_TOPIC_PREFIX: &str = "marine/v1";

fn default_gateway_id() -> String {
    "gw1".into()
}
fn default_broker() -> String {
    "127.0.0.1:1883".into()
}
fn default_prefix() -> String {
    DEFAULT_TOPIC_PREFIX.into()
}
fn default_qos() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default = "default_gateway_id")]
    pub gateway_id: String,
    pub position: GeoPoint,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default = "default_broker")]
    pub broker: String,
    #[serde(default = "default_prefix")]
    pub topic_prefix: String,
    #[serde(default = "default_qos")]
    pub qos: u8,
}

impl GatewayConfig {
    pub fn new(gateway_id: impl Into<String>, position: GeoPoint) -> Self {
        Self {
            gateway_id: gateway_id.into(),
            position,
            radio: RadioParams::default(),
            broker: default_broker(),
            topic_prefix: default_prefix(),
            qos: default_qos(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gateway_id.is_empty() || self.gateway_id.contains(['/', '+', '#']) {
            return Err(format!(
                "gateway_id {:?} must be a non-empty single topic level",
                self.gateway_id
            ));
        }
        if self.topic_prefix.is_empty() || self.topic_prefix.contains(['+', '#', '\0']) {
            return Err(format!(
                "topic_prefix {:?} must be non-empty and wildcard-free",
                self.topic_prefix
            ));
        }
        if self.qos > 1 {
            return Err(format!("qos must be 0 or 1, got {}", self.qos));
        }
        if !self.position.is_valid() {
            return Err("gateway position out of range".into());
        }
        self.radio.validate()
    }

    pub fn qos(&self) -> QoS {
        if self.qos == 0 {
            QoS::AtMostOnce
        } else {
            QoS::AtLeastOnce
        }
    }

    pub fn topic_for(&self, node_id: u16) -> String {
        format!(
            "{}/{}/{}/telemetry",
            self.topic_prefix, self.gateway_id, node_id
        )
    }
}

/// One bridged reading. Field order is the canonical JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub node_id: u16,
    pub seq: u16,
    #[serde(rename = "ts")]
    pub timestamp_s: f64,
    pub temp_c: f64,
    pub lat: f64,
    pub lon: f64,
    pub battery_mv: u16,
    pub rssi_dbm: f64,
    pub gateway_id: String,
}

impl TelemetryRecord {
    /// Compact JSON, keys in declaration order, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

/// A frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub node_id: u16,
    pub payload: Vec<u8>,
    pub position: GeoPoint,
    pub start_s: f64,
    pub airtime_s: f64,
}

impl Transmission {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.airtime_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Delivered,
    LostRssi,
    LostCollision,
}

/// A transmission with its RSSI at the gateway already drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTransmission {
    pub tx: Transmission,
    pub rssi_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub payload: Vec<u8>,
    pub node_id: u16,
    pub rssi_dbm: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelOutcome {
    pub delivered: Vec<Reception>,
    pub lost_rssi: u64,
    pub lost_collision: u64,
}

impl ChannelOutcome {
    fn merge(&mut self, other: ChannelOutcome) {
        self.delivered.extend(other.delivered);
        self.lost_rssi += other.lost_rssi;
        self.lost_collision += other.lost_collision;
    }
}

/// Static part of the link budget between nodes and one gateway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub gateway: GeoPoint,
    pub model: PathLossModel,
    pub radio: RadioParams,
    /// Flat extra attenuation (urban clutter), subtracted from every RSSI.
    pub extra_loss_db: f64,
}

impl Link {
    /// Mean RSSI at the gateway, before shadowing.
    pub fn mean_rssi(&self, position: &GeoPoint) -> f64 {
        // Co-located node: clamp to 1 cm so the log model stays finite.
        let d = self.gateway.distance_m(position).max(0.01);
        self.model.rssi_at(d).expect("distance is positive") - self.extra_loss_db
    }

    pub fn score<R: Rng + ?Sized>(&self, tx: Transmission, rng: &mut R) -> ScoredTransmission {
        let rssi_dbm = shadowed_rssi(self.mean_rssi(&tx.position), &self.radio, rng);
        ScoredTransmission { tx, rssi_dbm }
    }
}

fn overlaps(a: &Transmission, b: &Transmission) -> bool {
    a.start_s < b.end_s() && b.start_s < a.end_s()
}

/// Fate of `txs[i]` against every other transmission in `txs`.
///
/// Below sensitivity: lost. Otherwise it survives only if it clears every
/// time-overlapping rival, audible or not, by the capture threshold.
pub fn fate_of(txs: &[ScoredTransmission], i: usize, radio: &RadioParams) -> Fate {
    let me = &txs[i];
    if !is_received(me.rssi_dbm, radio) {
        return Fate::LostRssi;
    }
    let captured = txs
        .iter()
        .enumerate()
        .filter(|(j, other)| *j != i && overlaps(&me.tx, &other.tx))
        .all(|(_, other)| me.rssi_dbm - other.rssi_dbm >= radio.capture_threshold_db);
    if captured {
        Fate::Delivered
    } else {
        Fate::LostCollision
    }
}

fn reception(s: &ScoredTransmission) -> Reception {
    Reception {
        payload: s.tx.payload.clone(),
        node_id: s.tx.node_id,
        rssi_dbm: s.rssi_dbm,
        end_s: s.tx.end_s(),
    }
}

/// Batch channel: draws shadowing for each transmission from `rng` in input
/// order, then resolves pure-ALOHA collisions with capture.
pub fn channel_deliver<R: Rng + ?Sized>(
    txs: &[Transmission],
    link: &Link,
    rng: &mut R,
) -> ChannelOutcome {
    let scored: Vec<ScoredTransmission> = txs.iter().map(|t| link.score(t.clone(), rng)).collect();
    let mut out = ChannelOutcome::default();
    for i in 0..scored.len() {
        match fate_of(&scored, i, &link.radio) {
            Fate::Delivered => out.delivered.push(reception(&scored[i])),
            Fate::LostRssi => out.lost_rssi += 1,
            Fate::LostCollision => out.lost_collision += 1,
        }
    }
    out
}

/// Streaming channel for the clocked runner.
///
/// Shadowing for each node comes from that node's own link stream.
/// A transmission is resolved once the clock passes its end: every rival
/// able to overlap it has started by then.
#[derive(Debug)]
pub struct ChannelSim {
    link: Link,
    seed: u64,
    rngs: HashMap<u16, SimRng>,
    /// Unresolved transmissions followed by resolved ones kept as rivals.
    pending: Vec<ScoredTransmission>,
    resolved: Vec<ScoredTransmission>,
}

impl ChannelSim {
    pub fn new(link: Link, seed: u64) -> Self {
        Self {
            link,
            seed,
            rngs: HashMap::new(),
            pending: Vec::new(),
            resolved: Vec::new(),
        }
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn submit(&mut self, tx: Transmission) {
        let seed = self.seed;
        let rng = self
            .rngs
            .entry(tx.node_id)
            .or_insert_with(|| stream_rng(seed, tx.node_id, Stream::Link));
        let scored = self.link.score(tx, rng);
        self.pending.push(scored);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Resolves all transmissions that ended at or before `now`, in
    /// end-time order.
    pub fn resolve_until(&mut self, now: f64) -> ChannelOutcome {
        let mut out = ChannelOutcome::default();
        let (ready, waiting): (Vec<_>, Vec<_>) =
            self.pending.drain(..).partition(|s| s.tx.end_s() <= now);
        self.pending = waiting;
        let mut ready = ready;
        ready.sort_by(|a, b| {
            a.tx.end_s()
                .total_cmp(&b.tx.end_s())
                .then(a.tx.node_id.cmp(&b.tx.node_id))
        });
        let n_ready = ready.len();
        let mut all: Vec<ScoredTransmission> = ready;
        all.extend(self.pending.iter().cloned());
        all.extend(self.resolved.iter().cloned());
        for i in 0..n_ready {
            let mut o = ChannelOutcome::default();
            match fate_of(&all, i, &self.link.radio) {
                Fate::Delivered => o.delivered.push(reception(&all[i])),
                Fate::LostRssi => o.lost_rssi += 1,
                Fate::LostCollision => o.lost_collision += 1,
            }
            out.merge(o);
        }
        self.resolved.extend(all.into_iter().take(n_ready));
        // Keep resolved ones only while an unresolved transmission could still overlap them.
        let horizon = self
            .pending
            .iter()
            .map(|s| s.tx.start_s)
            .fold(now, f64::min);
        self.resolved.retain(|s| s.tx.end_s() > horizon);
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub delivered: u64,
    pub lost_rssi: u64,
    pub lost_collision: u64,
    pub duplicates: u64,
    pub published: u64,
    pub queue_drops: u64,
    /// Deliveries whose payload failed frame decoding.
    pub corrupt: u64,
}

impl GatewayStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// Per-node sliding window of recently seen sequence numbers.
#[derive(Debug, Default)]
pub struct Dedup {
    seen: HashMap<u16, (HashSet<u16>, VecDeque<u16>)>,
    window: usize,
}

impl Dedup {
    pub fn new(window: usize) -> Self {
        Self {
            seen: HashMap::new(),
            window: window.max(1),
        }
    }

    /// True if `(node_id, seq)` is new; records it.
    pub fn check_and_insert(&mut self, node_id: u16, seq: u16) -> bool {
        let (set, order) = self.seen.entry(node_id).or_default();
        if !set.insert(seq) {
            return false;
        }
        order.push_back(seq);
        if order.len() > self.window {
            if let Some(old) = order.pop_front() {
                set.remove(&old);
            }
        }
        true
    }
}

pub struct Gateway {
    config: GatewayConfig,
    session: ClientSession,
    dedup: Dedup,
    stats: GatewayStats,
    handed_to_session: u64,
    backoff: Backoff,
    reconnect_at: Option<f64>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Self {
        let session = ClientSession::new(
            config.gateway_id.clone(),
            crate::mqtt::session::DEFAULT_KEEP_ALIVE_S,
        );
        Self {
            config,
            session,
            dedup: Dedup::new(DEDUP_WINDOW),
            stats: GatewayStats::default(),
            handed_to_session: 0,
            backoff: Backoff::default(),
            reconnect_at: Some(0.0),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn session(&self) -> &ClientSession {
        &self.session
    }

    pub fn stats(&self) -> GatewayStats {
        let c = self.session.counters();
        GatewayStats {
            queue_drops: c.queue_drops,
            published: self.handed_to_session - c.queue_drops - self.session.queued() as u64,
            ..self.stats
        }
    }

    /// Counts channel losses against this gateway.
    pub fn record_losses(&mut self, outcome: &ChannelOutcome) {
        self.stats.lost_rssi += outcome.lost_rssi;
        self.stats.lost_collision += outcome.lost_collision;
    }

    /// Dedup and convert a decoded frame.
    pub fn bridge_frame(
        &mut self,
        frame: &LoraFrame,
        rssi_dbm: f64,
        now: f64,
    ) -> Option<TelemetryRecord> {
        if !self.dedup.check_and_insert(frame.node_id, frame.seq) {
            self.stats.duplicates += 1;
            return None;
        }
        Some(TelemetryRecord {
            node_id: frame.node_id,
            seq: frame.seq,
            timestamp_s: now,
            temp_c: f64::from(frame.temp_centi_c) / 100.0,
            lat: f64::from(frame.lat_e7) / 1e7,
            lon: f64::from(frame.lon_e7) / 1e7,
            battery_mv: frame.battery_mv,
            // Receivers saturate; a measured RSSI is never above 0 dBm.
            rssi_dbm: rssi_dbm.min(0.0),
            gateway_id: self.config.gateway_id.clone(),
        })
    }

    pub fn publish_telemetry(&mut self, record: &TelemetryRecord, now: f64) -> SessionActions {
        self.handed_to_session += 1;
        self.session.step(SessionEvent::PublishRequested {
            topic: self.config.topic_for(record.node_id),
            payload: record.to_canonical_json().into_bytes(),
            qos: self.config.qos(),
            now,
        })
    }

    /// Full receive path for one delivered payload.
    pub fn receive(&mut self, rx: &Reception, now: f64) -> SessionActions {
        self.stats.delivered += 1;
        let frame = match decode_frame(&rx.payload) {
            Ok(f) => f,
            Err(e) => {
                log::debug!("gateway {}: dropped payload: {e}", self.config.gateway_id);
                self.stats.corrupt += 1;
                return SessionActions::default();
            }
        };
        match self.bridge_frame(&frame, rx.rssi_dbm, now) {
            Some(record) => self.publish_telemetry(&record, now),
            None => SessionActions::default(),
        }
    }

    pub fn on_bytes(&mut self, data: &[u8], now: f64) -> SessionActions {
        let act = self.session.step(SessionEvent::BytesIn { data, now });
        self.after(&act, now);
        act
    }

    pub fn on_connection_lost(&mut self, now: f64) -> SessionActions {
        let act = self.session.step(SessionEvent::ConnectionLost { now });
        self.after(&act, now);
        act
    }

    /// Keep-alive and reconnect handling.
    pub fn tick(&mut self, now: f64) -> SessionActions {
        let mut act = self.session.step(SessionEvent::Tick { now });
        self.after(&act, now);
        if self.session.state() == SessionState::Disconnected
            && self.reconnect_at.is_some_and(|t| now >= t)
        {
            self.reconnect_at = None;
            let more = self.session.step(SessionEvent::ConnectRequested { now });
            act.bytes_out.extend(more.bytes_out);
            act.state_change = more.state_change.or(act.state_change);
        }
        act
    }

    fn after(&mut self, act: &SessionActions, now: f64) {
        if act.notices.iter().any(|n| {
            matches!(
                n,
                Notice::ConnectRefused(_) | Notice::Timeout | Notice::ProtocolError(_)
            )
        }) || (act
            .state_change
            .is_some_and(|(_, to)| to == SessionState::Disconnected))
        {
            self.reconnect_at = Some(now + self.backoff.next_delay());
        }
        if act
            .state_change
            .is_some_and(|(_, to)| to == SessionState::Connected)
        {
            self.backoff.reset();
        }
    }
}
