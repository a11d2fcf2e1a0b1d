//! Clocked end-to-end pipeline and range sweeps.
//!
//! Per tick, in fixed order: nodes → channel → gateway → broker → monitor.
//! All MQTT traffic is real encoded bytes through the embedded broker.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::frame::encode_frame;
use crate::gateway::{ChannelSim, Gateway, GatewayStats, Link, Transmission};
use crate::monitor::{FitReport, Monitor, MonitorConfig, ReadingStore, StoreCounters};
use crate::mqtt::broker::{Broker, BrokerStats, ConnId};
use crate::mqtt::codec::QoS;
use crate::mqtt::session::{ClientSession, SessionActions, SessionEvent, SessionState};
use crate::node::NodeState;
use crate::pathloss::{fit_log_model, write_samples_csv, PathLossModel, RssiSample};
use crate::rng::{stream_rng, Stream};
use crate::scenario::Scenario;

const MONITOR_CLIENT_ID: &str = "monitor";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub frames_emitted: u64,
    pub channel_accounted: u64,
    pub gateway_accounted: u64,
    pub monitor_ingested: u64,
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub frames_emitted: u64,
    pub frames_per_node: BTreeMap<u16, u64>,
    pub gateway: GatewayStats,
    pub broker: BrokerStats,
    pub monitor: StoreCounters,
    pub conservation: Conservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Canonical JSON records in ingestion order, LF-terminated.
    pub telemetry_jsonl: String,
    pub stats: RunStats,
    /// Stored readings as (gateway distance, rssi) pairs.
    pub rssi_samples: Vec<RssiSample>,
    pub fit: Result<FitReport, String>,
    /// Readings stored per node.
    pub stored_per_node: BTreeMap<u16, u64>,
}

#[derive(Serialize)]
struct FitError<'a> {
    error: &'a str,
}

impl RunReport {
    pub fn fit_json(&self) -> String {
        match &self.fit {
            Ok(f) => serde_json::to_string(f).expect("fit serializes"),
            Err(e) => serde_json::to_string(&FitError { error: e }).expect("error serializes"),
        }
    }

    pub fn stats_json(&self) -> String {
        serde_json::to_string_pretty(&self.stats).expect("stats serialize")
    }

    /// Writes telemetry.jsonl, rssi_samples.csv, fit.json and stats.json.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("telemetry.jsonl"), &self.telemetry_jsonl)?;
        let mut csv = std::fs::File::create(dir.join("rssi_samples.csv"))?;
        write_samples_csv(&mut csv, &self.rssi_samples)?;
        csv.flush()?;
        std::fs::write(dir.join("fit.json"), self.fit_json() + "\n")?;
        std::fs::write(dir.join("stats.json"), self.stats_json() + "\n")?;
        Ok(())
    }
}

/// In-process wiring of the gateway and monitor sessions through the broker.
struct Bus {
    broker: Broker,
    gw_conn: ConnId,
    mon_conn: ConnId,
    monitor_session: ClientSession,
    monitor: Monitor,
    telemetry: String,
}

impl Bus {
    /// Moves bytes between the three parties until nothing is in flight.
    fn pump(
        &mut self,
        gateway: &mut Gateway,
        from_gateway: Vec<u8>,
        from_monitor: Vec<u8>,
        now: f64,
    ) {
        let mut to_broker: Vec<(ConnId, Vec<u8>)> = Vec::new();
        if !from_gateway.is_empty() {
            to_broker.push((self.gw_conn, from_gateway));
        }
        if !from_monitor.is_empty() {
            to_broker.push((self.mon_conn, from_monitor));
        }
        while !to_broker.is_empty() {
            let mut next = Vec::new();
            for (conn, bytes) in to_broker.drain(..) {
                let actions = self.broker.handle_bytes(conn, &bytes);
                for (to, out) in actions.sends {
                    let reply = if to == self.gw_conn {
                        gateway.on_bytes(&out, now)
                    } else if to == self.mon_conn {
                        self.monitor_bytes(&out, now)
                    } else {
                        continue;
                    };
                    if !reply.bytes_out.is_empty() {
                        next.push((to, reply.bytes_out));
                    }
                }
                for closed in actions.close {
                    if closed == self.gw_conn {
                        gateway.on_connection_lost(now);
                        self.gw_conn = self.broker.open();
                    } else if closed == self.mon_conn {
                        self.monitor_session
                            .step(SessionEvent::ConnectionLost { now });
                        self.mon_conn = self.broker.open();
                    }
                }
            }
            to_broker = next;
        }
    }

    fn monitor_bytes(&mut self, data: &[u8], now: f64) -> SessionActions {
        let act = self
            .monitor_session
            .step(SessionEvent::BytesIn { data, now });
        for d in &act.deliveries {
            match self.monitor.ingest_json(&d.payload) {
                Ok(crate::monitor::IngestOutcome::Stored) => {
                    self.telemetry
                        .push_str(std::str::from_utf8(&d.payload).unwrap_or_default());
                    self.telemetry.push('\n');
                }
                Ok(_) => {}
                Err(e) => log::warn!("monitor rejected payload on {}: {e}", d.topic),
            }
        }
        act
    }

    /// Keeps the monitor subscribed; returns bytes for the broker.
    fn monitor_tick(&mut self, prefix: &str, now: f64) -> Vec<u8> {
        let mut out = Vec::new();
        match self.monitor_session.state() {
            SessionState::Disconnected => {
                out.extend(
                    self.monitor_session
                        .step(SessionEvent::ConnectRequested { now })
                        .bytes_out,
                );
            }
            _ => out.extend(
                self.monitor_session
                    .step(SessionEvent::Tick { now })
                    .bytes_out,
            ),
        }
        out.extend(self.subscribe_if_needed(prefix, now));
        out
    }

    fn subscribe_if_needed(&mut self, prefix: &str, now: f64) -> Vec<u8> {
        if self.monitor_session.state() == SessionState::Connected
            && self.broker.subscriptions(self.mon_conn) == 0
        {
            let filter = format!("{prefix}/+/+/telemetry");
            return self
                .monitor_session
                .step(SessionEvent::SubscribeRequested {
                    filters: vec![(filter, QoS::AtLeastOnce)],
                    now,
                })
                .bytes_out;
        }
        Vec::new()
    }
}

/// Runs a scenario to completion. Deterministic for a given scenario.
pub fn run(scenario: &Scenario) -> RunReport {
    let link = Link {
        gateway: scenario.gateway.position,
        model: scenario.channel.model,
        radio: scenario.channel.radio,
        extra_loss_db: scenario.extra_loss_db(),
    };
    let mut channel = ChannelSim::new(link, scenario.seed);
    let mut nodes: Vec<(&crate::node::NodeConfig, NodeState)> = scenario
        .nodes
        .iter()
        .map(|cfg| {
            (
                cfg,
                NodeState::new(
                    cfg,
                    &mut stream_rng(scenario.seed, cfg.node_id, Stream::Node),
                ),
            )
        })
        .collect();

    let mut gateway = Gateway::new(scenario.gateway.clone());
    let mut monitor_cfg = MonitorConfig::default();
    monitor_cfg.gateways.insert(
        scenario.gateway.gateway_id.clone(),
        scenario.gateway.position,
    );
    let mut broker = Broker::new();
    let gw_conn = broker.open();
    let mon_conn = broker.open();
    let mut bus = Bus {
        broker,
        gw_conn,
        mon_conn,
        monitor_session: ClientSession::new(
            MONITOR_CLIENT_ID,
            crate::mqtt::session::DEFAULT_KEEP_ALIVE_S,
        ),
        monitor: Monitor::new(monitor_cfg, ReadingStore::in_memory()),
        telemetry: String::new(),
    };
    let prefix = scenario.gateway.topic_prefix.clone();

    // Bring both sessions up before the first tick.
    let m = bus.monitor_tick(&prefix, 0.0);
    bus.pump(&mut gateway, Vec::new(), m, 0.0);
    let m = bus.subscribe_if_needed(&prefix, 0.0);
    bus.pump(&mut gateway, Vec::new(), m, 0.0);
    let g = gateway.tick(0.0).bytes_out;
    bus.pump(&mut gateway, g, Vec::new(), 0.0);

    let mut frames_per_node: BTreeMap<u16, u64> = BTreeMap::new();
    let mut now = 0.0;
    let mut step = 0u64;
    while now < scenario.duration_s {
        let end = (((step + 1) as f64) * scenario.tick_s).min(scenario.duration_s);
        let dt = end - now;
        for (cfg, state) in nodes.iter_mut() {
            for e in state.step(cfg, &scenario.water, now, dt) {
                *frames_per_node.entry(cfg.node_id).or_default() += 1;
                let payload = encode_frame(&e.frame)
                    .expect("node frames satisfy codec invariants")
                    .to_vec();
                channel.submit(Transmission {
                    node_id: cfg.node_id,
                    payload,
                    position: cfg.position,
                    start_s: e.start_s,
                    airtime_s: e.airtime_s,
                });
            }
        }
        deliver(&mut channel, &mut gateway, &mut bus, end);
        let g = gateway.tick(end).bytes_out;
        let m = bus.monitor_tick(&prefix, end);
        bus.pump(&mut gateway, g, m, end);
        now = end;
        step += 1;
    }
    // Frames sampled before the end may still be on the air.
    deliver(&mut channel, &mut gateway, &mut bus, f64::INFINITY);
    bus.monitor.refresh();

    let gw_stats = gateway.stats();
    let monitor_counters = bus.monitor.counters();
    let frames_emitted: u64 = frames_per_node.values().sum();
    let channel_accounted = gw_stats.delivered + gw_stats.lost_rssi + gw_stats.lost_collision;
    let gateway_accounted =
        gw_stats.published + gw_stats.duplicates + gw_stats.queue_drops + gw_stats.corrupt;
    let conservation = Conservation {
        frames_emitted,
        channel_accounted,
        gateway_accounted,
        monitor_ingested: monitor_counters.ingested,
        balanced: frames_emitted == channel_accounted
            && gw_stats.delivered == gateway_accounted
            && gw_stats.published == monitor_counters.ingested,
    };

    let (rssi_samples, stored_per_node) = bus.monitor.read(|store| {
        let samples: Vec<RssiSample> = store
            .all()
            .filter_map(|r| {
                RssiSample::new(
                    scenario.gateway.position.distance_m(&r.position()),
                    r.rssi_dbm,
                )
                .ok()
            })
            .collect();
        let per_node = store
            .node_ids()
            .map(|id| (id, store.readings(id).map_or(0, |s| s.len() as u64)))
            .collect();
        (samples, per_node)
    });
    let fit = bus
        .monitor
        .fit_observed_rssi(scenario.channel.model.distance_unit_m)
        .map_err(|e| e.to_string());

    RunReport {
        telemetry_jsonl: bus.telemetry,
        stats: RunStats {
            frames_emitted,
            frames_per_node,
            gateway: gw_stats,
            broker: bus.broker.stats(),
            monitor: monitor_counters,
            conservation,
        },
        rssi_samples,
        fit,
        stored_per_node,
    }
}

fn deliver(channel: &mut ChannelSim, gateway: &mut Gateway, bus: &mut Bus, until: f64) {
    let outcome = channel.resolve_until(until);
    gateway.record_losses(&outcome);
    for rx in &outcome.delivered {
        let act = gateway.receive(rx, rx.end_s);
        bus.pump(gateway, act.bytes_out, Vec::new(), rx.end_s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub distance_m: f64,
    pub emitted: u64,
    pub delivered: u64,
    pub delivery_ratio: f64,
    /// Mean RSSI of stored readings; `None` when nothing arrived.
    pub mean_rssi_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub curve: Vec<CurvePoint>,
    pub samples: Vec<RssiSample>,
    pub fit: Result<PathLossModel, String>,
}

impl SweepReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("distance_m,emitted,delivered,delivery_ratio,mean_rssi_dbm\n");
        for p in &self.curve {
            let rssi = p.mean_rssi_dbm.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.distance_m, p.emitted, p.delivered, p.delivery_ratio, rssi
            ));
        }
        out
    }

    /// Largest grid distance reached before delivery first drops below `threshold`.
    pub fn reliable_boundary(&self, threshold: f64) -> Option<f64> {
        let mut last = None;
        for p in &self.curve {
            if p.delivery_ratio < threshold {
                break;
            }
            last = Some(p.distance_m);
        }
        last
    }

    pub fn fit_json(&self) -> String {
        match &self.fit {
            Ok(m) => m.to_json(),
            Err(e) => serde_json::to_string(&FitError { error: e }).expect("error serializes"),
        }
    }

    /// Writes delivery_curve.csv, rssi_samples.csv and fit.json.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("delivery_curve.csv"), self.curve_csv())?;
        let mut csv = std::fs::File::create(dir.join("rssi_samples.csv"))?;
        write_samples_csv(&mut csv, &self.samples)?;
        csv.flush()?;
        std::fs::write(dir.join("fit.json"), self.fit_json() + "\n")
    }
}

/// `min, min + step, …` up to and including `max` (within rounding).
pub fn distance_grid(min_m: f64, max_m: f64, step_m: f64) -> Result<Vec<f64>, String> {
    if !(min_m > 0.0 && step_m > 0.0 && max_m >= min_m && max_m.is_finite()) {
        return Err(format!(
            "invalid grid: min {min_m}, max {max_m}, step {step_m}"
        ));
    }
    let n = ((max_m - min_m) / step_m + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| min_m + k as f64 * step_m).collect())
}

/// One sequential single-node run per distance.
///
/// The probe is the template's first node, re-placed due north of the
/// gateway. Every run keeps the same node id and seed, so each distance sees
/// the same shadowing draws (common random numbers) and the delivery curve
/// reflects distance alone.
pub fn sweep_range(template: &Scenario, distances_m: &[f64]) -> Result<SweepReport, String> {
    let mut sorted: Vec<f64> = distances_m.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 || sorted[0] <= 0.0 {
        return Err("sweep needs at least 2 distinct positive distances".into());
    }
    let probe = template
        .nodes
        .first()
        .ok_or("template scenario has no nodes")?
        .clone();
    let mut curve = Vec::with_capacity(sorted.len());
    let mut samples = Vec::new();
    for &d in &sorted {
        let mut s = template.clone();
        let mut node = probe.clone();
        node.position = crate::scenario::destination(&s.gateway.position, d, 0.0).quantized_e7();
        s.nodes = vec![node];
        let report = run(&s);
        let emitted = report.stats.frames_emitted;
        let delivered = report.stats.monitor.ingested;
        let mean = (!report.rssi_samples.is_empty()).then(|| {
            report.rssi_samples.iter().map(|x| x.rssi_dbm).sum::<f64>()
                / report.rssi_samples.len() as f64
        });
        curve.push(CurvePoint {
            distance_m: d,
            emitted,
            delivered,
            delivery_ratio: if emitted == 0 {
                0.0
            } else {
                delivered as f64 / emitted as f64
            },
            mean_rssi_dbm: mean,
        });
        samples.extend(report.rssi_samples);
    }
    let fit =
        fit_log_model(&samples, template.channel.model.distance_unit_m).map_err(|e| e.to_string());
    Ok(SweepReport {
        curve,
        samples,
        fit,
    })
}
