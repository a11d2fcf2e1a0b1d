//! Minimal embedded broker.
//!
//! Transport-agnostic: each connection is an opaque [`ConnId`], inbound
//! bytes go in through [`Broker::handle_bytes`] and outbound bytes come back
//! as [`BrokerActions`]. Routing is a single `&mut self` step, so it is
//! atomic with respect to subscription changes.

use std::collections::BTreeMap;

use serde::Serialize;

use super::codec::{decode_packet, encode_packet, MqttPacket, Publish, QoS, SUBACK_FAILURE};
use super::topic::topic_matches;

pub type ConnId = u64;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BrokerActions {
    pub sends: Vec<(ConnId, Vec<u8>)>,
    pub close: Vec<ConnId>,
}

impl BrokerActions {
    fn send(&mut self, to: ConnId, packet: &MqttPacket) {
        // Packets built here always satisfy the codec invariants.
        let bytes = encode_packet(packet).expect("broker packet encodes");
        match self.sends.last_mut() {
            Some((last, buf)) if *last == to => buf.extend(bytes),
            _ => self.sends.push((to, bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteDelivery {
    pub conn: ConnId,
    pub qos: QoS,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BrokerStats {
    pub publishes_in: u64,
    pub deliveries_out: u64,
    pub acks_in: u64,
    pub protocol_errors: u64,
}

#[derive(Debug, Default)]
struct Conn {
    client_id: Option<String>,
    buffer: Vec<u8>,
    subscriptions: Vec<(String, QoS)>,
    next_packet_id: u16,
    inflight: BTreeMap<u16, Publish>,
}

impl Conn {
    fn take_packet_id(&mut self) -> u16 {
        loop {
            self.next_packet_id = self.next_packet_id.checked_add(1).unwrap_or(1);
            if !self.inflight.contains_key(&self.next_packet_id) {
                return self.next_packet_id;
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Broker {
    conns: BTreeMap<ConnId, Conn>,
    next_conn: ConnId,
    stats: BrokerStats,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self) -> ConnId {
        self.next_conn += 1;
        self.conns.insert(self.next_conn, Conn::default());
        self.next_conn
    }

    pub fn close(&mut self, conn: ConnId) {
        self.conns.remove(&conn);
    }

    pub fn stats(&self) -> BrokerStats {
        self.stats
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    /// Unacknowledged QoS 1 deliveries to `conn`.
    pub fn inflight(&self, conn: ConnId) -> usize {
        self.conns.get(&conn).map_or(0, |c| c.inflight.len())
    }

    pub fn subscribe(&mut self, conn: ConnId, filter: &str, qos: QoS) {
        if let Some(c) = self.conns.get_mut(&conn) {
            c.subscriptions.retain(|(f, _)| f != filter);
            c.subscriptions.push((filter.to_owned(), qos));
        }
    }

    /// Sessions whose filters match `publish.topic`, one entry per session,
    /// at `min(publish qos, best matching subscription qos)`.
    pub fn route(&self, publish: &Publish) -> Vec<RouteDelivery> {
        self.conns
            .iter()
            .filter(|(_, c)| c.client_id.is_some())
            .filter_map(|(&id, c)| {
                c.subscriptions
                    .iter()
                    .filter(|(f, _)| topic_matches(f, &publish.topic))
                    .map(|(_, q)| *q)
                    .max()
                    .map(|sub_qos| RouteDelivery {
                        conn: id,
                        qos: sub_qos.min(publish.qos),
                    })
            })
            .collect()
    }

    pub fn handle_bytes(&mut self, conn: ConnId, data: &[u8]) -> BrokerActions {
        let mut act = BrokerActions::default();
        let Some(c) = self.conns.get_mut(&conn) else {
            return act;
        };
        c.buffer.extend_from_slice(data);
        let mut buffer = std::mem::take(&mut c.buffer);
        let mut consumed = 0;
        loop {
            match decode_packet(&buffer[consumed..]) {
                Ok(Some((packet, n))) => {
                    consumed += n;
                    if !self.handle_packet(conn, packet, &mut act) {
                        self.conns.remove(&conn);
                        act.close.push(conn);
                        return act;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    log::debug!("conn {conn}: {e}");
                    self.stats.protocol_errors += 1;
                    self.conns.remove(&conn);
                    act.close.push(conn);
                    return act;
                }
            }
        }
        buffer.drain(..consumed);
        if let Some(c) = self.conns.get_mut(&conn) {
            c.buffer = buffer;
        }
        act
    }

    /// Returns false when the connection must be closed.
    fn handle_packet(&mut self, conn: ConnId, packet: MqttPacket, act: &mut BrokerActions) -> bool {
        let connected = self.conns.get(&conn).is_some_and(|c| c.client_id.is_some());
        match packet {
            MqttPacket::Connect(c) if !connected => {
                if c.client_id.is_empty() && !c.clean_session {
                    act.send(
                        conn,
                        &MqttPacket::ConnAck {
                            session_present: false,
                            return_code: 2,
                        },
                    );
                    return false;
                }
                let client_id = if c.client_id.is_empty() {
                    format!("auto-{conn}")
                } else {
                    c.client_id
                };
                // A second connection with the same client id takes over.
                let stale: Vec<ConnId> = self
                    .conns
                    .iter()
                    .filter(|(id, other)| {
                        **id != conn && other.client_id.as_deref() == Some(client_id.as_str())
                    })
                    .map(|(id, _)| *id)
                    .collect();
                for id in stale {
                    self.conns.remove(&id);
                    act.close.push(id);
                }
                if let Some(entry) = self.conns.get_mut(&conn) {
                    entry.client_id = Some(client_id);
                }
                act.send(
                    conn,
                    &MqttPacket::ConnAck {
                        session_present: false,
                        return_code: 0,
                    },
                );
                true
            }
            _ if !connected => false,
            MqttPacket::Publish(p) => {
                self.stats.publishes_in += 1;
                if let (QoS::AtLeastOnce, Some(packet_id)) = (p.qos, p.packet_id) {
                    act.send(conn, &MqttPacket::PubAck { packet_id });
                }
                for d in self.route(&p) {
                    let Some(target) = self.conns.get_mut(&d.conn) else {
                        continue;
                    };
                    let packet_id = (d.qos == QoS::AtLeastOnce).then(|| target.take_packet_id());
                    let out = Publish::new(p.topic.clone(), p.payload.clone(), d.qos, packet_id);
                    if let Some(id) = packet_id {
                        target.inflight.insert(id, out.clone());
                    }
                    self.stats.deliveries_out += 1;
                    act.send(d.conn, &MqttPacket::Publish(out));
                }
                true
            }
            MqttPacket::PubAck { packet_id } => {
                if let Some(c) = self.conns.get_mut(&conn) {
                    if c.inflight.remove(&packet_id).is_some() {
                        self.stats.acks_in += 1;
                    }
                }
                true
            }
            MqttPacket::Subscribe {
                packet_id,
                topic_filters,
            } => {
                let mut granted = Vec::with_capacity(topic_filters.len());
                for (f, q) in topic_filters {
                    if super::topic::is_valid_topic_filter(&f) {
                        self.subscribe(conn, &f, q);
                        granted.push(q as u8);
                    } else {
                        granted.push(SUBACK_FAILURE);
                    }
                }
                act.send(conn, &MqttPacket::SubAck { packet_id, granted });
                true
            }
            MqttPacket::PingReq => {
                act.send(conn, &MqttPacket::PingResp);
                true
            }
            MqttPacket::Disconnect => false,
            // Second CONNECT, or server-to-client packets from a client.
            _ => {
                self.stats.protocol_errors += 1;
                false
            }
        }
    }
}

impl Broker {
    /// Number of filters registered by `conn`.
    pub fn subscriptions(&self, conn: ConnId) -> usize {
        self.conns.get(&conn).map_or(0, |c| c.subscriptions.len())
    }

    /// Filters registered across all connections.
    pub fn total_subscriptions(&self) -> usize {
        self.conns.values().map(|c| c.subscriptions.len()).sum()
    }
}
