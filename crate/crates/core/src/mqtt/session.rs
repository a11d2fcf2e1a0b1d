//! Client-side MQTT session state machine.
//!
//! The session performs no I/O. The host feeds it [`SessionEvent`]s and
//! carries out the returned [`SessionActions`]: writing `bytes_out` to the
//! transport and handing `deliveries` to the application.

use std::collections::VecDeque;

use serde::Serialize;

use super::codec::{decode_packet, encode_packet, Connect, MqttPacket, Publish, QoS};
use super::MqttError;

pub const DEFAULT_KEEP_ALIVE_S: u16 = 30;
pub const DEFAULT_QUEUE_DEPTH: usize = 256;
/// Multiple of keep-alive after which a missing CONNACK or PINGRESP drops the session.
pub const RESPONSE_TIMEOUT_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Disconnected,
    Connecting,
    Connected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent<'a> {
    ConnectRequested {
        now: f64,
    },
    BytesIn {
        data: &'a [u8],
        now: f64,
    },
    PublishRequested {
        topic: String,
        payload: Vec<u8>,
        qos: QoS,
        now: f64,
    },
    SubscribeRequested {
        filters: Vec<(String, QoS)>,
        now: f64,
    },
    Tick {
        now: f64,
    },
    DisconnectRequested {
        now: f64,
    },
    /// The transport went away underneath the session.
    ConnectionLost {
        now: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Notice {
    /// CONNACK carried a nonzero return code.
    ConnectRefused(u8),
    Timeout,
    ProtocolError(String),
    PublishAcked(u16),
    SubscribeAcked {
        packet_id: u16,
        granted: Vec<u8>,
    },
    /// The outbound queue overflowed and its oldest entry was dropped.
    QueueDrop,
    /// A publish request was invalid (e.g. bad topic) and discarded.
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionActions {
    pub bytes_out: Vec<u8>,
    pub deliveries: Vec<Delivery>,
    pub state_change: Option<(SessionState, SessionState)>,
    pub notices: Vec<Notice>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Outbound {
    topic: String,
    payload: Vec<u8>,
    qos: QoS,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SessionCounters {
    pub published: u64,
    pub acked: u64,
    pub queue_drops: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct ClientSession {
    client_id: String,
    keep_alive_s: u16,
    state: SessionState,
    queue: VecDeque<Outbound>,
    queue_depth: usize,
    pending_acks: VecDeque<(u16, Outbound)>,
    next_packet_id: u16,
    inbound: Vec<u8>,
    last_activity: f64,
    connect_sent_at: f64,
    ping_sent_at: Option<f64>,
    counters: SessionCounters,
}

impl ClientSession {
    pub fn new(client_id: impl Into<String>, keep_alive_s: u16) -> Self {
        Self {
            client_id: client_id.into(),
            keep_alive_s,
            state: SessionState::Disconnected,
            queue: VecDeque::new(),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            pending_acks: VecDeque::new(),
            next_packet_id: 1,
            inbound: Vec::new(),
            last_activity: 0.0,
            connect_sent_at: 0.0,
            ping_sent_at: None,
            counters: SessionCounters::default(),
        }
    }

    pub fn with_queue_depth(mut self, depth: usize) -> Self {
        self.queue_depth = depth.max(1);
        self
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn keep_alive_s(&self) -> u16 {
        self.keep_alive_s
    }

    pub fn last_activity(&self) -> f64 {
        self.last_activity
    }

    pub fn pending_ack_count(&self) -> usize {
        self.pending_acks.len()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    pub fn step(&mut self, event: SessionEvent<'_>) -> SessionActions {
        let mut act = SessionActions::default();
        let before = self.state;
        match event {
            SessionEvent::ConnectRequested { now } => {
                if self.state == SessionState::Disconnected {
                    self.inbound.clear();
                    let connect = MqttPacket::Connect(Connect {
                        client_id: self.client_id.clone(),
                        keep_alive_s: self.keep_alive_s,
                        clean_session: true,
                    });
                    self.send(&connect, now, &mut act);
                    self.connect_sent_at = now;
                    self.state = SessionState::Connecting;
                }
            }
            SessionEvent::BytesIn { data, now } => self.on_bytes(data, now, &mut act),
            SessionEvent::PublishRequested {
                topic,
                payload,
                qos,
                now,
            } => {
                if !super::topic::is_valid_topic_name(&topic) {
                    act.notices
                        .push(Notice::Rejected(format!("invalid topic {topic:?}")));
                } else {
                    let msg = Outbound {
                        topic,
                        payload,
                        qos,
                    };
                    if self.state == SessionState::Connected {
                        self.transmit(msg, now, &mut act);
                    } else {
                        self.enqueue_back(msg, &mut act);
                    }
                }
            }
            SessionEvent::SubscribeRequested { filters, now } => {
                if self.state == SessionState::Connected {
                    let packet_id = self.take_packet_id();
                    self.send(
                        &MqttPacket::Subscribe {
                            packet_id,
                            topic_filters: filters,
                        },
                        now,
                        &mut act,
                    );
                } else {
                    act.notices
                        .push(Notice::Rejected("subscribe while not connected".into()));
                }
            }
            SessionEvent::Tick { now } => self.on_tick(now, &mut act),
            SessionEvent::DisconnectRequested { now } => {
                if self.state != SessionState::Disconnected {
                    self.send(&MqttPacket::Disconnect, now, &mut act);
                    self.drop_connection(&mut act);
                }
            }
            SessionEvent::ConnectionLost { .. } => {
                if self.state != SessionState::Disconnected {
                    self.drop_connection(&mut act);
                }
            }
        }
        if self.state != before {
            act.state_change = Some((before, self.state));
        }
        act
    }

    fn on_bytes(&mut self, data: &[u8], now: f64, act: &mut SessionActions) {
        if self.state == SessionState::Disconnected {
            return;
        }
        self.inbound.extend_from_slice(data);
        let mut consumed = 0;
        loop {
            match decode_packet(&self.inbound[consumed..]) {
                Ok(Some((packet, n))) => {
                    consumed += n;
                    if let Err(e) = self.on_packet(packet, now, act) {
                        act.notices.push(Notice::ProtocolError(e.to_string()));
                        self.drop_connection(act);
                        return;
                    }
                    if self.state == SessionState::Disconnected {
                        return;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    act.notices.push(Notice::ProtocolError(e.to_string()));
                    self.drop_connection(act);
                    return;
                }
            }
        }
        self.inbound.drain(..consumed);
    }

    fn on_packet(
        &mut self,
        packet: MqttPacket,
        now: f64,
        act: &mut SessionActions,
    ) -> Result<(), MqttError> {
        match (self.state, packet) {
            (SessionState::Connecting, MqttPacket::ConnAck { return_code: 0, .. }) => {
                self.state = SessionState::Connected;
                self.ping_sent_at = None;
                while let Some(msg) = self.queue.pop_front() {
                    self.transmit(msg, now, act);
                }
            }
            (SessionState::Connecting, MqttPacket::ConnAck { return_code, .. }) => {
                act.notices.push(Notice::ConnectRefused(return_code));
                self.drop_connection(act);
            }
            (SessionState::Connected, MqttPacket::PubAck { packet_id }) => {
                if let Some(i) = self
                    .pending_acks
                    .iter()
                    .position(|(id, _)| *id == packet_id)
                {
                    self.pending_acks.remove(i);
                    self.counters.acked += 1;
                    act.notices.push(Notice::PublishAcked(packet_id));
                }
            }
            (SessionState::Connected, MqttPacket::Publish(p)) => {
                if let (QoS::AtLeastOnce, Some(packet_id)) = (p.qos, p.packet_id) {
                    self.send(&MqttPacket::PubAck { packet_id }, now, act);
                }
                self.counters.delivered += 1;
                act.deliveries.push(Delivery {
                    topic: p.topic,
                    payload: p.payload,
                    qos: p.qos,
                });
            }
            (SessionState::Connected, MqttPacket::SubAck { packet_id, granted }) => {
                act.notices
                    .push(Notice::SubscribeAcked { packet_id, granted });
            }
            (SessionState::Connected, MqttPacket::PingResp) => self.ping_sent_at = None,
            (state, p) => {
                return Err(MqttError::Protocol(format!(
                    "unexpected {p:?} in state {state:?}"
                )));
            }
        }
        Ok(())
    }

    fn on_tick(&mut self, now: f64, act: &mut SessionActions) {
        let ka = f64::from(self.keep_alive_s);
        if ka <= 0.0 {
            return;
        }
        let limit = RESPONSE_TIMEOUT_FACTOR * ka;
        match self.state {
            SessionState::Connecting if now - self.connect_sent_at >= limit => {
                act.notices.push(Notice::Timeout);
                self.drop_connection(act);
            }
            SessionState::Connected => match self.ping_sent_at {
                Some(sent) if now - sent >= limit => {
                    act.notices.push(Notice::Timeout);
                    self.drop_connection(act);
                }
                None if now - self.last_activity >= ka => {
                    self.send(&MqttPacket::PingReq, now, act);
                    self.ping_sent_at = Some(now);
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn take_packet_id(&mut self) -> u16 {
        loop {
            let id = self.next_packet_id;
            self.next_packet_id = self.next_packet_id.checked_add(1).unwrap_or(1);
            if !self.pending_acks.iter().any(|(p, _)| *p == id) {
                return id;
            }
        }
    }

    fn transmit(&mut self, msg: Outbound, now: f64, act: &mut SessionActions) {
        let packet_id = (msg.qos == QoS::AtLeastOnce).then(|| self.take_packet_id());
        let publish = MqttPacket::Publish(Publish::new(
            msg.topic.clone(),
            msg.payload.clone(),
            msg.qos,
            packet_id,
        ));
        self.send(&publish, now, act);
        self.counters.published += 1;
        if let Some(id) = packet_id {
            self.pending_acks.push_back((id, msg));
        }
    }

    fn send(&mut self, packet: &MqttPacket, now: f64, act: &mut SessionActions) {
        match encode_packet(packet) {
            Ok(bytes) => {
                act.bytes_out.extend(bytes);
                self.last_activity = now;
            }
            Err(e) => act.notices.push(Notice::Rejected(e.to_string())),
        }
    }

    fn enqueue_back(&mut self, msg: Outbound, act: &mut SessionActions) {
        if self.queue.len() >= self.queue_depth {
            self.queue.pop_front();
            self.counters.queue_drops += 1;
            act.notices.push(Notice::QueueDrop);
        }
        self.queue.push_back(msg);
    }

    /// Leaves the connection; unacknowledged QoS 1 messages go back to the
    /// head of the queue, oldest first.
    fn drop_connection(&mut self, act: &mut SessionActions) {
        self.state = SessionState::Disconnected;
        self.ping_sent_at = None;
        self.inbound.clear();
        while let Some((_, msg)) = self.pending_acks.pop_back() {
            self.queue.push_front(msg);
        }
        while self.queue.len() > self.queue_depth {
            self.queue.pop_front();
            self.counters.queue_drops += 1;
            act.notices.push(Notice::QueueDrop);
        }
    }
}


/// Exponential reconnect backoff: `initial · 2^attempt`, capped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial_s: f64,
    pub max_s: f64,
    attempt: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(1.0, 60.0)
    }
}

impl Backoff {
    pub fn new(initial_s: f64, max_s: f64) -> Self {
        Self {
            initial_s,
            max_s,
            attempt: 0,
        }
    }

    /// Delay before the next attempt; grows on every call.
    pub fn next_delay(&mut self) -> f64 {
        let d = (self.initial_s * 2f64.powi(self.attempt.min(30) as i32)).min(self.max_s);
        self.attempt = self.attempt.saturating_add(1);
        d
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }
}
