//! MQTT 3.1.1 subset: QoS 0/1, no retained messages, wills or persistent
//! sessions.

pub mod broker;
pub mod codec;
pub mod session;
pub mod tcp;
pub mod topic;

use thiserror::Error;

pub use broker::{Broker, BrokerActions, ConnId, RouteDelivery};
pub use codec::{decode_packet, encode_packet, encode_remaining_length, MqttPacket, Publish, QoS};
pub use session::{ClientSession, SessionActions, SessionEvent, SessionState};
pub use topic::topic_matches;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MqttError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("cannot encode: {0}")]
    Encode(String),
}
