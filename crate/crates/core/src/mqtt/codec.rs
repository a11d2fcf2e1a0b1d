//! MQTT 3.1.1 packet codec (QoS 0/1 subset).

use serde::{Deserialize, Serialize};

use super::topic::{is_valid_topic_filter, is_valid_topic_name};
use super::MqttError;

pub const MAX_REMAINING_LENGTH: usize = 268_435_455;
const PROTOCOL_NAME: &str = "MQTT";
const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn from_u8(v: u8) -> Result<Self, MqttError> {
        match v {
            0 => Ok(QoS::AtMostOnce),
            1 => Ok(QoS::AtLeastOnce),
            2 => Err(MqttError::Unsupported("qos 2".into())),
            other => Err(MqttError::Protocol(format!("invalid qos {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub keep_alive_s: u16,
    pub clean_session: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub packet_id: Option<u16>,
    pub dup: bool,
    pub retain: bool,
}

impl Publish {
    pub fn new(
        topic: impl Into<String>,
        payload: impl Into<Vec<u8>>,
        qos: QoS,
        packet_id: Option<u16>,
    ) -> Self {
        Self {
            topic: topic.into(),
            payload: payload.into(),
            qos,
            packet_id,
            dup: false,
            retain: false,
        }
    }
}

pub const SUBACK_FAILURE: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MqttPacket {
    Connect(Connect),
    ConnAck {
        session_present: bool,
        return_code: u8,
    },
    Publish(Publish),
    PubAck {
        packet_id: u16,
    },
    Subscribe {
        packet_id: u16,
        topic_filters: Vec<(String, QoS)>,
    },
    /// Granted QoS per filter, or [`SUBACK_FAILURE`].
    SubAck {
        packet_id: u16,
        granted: Vec<u8>,
    },
    PingReq,
    PingResp,
    Disconnect,
}

pub fn encode_remaining_length(n: usize) -> Result<Vec<u8>, MqttError> {
    if n > MAX_REMAINING_LENGTH {
        return Err(MqttError::Encode(format!(
            "remaining length {n} exceeds {MAX_REMAINING_LENGTH}"
        )));
    }
    let mut out = Vec::with_capacity(4);
    let mut x = n;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(out);
        }
    }
}

/// Decodes a variable-length integer. `Ok(None)` means more bytes are needed.
pub fn decode_remaining_length(buf: &[u8]) -> Result<Option<(usize, usize)>, MqttError> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, &b) in buf.iter().enumerate() {
        if i == 4 {
            return Err(MqttError::Protocol(
                "remaining length longer than 4 bytes".into(),
            ));
        }
        value += usize::from(b & 0x7F) * multiplier;
        if b & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if buf.len() >= 4 {
        return Err(MqttError::Protocol(
            "remaining length longer than 4 bytes".into(),
        ));
    }
    Ok(None)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), MqttError> {
    let len = u16::try_from(s.len())
        .map_err(|_| MqttError::Encode(format!("string of {} bytes too long", s.len())))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn check_packet_id(qos: QoS, id: Option<u16>) -> Result<(), MqttError> {
    match (qos, id) {
        (QoS::AtMostOnce, None) => Ok(()),
        (QoS::AtLeastOnce, Some(id)) if id != 0 => Ok(()),
        (QoS::AtMostOnce, Some(_)) => Err(MqttError::Encode(
            "qos 0 publish must not carry a packet id".into(),
        )),
        _ => Err(MqttError::Encode(
            "qos 1 publish needs a nonzero packet id".into(),
        )),
    }
}

pub fn encode_packet(p: &MqttPacket) -> Result<Vec<u8>, MqttError> {
    let mut body = Vec::new();
    let header: u8 = match p {
        MqttPacket::Connect(c) => {
            put_str(&mut body, PROTOCOL_NAME)?;
            body.push(PROTOCOL_LEVEL);
            body.push(if c.clean_session { 0x02 } else { 0x00 });
            body.extend_from_slice(&c.keep_alive_s.to_be_bytes());
            put_str(&mut body, &c.client_id)?;
            0x10
        }
        MqttPacket::ConnAck {
            session_present,
            return_code,
        } => {
            body.push(u8::from(*session_present));
            body.push(*return_code);
            0x20
        }
        MqttPacket::Publish(pb) => {
            if !is_valid_topic_name(&pb.topic) {
                return Err(MqttError::Encode(format!(
                    "invalid topic name {:?}",
                    pb.topic
                )));
            }
            check_packet_id(pb.qos, pb.packet_id)?;
            put_str(&mut body, &pb.topic)?;
            if let Some(id) = pb.packet_id {
                body.extend_from_slice(&id.to_be_bytes());
            }
            body.extend_from_slice(&pb.payload);
            0x30 | (u8::from(pb.dup) << 3) | ((pb.qos as u8) << 1) | u8::from(pb.retain)
        }
        MqttPacket::PubAck { packet_id } => {
            body.extend_from_slice(&packet_id.to_be_bytes());
            0x40
        }
        MqttPacket::Subscribe {
            packet_id,
            topic_filters,
        } => {
            if *packet_id == 0 || topic_filters.is_empty() {
                return Err(MqttError::Encode(
                    "subscribe needs a nonzero packet id and at least one filter".into(),
                ));
            }
            body.extend_from_slice(&packet_id.to_be_bytes());
            for (f, q) in topic_filters {
                if !is_valid_topic_filter(f) {
                    return Err(MqttError::Encode(format!("invalid topic filter {f:?}")));
                }
                put_str(&mut body, f)?;
                body.push(*q as u8);
            }
            0x82
        }
        MqttPacket::SubAck { packet_id, granted } => {
            body.extend_from_slice(&packet_id.to_be_bytes());
            body.extend_from_slice(granted);
            0x90
        }
        MqttPacket::PingReq => 0xC0,
        MqttPacket::PingResp => 0xD0,
        MqttPacket::Disconnect => 0xE0,
    };
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(header);
    out.extend(encode_remaining_length(body.len())?);
    out.extend(body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, MqttError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or_else(|| MqttError::Protocol("packet body too short".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, MqttError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], MqttError> {
        let end = self.pos + n;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| MqttError::Protocol("packet body too short".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn string(&mut self) -> Result<String, MqttError> {
        let n = usize::from(self.u16()?);
        let raw = self.bytes(n)?;
        let s = std::str::from_utf8(raw)
            .map_err(|_| MqttError::Protocol("string is not valid UTF-8".into()))?;
        if s.contains('\0') {
            return Err(MqttError::Protocol("string contains U+0000".into()));
        }
        Ok(s.to_owned())
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), MqttError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(MqttError::Protocol(format!(
                "{} trailing bytes in packet",
                self.buf.len() - self.pos
            )))
        }
    }
}

fn expect_flags(header: u8, flags: u8) -> Result<(), MqttError> {
    if header & 0x0F == flags {
        Ok(())
    } else {
        Err(MqttError::Protocol(format!(
            "reserved flags 0x{:X} in packet type {}",
            header & 0x0F,
            header >> 4
        )))
    }
}

/// Decodes one packet from the front of `buf`.
///
/// Returns `Ok(None)` when `buf` holds only part of a packet, otherwise the
/// packet and the number of bytes it occupied.
pub fn decode_packet(buf: &[u8]) -> Result<Option<(MqttPacket, usize)>, MqttError> {
    let Some(&header) = buf.first() else {
        return Ok(None);
    };
    let Some((len, len_bytes)) = decode_remaining_length(&buf[1..])? else {
        return Ok(None);
    };
    let start = 1 + len_bytes;
    let total = start + len;
    if buf.len() < total {
        return Ok(None);
    }
    let mut r = Reader {
        buf: &buf[start..total],
        pos: 0,
    };
    let packet = match header >> 4 {
        1 => {
            expect_flags(header, 0)?;
            let name = r.string()?;
            let level = r.u8()?;
            if name != PROTOCOL_NAME || level != PROTOCOL_LEVEL {
                return Err(MqttError::Unsupported(format!(
                    "protocol {name:?} level {level}"
                )));
            }
            let flags = r.u8()?;
            if flags & 0x01 != 0 {
                return Err(MqttError::Protocol("reserved connect flag set".into()));
            }
            if flags & 0xFC != 0 {
                return Err(MqttError::Unsupported(
                    "will, username or password in CONNECT".into(),
                ));
            }
            let keep_alive_s = r.u16()?;
            let client_id = r.string()?;
            MqttPacket::Connect(Connect {
                client_id,
                keep_alive_s,
                clean_session: flags & 0x02 != 0,
            })
        }
        2 => {
            expect_flags(header, 0)?;
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(MqttError::Protocol("reserved connack flags set".into()));
            }
            MqttPacket::ConnAck {
                session_present: ack_flags & 1 == 1,
                return_code: r.u8()?,
            }
        }
        3 => {
            let qos = QoS::from_u8((header >> 1) & 0x03)?;
            let dup = header & 0x08 != 0;
            if dup && qos == QoS::AtMostOnce {
                return Err(MqttError::Protocol("dup flag on qos 0 publish".into()));
            }
            let topic = r.string()?;
            if !is_valid_topic_name(&topic) {
                return Err(MqttError::Protocol(format!("invalid topic name {topic:?}")));
            }
            let packet_id = match qos {
                QoS::AtMostOnce => None,
                QoS::AtLeastOnce => match r.u16()? {
                    0 => return Err(MqttError::Protocol("qos 1 publish with packet id 0".into())),
                    id => Some(id),
                },
            };
            let payload = r.rest().to_vec();
            MqttPacket::Publish(Publish {
                topic,
                payload,
                qos,
                packet_id,
                dup,
                retain: header & 0x01 != 0,
            })
        }
        4 => {
            expect_flags(header, 0)?;
            MqttPacket::PubAck {
                packet_id: r.u16()?,
            }
        }
        8 => {
            expect_flags(header, 0x02)?;
            let packet_id = r.u16()?;
            let mut topic_filters = Vec::new();
            while r.pos < r.buf.len() {
                let f = r.string()?;
                if !is_valid_topic_filter(&f) {
                    return Err(MqttError::Protocol(format!("invalid topic filter {f:?}")));
                }
                let q = r.u8()?;
                if q & 0xFC != 0 {
                    return Err(MqttError::Protocol("reserved subscribe options set".into()));
                }
                topic_filters.push((f, QoS::from_u8(q)?));
            }
            if topic_filters.is_empty() {
                return Err(MqttError::Protocol("subscribe without filters".into()));
            }
            MqttPacket::Subscribe {
                packet_id,
                topic_filters,
            }
        }
        9 => {
            expect_flags(header, 0)?;
            let packet_id = r.u16()?;
            let granted = r.rest().to_vec();
            if granted.iter().any(|&g| g > 2 && g != SUBACK_FAILURE) {
                return Err(MqttError::Protocol("invalid suback return code".into()));
            }
            MqttPacket::SubAck { packet_id, granted }
        }
        12 => {
            expect_flags(header, 0)?;
            MqttPacket::PingReq
        }
        13 => {
            expect_flags(header, 0)?;
            MqttPacket::PingResp
        }
        14 => {
            expect_flags(header, 0)?;
            MqttPacket::Disconnect
        }
        5..=7 => return Err(MqttError::Unsupported("qos 2 flow packets".into())),
        10 | 11 => return Err(MqttError::Unsupported("unsubscribe".into())),
        t => return Err(MqttError::Protocol(format!("invalid packet type {t}"))),
    };
    r.finish()?;
    Ok(Some((packet, total)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remaining_length_examples() {
        assert_eq!(encode_remaining_length(0).unwrap(), [0x00]);
        assert_eq!(encode_remaining_length(127).unwrap(), [0x7F]);
        assert_eq!(encode_remaining_length(321).unwrap(), [0xC1, 0x02]);
        assert!(encode_remaining_length(MAX_REMAINING_LENGTH + 1).is_err());
    }

    #[test]
    fn remaining_length_needs_more_and_overlong() {
        assert_eq!(decode_remaining_length(&[0x80]).unwrap(), None);
        assert!(decode_remaining_length(&[0x80, 0x80, 0x80, 0x80, 0x01]).is_err());
        assert!(decode_remaining_length(&[0xFF, 0xFF, 0xFF, 0xFF]).is_err());
    }

    #[test]
    fn pingreq_bytes() {
        assert_eq!(encode_packet(&MqttPacket::PingReq).unwrap(), [0xC0, 0x00]);
    }

    #[test]
    fn partial_input_asks_for_more() {
        let bytes = encode_packet(&MqttPacket::Publish(Publish::new(
            "a/b",
            "hi",
            QoS::AtLeastOnce,
            Some(3),
        )))
        .unwrap();
        for cut in 0..bytes.len() {
            assert_eq!(decode_packet(&bytes[..cut]).unwrap(), None, "cut {cut}");
        }
        assert_eq!(decode_packet(&bytes).unwrap().unwrap().1, bytes.len());
    }

    #[test]
    fn qos2_is_unsupported() {
        let mut bytes = encode_packet(&MqttPacket::Publish(Publish::new(
            "a",
            "x",
            QoS::AtLeastOnce,
            Some(1),
        )))
        .unwrap();
        bytes[0] = 0x34;
        assert!(matches!(
            decode_packet(&bytes),
            Err(MqttError::Unsupported(_))
        ));
        assert!(matches!(
            decode_packet(&[0x50, 0x02, 0x00, 0x01]),
            Err(MqttError::Unsupported(_))
        ));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            decode_packet(&[0x00, 0x00]),
            Err(MqttError::Protocol(_))
        ));
        assert!(matches!(
            decode_packet(&[0xF0, 0x00]),
            Err(MqttError::Protocol(_))
        ));
        assert!(matches!(
            decode_packet(&[0xC1, 0x00]),
            Err(MqttError::Protocol(_))
        ));
        assert!(matches!(
            decode_packet(&[0x36, 0x00]),
            Err(MqttError::Protocol(_))
        ));
        // PUBACK with a trailing byte
        assert!(matches!(
            decode_packet(&[0x40, 0x03, 0, 1, 9]),
            Err(MqttError::Protocol(_))
        ));
    }

    #[test]
    fn invalid_utf8_topic_is_protocol_error() {
        let bytes = [0x30, 0x05, 0x00, 0x02, 0xC3, 0x28, b'x'];
        assert!(matches!(decode_packet(&bytes), Err(MqttError::Protocol(_))));
    }

    #[test]
    fn encode_rejects_invariant_violations() {
        let wild = MqttPacket::Publish(Publish::new("a/+", "x", QoS::AtMostOnce, None));
        assert!(encode_packet(&wild).is_err());
        let no_id = MqttPacket::Publish(Publish::new("a", "x", QoS::AtLeastOnce, None));
        assert!(encode_packet(&no_id).is_err());
        let zero_id = MqttPacket::Publish(Publish::new("a", "x", QoS::AtLeastOnce, Some(0)));
        assert!(encode_packet(&zero_id).is_err());
        let q0_id = MqttPacket::Publish(Publish::new("a", "x", QoS::AtMostOnce, Some(5)));
        assert!(encode_packet(&q0_id).is_err());
    }

    #[test]
    fn connect_layout() {
        let c = MqttPacket::Connect(Connect {
            client_id: "gw1".into(),
            keep_alive_s: 30,
            clean_session: true,
        });
        assert_eq!(
            encode_packet(&c).unwrap(),
            [0x10, 15, 0, 4, b'M', b'Q', b'T', b'T', 4, 0x02, 0, 30, 0, 3, b'g', b'w', b'1']
        );
    }
}
