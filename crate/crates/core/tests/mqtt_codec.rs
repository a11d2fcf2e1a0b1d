mod common;

use buoynet::mqtt::codec::{
    decode_packet, decode_remaining_length, encode_packet, encode_remaining_length, Connect,
    MqttPacket, Publish, QoS, MAX_REMAINING_LENGTH,
};
use buoynet::mqtt::MqttError;
use proptest::prelude::*;

/// Straight transcription of the variable-length integer rule, kept apart
/// from the codec under test.
fn oracle_decode_varint(bytes: &[u8]) -> usize {
    let mut value = 0usize;
    let mut mult = 1usize;
    for b in bytes {
        value += usize::from(b & 0x7F) * mult;
        mult *= 128;
        if b & 0x80 == 0 {
            break;
        }
    }
    value
}

fn remaining_length_table() -> Vec<(usize, Vec<u8>)> {
    common::read_text("remaining_length.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (n, hex) = l.split_once(':').unwrap();
            let bytes = hex
                .split_whitespace()
                .map(|t| u8::from_str_radix(t, 16).unwrap())
                .collect();
            (n.trim().parse().unwrap(), bytes)
        })
        .collect()
}

#[test]
fn remaining_length_boundaries() {
    let table = remaining_length_table();
    assert_eq!(table.len(), 9);
    for (n, bytes) in table {
        assert_eq!(encode_remaining_length(n).unwrap(), bytes, "encode {n}");
        assert_eq!(oracle_decode_varint(&bytes), n);
        assert_eq!(
            decode_remaining_length(&bytes).unwrap(),
            Some((n, bytes.len())),
            "decode {n}"
        );
        if bytes.len() > 1 {
            assert_eq!(
                decode_remaining_length(&bytes[..bytes.len() - 1]).unwrap(),
                None
            );
        }
    }
}

#[test]
fn remaining_length_out_of_range() {
    assert!(matches!(
        encode_remaining_length(MAX_REMAINING_LENGTH + 1),
        Err(MqttError::Encode(_))
    ));
    // a fifth continuation byte is malformed, not "need more"
    assert!(decode_remaining_length(&[0xFF, 0xFF, 0xFF, 0xFF, 0x01]).is_err());
    assert!(decode_remaining_length(&[0xFF, 0xFF, 0xFF, 0x80]).is_err());
}

fn golden(name: &str, packet: MqttPacket) {
    let bytes = common::read_hex(name);
    assert_eq!(encode_packet(&packet).unwrap(), bytes, "{name}");
    assert_eq!(
        decode_packet(&bytes).unwrap(),
        Some((packet, bytes.len())),
        "{name}"
    );
    for cut in 0..bytes.len() {
        assert_eq!(
            decode_packet(&bytes[..cut]).unwrap(),
            None,
            "{name} prefix {cut}"
        );
    }
}

#[test]
fn golden_vectors() {
    golden("mqtt_pingreq.hex", MqttPacket::PingReq);
    golden("mqtt_pingresp.hex", MqttPacket::PingResp);
    golden("mqtt_disconnect.hex", MqttPacket::Disconnect);
    golden(
        "mqtt_publish_ab_hi.hex",
        MqttPacket::Publish(Publish::new("a/b", b"hi".to_vec(), QoS::AtMostOnce, None)),
    );
    golden(
        "mqtt_publish_qos1_ab_hi.hex",
        MqttPacket::Publish(Publish::new(
            "a/b",
            b"hi".to_vec(),
            QoS::AtLeastOnce,
            Some(10),
        )),
    );
    golden(
        "mqtt_connect_gw1.hex",
        MqttPacket::Connect(Connect {
            client_id: "gw1".into(),
            keep_alive_s: 30,
            clean_session: true,
        }),
    );
    golden(
        "mqtt_subscribe_marine.hex",
        MqttPacket::Subscribe {
            packet_id: 1,
            topic_filters: vec![("marine/v1/#".into(), QoS::AtLeastOnce)],
        },
    );
    golden(
        "mqtt_connack_ok.hex",
        MqttPacket::ConnAck {
            session_present: false,
            return_code: 0,
        },
    );
    golden("mqtt_puback_7.hex", MqttPacket::PubAck { packet_id: 7 });
    golden(
        "mqtt_suback.hex",
        MqttPacket::SubAck {
            packet_id: 1,
            granted: vec![1, 0x80],
        },
    );
}

#[test]
fn publish_with_overstated_length_waits_for_more() {
    // Same bytes but a remaining length of 8: one body byte is missing.
    let bytes = [0x30, 0x08, 0x00, 0x03, b'a', b'/', b'b', b'h', b'i'];
    assert_eq!(decode_packet(&bytes).unwrap(), None);
    let mut full = bytes.to_vec();
    full.push(b'!');
    let expect = MqttPacket::Publish(Publish::new("a/b", b"hi!".to_vec(), QoS::AtMostOnce, None));
    assert_eq!(decode_packet(&full).unwrap(), Some((expect, 10)));
}

#[test]
fn pingreq_is_two_bytes() {
    assert_eq!(encode_packet(&MqttPacket::PingReq).unwrap(), [0xC0, 0x00]);
}

#[test]
fn large_publish_uses_multibyte_length() {
    let p = MqttPacket::Publish(Publish::new("t", vec![0xAB; 20_000], QoS::AtMostOnce, None));
    let bytes = encode_packet(&p).unwrap();
    let rl = 2 + 1 + 20_000;
    assert_eq!(
        &bytes[1..4],
        encode_remaining_length(rl).unwrap().as_slice()
    );
    assert_eq!(oracle_decode_varint(&bytes[1..]), rl);
    assert_eq!(decode_packet(&bytes).unwrap(), Some((p, bytes.len())));
}

#[test]
fn decoder_errors() {
    // qos 2 publish
    assert!(matches!(
        decode_packet(&[0x34, 0x07, 0x00, 0x01, b'a', 0x00, 0x01, b'x', b'y']),
        Err(MqttError::Unsupported(_))
    ));
    // PUBREC is outside the subset
    assert!(matches!(
        decode_packet(&[0x50, 0x02, 0x00, 0x01]),
        Err(MqttError::Unsupported(_))
    ));
    // reserved flags on PINGREQ
    assert!(matches!(
        decode_packet(&[0xC1, 0x00]),
        Err(MqttError::Protocol(_))
    ));
    // packet type 0 is reserved
    assert!(matches!(
        decode_packet(&[0x00, 0x00]),
        Err(MqttError::Protocol(_))
    ));
    // invalid UTF-8 in topic
    assert!(matches!(
        decode_packet(&[0x30, 0x04, 0x00, 0x02, 0xC3, 0x28]),
        Err(MqttError::Protocol(_))
    ));
    // wildcard in a publish topic
    assert!(matches!(
        decode_packet(&[0x30, 0x03, 0x00, 0x01, b'#']),
        Err(MqttError::Protocol(_))
    ));
    // qos 1 publish with packet id 0
    assert!(matches!(
        decode_packet(&[0x32, 0x05, 0x00, 0x01, b'a', 0x00, 0x00]),
        Err(MqttError::Protocol(_))
    ));
}

#[test]
fn encoder_rejects_invalid_packets() {
    let bad = [
        MqttPacket::Publish(Publish::new("a/+", b"x".to_vec(), QoS::AtMostOnce, None)),
        MqttPacket::Publish(Publish::new("", b"x".to_vec(), QoS::AtMostOnce, None)),
        MqttPacket::Publish(Publish::new("a", b"x".to_vec(), QoS::AtLeastOnce, None)),
        MqttPacket::Publish(Publish::new("a", b"x".to_vec(), QoS::AtMostOnce, Some(3))),
        MqttPacket::Subscribe {
            packet_id: 1,
            topic_filters: vec![],
        },
        MqttPacket::Subscribe {
            packet_id: 1,
            topic_filters: vec![("a/#/b".into(), QoS::AtMostOnce)],
        },
    ];
    for p in bad {
        assert!(encode_packet(&p).is_err(), "{p:?}");
    }
}

#[test]
fn back_to_back_packets_decode_in_sequence() {
    let mut buf = common::read_hex("mqtt_connack_ok.hex");
    buf.extend(common::read_hex("mqtt_puback_7.hex"));
    buf.extend(common::read_hex("mqtt_pingresp.hex"));
    let mut at = 0;
    let mut seen = Vec::new();
    while let Some((p, n)) = decode_packet(&buf[at..]).unwrap() {
        seen.push(p);
        at += n;
    }
    assert_eq!(at, buf.len());
    assert_eq!(
        seen,
        vec![
            MqttPacket::ConnAck {
                session_present: false,
                return_code: 0
            },
            MqttPacket::PubAck { packet_id: 7 },
            MqttPacket::PingResp
        ]
    );
}

fn level() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_\\-é]{1,8}"
}

fn topic_name() -> impl Strategy<Value = String> {
    prop::collection::vec(level(), 1..6).prop_map(|v| v.join("/"))
}

fn topic_filter() -> impl Strategy<Value = String> {
    let lvl = prop_oneof![3 => level(), 1 => Just("+".to_string())];
    (prop::collection::vec(lvl, 1..5), any::<bool>()).prop_map(|(mut v, hash)| {
        if hash {
            v.push("#".into());
        }
        v.join("/")
    })
}

fn qos() -> impl Strategy<Value = QoS> {
    prop_oneof![Just(QoS::AtMostOnce), Just(QoS::AtLeastOnce)]
}

fn publish() -> impl Strategy<Value = Publish> {
    (
        topic_name(),
        prop::collection::vec(any::<u8>(), 0..400),
        qos(),
        1u16..,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(topic, payload, qos, id, dup, retain)| Publish {
            topic,
            payload,
            qos,
            packet_id: (qos == QoS::AtLeastOnce).then_some(id),
            dup: dup && qos == QoS::AtLeastOnce,
            retain,
        })
}

fn round_trip(p: &MqttPacket) -> Result<(), TestCaseError> {
    let bytes = encode_packet(p).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(
        oracle_decode_varint(&bytes[1..])
            + 1
            + encode_remaining_length(oracle_decode_varint(&bytes[1..]))
                .unwrap()
                .len(),
        bytes.len()
    );
    let decoded = decode_packet(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(decoded, Some((p.clone(), bytes.len())));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn remaining_length_round_trip(n in 0usize..=MAX_REMAINING_LENGTH) {
        let enc = encode_remaining_length(n).unwrap();
        prop_assert!((1..=4).contains(&enc.len()));
        prop_assert_eq!(oracle_decode_varint(&enc), n);
        prop_assert_eq!(decode_remaining_length(&enc).unwrap(), Some((n, enc.len())));
    }

    #[test]
    fn connect_round_trip(id in "[a-zA-Z0-9\\-]{0,23}", ka in any::<u16>(), clean in any::<bool>()) {
        round_trip(&MqttPacket::Connect(Connect { client_id: id, keep_alive_s: ka, clean_session: clean }))?;
    }

    #[test]
    fn connack_round_trip(sp in any::<bool>(), rc in 0u8..=5) {
        round_trip(&MqttPacket::ConnAck { session_present: sp, return_code: rc })?;
    }

    #[test]
    fn publish_round_trip(p in publish()) {
        round_trip(&MqttPacket::Publish(p))?;
    }

    #[test]
    fn puback_round_trip(id in 1u16..) {
        round_trip(&MqttPacket::PubAck { packet_id: id })?;
    }

    #[test]
    fn subscribe_round_trip(id in 1u16.., filters in prop::collection::vec((topic_filter(), qos()), 1..6)) {
        round_trip(&MqttPacket::Subscribe { packet_id: id, topic_filters: filters })?;
    }

    #[test]
    fn suback_round_trip(id in 1u16.., granted in prop::collection::vec(prop_oneof![Just(0u8), Just(1u8), Just(0x80u8)], 1..6)) {
        round_trip(&MqttPacket::SubAck { packet_id: id, granted })?;
    }

    #[test]
    fn empty_body_round_trip(which in 0u8..3) {
        let p = match which { 0 => MqttPacket::PingReq, 1 => MqttPacket::PingResp, _ => MqttPacket::Disconnect };
        round_trip(&p)?;
    }

    #[test]
    fn truncation_never_errors(p in publish(), cut_frac in 0.0f64..1.0) {
        let bytes = encode_packet(&MqttPacket::Publish(p)).unwrap();
        let cut = ((bytes.len() as f64) * cut_frac) as usize;
        prop_assert_eq!(decode_packet(&bytes[..cut]).unwrap(), None);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        if let Ok(Some((p, n))) = decode_packet(&bytes) {
            prop_assert!(n <= bytes.len());
            // whatever decodes must re-encode to the same prefix
            prop_assert_eq!(encode_packet(&p).unwrap(), bytes[..n].to_vec());
        }
    }
}
