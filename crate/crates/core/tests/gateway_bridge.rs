mod common;

use buoynet::frame::{decode_frame, encode_frame, LoraFrame};
use buoynet::gateway::{
    channel_deliver, Gateway, GatewayConfig, Link, Reception, TelemetryRecord, Transmission,
};
use buoynet::geo::GeoPoint;
use buoynet::mqtt::codec::{decode_packet, encode_packet, MqttPacket};
use buoynet::mqtt::session::SessionState;
use buoynet::pathloss::{PathLossModel, RadioParams};
use buoynet::rng;
use buoynet::scenario::destination;
use proptest::prelude::*;
use std::collections::HashSet;

const GW: GeoPoint = GeoPoint::new(20.0, 110.0);

fn record() -> TelemetryRecord {
    TelemetryRecord {
        node_id: 7,
        seq: 42,
        timestamp_s: 120.5,
        temp_c: 25.03,
        lat: 20.0,
        lon: 110.123456,
        battery_mv: 3700,
        rssi_dbm: -97.5,
        gateway_id: "gw1".into(),
    }
}

#[test]
fn canonical_json_golden() {
    let golden = common::read_text("telemetry_node7_seq42.json");
    assert_eq!(record().to_canonical_json(), golden);
    // a generic parser accepts it; keys appear once each, in the fixed order
    let v: serde_json::Value = serde_json::from_str(&golden).unwrap();
    let order = [
        "node_id",
        "seq",
        "ts",
        "temp_c",
        "lat",
        "lon",
        "battery_mv",
        "rssi_dbm",
        "gateway_id",
    ];
    assert_eq!(v.as_object().unwrap().len(), order.len());
    let at: Vec<usize> = order
        .iter()
        .map(|k| golden.find(&format!("\"{k}\":")).unwrap())
        .collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{at:?}");
    assert!(!golden.contains(' ') && !golden.contains('\n'));
    assert_eq!(
        TelemetryRecord::from_json(golden.as_bytes()).unwrap(),
        record()
    );
}

#[test]
fn topic_template() {
    let cfg = GatewayConfig::new("gw1", GW);
    assert_eq!(cfg.topic_for(7), "marine/v1/gw1/7/telemetry");
}

fn link(sigma: f64) -> Link {
    Link {
        gateway: GW,
        model: PathLossModel::reference(),
        radio: RadioParams {
            shadowing_sigma_db: sigma,
            ..RadioParams::default()
        },
        extra_loss_db: 0.0,
    }
}

fn tx(node_id: u16, distance_m: f64, start_s: f64) -> Transmission {
    Transmission {
        node_id,
        payload: vec![node_id as u8],
        position: destination(&GW, distance_m, 0.0),
        start_s,
        airtime_s: 0.1,
    }
}

#[test]
fn channel_examples() {
    let mut r = rng::seeded(1);
    let out = channel_deliver(&[tx(1, 60.0, 0.0)], &link(0.0), &mut r);
    assert_eq!(out.delivered.len(), 1);
    assert!(
        (out.delivered[0].rssi_dbm + 50.194).abs() < 1e-6,
        "{}",
        out.delivered[0].rssi_dbm
    );

    let out = channel_deliver(&[tx(1, 10_000.0, 0.0)], &link(0.0), &mut r);
    assert_eq!((out.delivered.len(), out.lost_rssi), (0, 1));
    // oracle: -22.06 ln(10000/60) - 50.194 is about -163 dBm
    assert!((-22.06 * (10_000f64 / 60.0).ln() - 50.194 + 163.0).abs() < 0.5);

    // equal power, full overlap: neither captures
    let out = channel_deliver(&[tx(1, 500.0, 0.0), tx(2, 500.0, 0.0)], &link(0.0), &mut r);
    assert_eq!((out.delivered.len(), out.lost_collision), (0, 2));

    // partial overlap still collides; back-to-back does not
    let out = channel_deliver(&[tx(1, 500.0, 0.0), tx(2, 500.0, 0.05)], &link(0.0), &mut r);
    assert_eq!(out.lost_collision, 2);
    let out = channel_deliver(&[tx(1, 500.0, 0.0), tx(2, 500.0, 0.1)], &link(0.0), &mut r);
    assert_eq!(out.delivered.len(), 2);
}

#[test]
fn capture_needs_six_db() {
    let mut r = rng::seeded(1);
    // 60 m vs the distance that is exactly 6 dB weaker, and a bit closer
    let d6 = 60.0 * (6.0f64 / 22.06).exp();
    let out = channel_deliver(
        &[tx(1, 60.0, 0.0), tx(2, d6 * 1.01, 0.0)],
        &link(0.0),
        &mut r,
    );
    assert_eq!(out.delivered.len(), 1);
    assert_eq!(out.delivered[0].node_id, 1);
    let out = channel_deliver(
        &[tx(1, 60.0, 0.0), tx(2, d6 * 0.99, 0.0)],
        &link(0.0),
        &mut r,
    );
    assert_eq!(out.delivered.len(), 0);
}

#[test]
fn sigma_zero_delivery_is_a_step_at_max_range() {
    let max = PathLossModel::reference().max_range(-132.0).unwrap();
    let mut r = rng::seeded(9);
    for k in 1..=80 {
        let d = 50.0 * k as f64;
        let out = channel_deliver(&[tx(1, d, 0.0)], &link(0.0), &mut r);
        assert_eq!(out.delivered.len() == 1, d <= max, "d = {d}");
    }
}

fn frame(node_id: u16, seq: u16) -> LoraFrame {
    LoraFrame {
        version: 1,
        node_id,
        seq,
        temp_centi_c: 2503,
        lat_e7: 200_000_000,
        lon_e7: 1_100_000_000,
        battery_mv: 3900,
    }
}

fn connected_gateway() -> Gateway {
    let mut g = Gateway::new(GatewayConfig::new("gw1", GW));
    let act = g.tick(0.0);
    assert!(matches!(
        decode_packet(&act.bytes_out).unwrap(),
        Some((MqttPacket::Connect(_), _))
    ));
    g.on_bytes(&[0x20, 0x02, 0x00, 0x00], 0.0);
    assert_eq!(g.session().state(), SessionState::Connected);
    g
}

fn published(bytes: &[u8]) -> Vec<TelemetryRecord> {
    let mut out = Vec::new();
    let mut at = 0;
    while let Some((p, n)) = decode_packet(&bytes[at..]).unwrap() {
        if let MqttPacket::Publish(p) = p {
            out.push(TelemetryRecord::from_json(&p.payload).unwrap());
        }
        at += n;
    }
    out
}

#[test]
fn bridge_scaling_and_dedup() {
    let mut g = connected_gateway();
    let rx = Reception {
        payload: encode_frame(&frame(7, 42)).unwrap().to_vec(),
        node_id: 7,
        rssi_dbm: -90.0,
        end_s: 5.0,
    };
    let first = published(&g.receive(&rx, 5.0).bytes_out);
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].temp_c, 25.03);
    assert_eq!((first[0].lat, first[0].lon), (20.0, 110.0));
    assert_eq!(first[0].timestamp_s, 5.0);
    assert!(published(&g.receive(&rx, 6.0).bytes_out).is_empty());
    let s = g.stats();
    assert_eq!((s.delivered, s.published, s.duplicates), (2, 1, 1));
}

#[test]
fn disconnected_gateway_queues() {
    let mut g = Gateway::new(GatewayConfig::new("gw1", GW));
    let rx = Reception {
        payload: encode_frame(&frame(1, 1)).unwrap().to_vec(),
        node_id: 1,
        rssi_dbm: -80.0,
        end_s: 1.0,
    };
    assert!(g.receive(&rx, 1.0).bytes_out.is_empty());
    assert_eq!(g.session().queued(), 1);
    assert_eq!(g.stats().published, 0);
}

#[derive(Debug, Clone)]
enum Input {
    Good(u16, u16),
    Flip(u16, u16, usize),
    Short(u16, u16),
}

fn input() -> impl Strategy<Value = Input> {
    prop_oneof![
        6 => (0u16..4, 0u16..30).prop_map(|(n, s)| Input::Good(n, s)),
        2 => (0u16..4, 0u16..30, 0usize..160).prop_map(|(n, s, b)| Input::Flip(n, s, b)),
        1 => (0u16..4, 0u16..30).prop_map(|(n, s)| Input::Short(n, s)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// Nothing that failed CRC reaches MQTT, published (node, seq) pairs are
    /// unique, and the counters reconcile.
    #[test]
    fn bridge_end_to_end(inputs in prop::collection::vec(input(), 0..200)) {
        let mut g = connected_gateway();
        let mut out = Vec::new();
        let mut valid: HashSet<(u16, u16)> = HashSet::new();
        for (i, inp) in inputs.iter().enumerate() {
            let (payload, node_id) = match *inp {
                Input::Good(n, s) => {
                    valid.insert((n, s));
                    (encode_frame(&frame(n, s)).unwrap().to_vec(), n)
                }
                Input::Flip(n, s, bit) => {
                    let mut b = encode_frame(&frame(n, s)).unwrap().to_vec();
                    b[bit / 8] ^= 1 << (bit % 8);
                    prop_assert!(decode_frame(&b).is_err());
                    (b, n)
                }
                Input::Short(n, s) => (encode_frame(&frame(n, s)).unwrap()[..12].to_vec(), n),
            };
            let t = i as f64;
            let act = g.receive(&Reception { payload, node_id, rssi_dbm: -100.0, end_s: t }, t);
            out.extend(published(&act.bytes_out));
            // ack everything so nothing stays pending
            let mut at = 0;
            while let Some((p, n)) = decode_packet(&act.bytes_out[at..]).unwrap() {
                if let MqttPacket::Publish(p) = p {
                    let ack = encode_packet(&MqttPacket::PubAck { packet_id: p.packet_id.unwrap() }).unwrap();
                    g.on_bytes(&ack, t);
                }
                at += n;
            }
        }
        let keys: Vec<(u16, u16)> = out.iter().map(|r| (r.node_id, r.seq)).collect();
        let unique: HashSet<_> = keys.iter().copied().collect();
        prop_assert_eq!(unique.len(), keys.len());
        prop_assert_eq!(&unique, &valid);
        let s = g.stats();
        prop_assert_eq!(s.delivered, inputs.len() as u64);
        prop_assert_eq!(s.delivered, s.published + s.duplicates + s.queue_drops + s.corrupt);
        prop_assert_eq!(s.published, out.len() as u64);
    }
}
