//! Desk-scale emulation of a marine sensor-buoy monitoring pipeline.
//!
//! Simulated buoys sample water temperature and emit fixed-size LoRa frames.
//! A gateway receives them through a log-distance path-loss channel, bridges
//! them to JSON telemetry and publishes over MQTT 3.1.1 to an embedded broker.
//! The monitor persists readings in an append-only log and serves a small
//! REST API, including an on-demand RSSI/distance curve fit.
//!
//! The [`runner`] module ties everything together on a single logical clock.

pub mod crc;
pub mod frame;
pub mod gateway;
pub mod geo;
pub mod monitor;
pub mod mqtt;
pub mod node;
pub mod pathloss;
pub mod rng;
pub mod runner;
pub mod scenario;

pub use frame::LoraFrame;
pub use pathloss::{PathLossModel, RadioParams, RssiSample};
pub use scenario::Scenario;
