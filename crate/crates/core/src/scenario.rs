//! Declarative scenario files.
//!
//! ```json
//! {
//!   "scenario_version": 1,
//!   "seed": 42,
//!   "duration_s": 600,
//!   "environment": "open",
//!   "gateway": { "gateway_id": "gw1", "position": { "lat": 20.0, "lon": 110.0 } },
//!   "nodes": [ { "node_id": 1, "distance_m": 600 } ]
//! }
//! ```
//!
//! A node gives either an explicit `position` or a `distance_m` (plus
//! optional `bearing_deg`, default 0 = north) from the gateway.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::GatewayConfig;
use crate::geo::{GeoPoint, EARTH_RADIUS_M};
use crate::node::{DiurnalEnvironment, NodeConfig};
use crate::pathloss::{PathLossModel, RadioParams};

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_URBAN_EXTRA_LOSS_DB: f64 = 12.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid {
        field: String,
        line: Option<usize>,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentPreset {
    #[default]
    Open,
    Urban,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub model: PathLossModel,
    pub radio: RadioParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub scenario_version: u32,
    pub seed: u64,
    pub duration_s: f64,
    pub tick_s: f64,
    pub environment: EnvironmentPreset,
    pub urban_extra_loss_db: f64,
    pub channel: ChannelConfig,
    pub gateway: GatewayConfig,
    pub nodes: Vec<NodeConfig>,
    pub water: DiurnalEnvironment,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default = "default_version")]
    scenario_version: u32,
    seed: u64,
    duration_s: f64,
    #[serde(default = "default_tick")]
    tick_s: f64,
    #[serde(default)]
    environment: EnvironmentPreset,
    #[serde(default = "default_urban_loss")]
    urban_extra_loss_db: f64,
    #[serde(default)]
    channel: ChannelConfig,
    gateway: Value,
    nodes: Vec<Value>,
    #[serde(default)]
    water: Option<DiurnalEnvironment>,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}
fn default_tick() -> f64 {
    1.0
}
fn default_urban_loss() -> f64 {
    DEFAULT_URBAN_EXTRA_LOSS_DB
}

/// 1-based line of the `nth` (0-based) occurrence of `"key"` in `text`.
fn locate(text: &str, key: &str, nth: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let offset = text.match_indices(&needle).nth(nth)?.0;
    Some(text[..offset].matches('\n').count() + 1)
}

/// Point `distance_m` from `origin` along `bearing_deg` (great-circle).
pub fn destination(origin: &GeoPoint, distance_m: f64, bearing_deg: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let (phi1, lambda1) = (origin.lat.to_radians(), origin.lon.to_radians());
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    GeoPoint::new(
        phi2.to_degrees(),
        (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0,
    )
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let parse_err = |e: serde_json::Error| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: {
                let full = e.to_string();
                let suffix = format!(" at line {} column {}", e.line(), e.column());
                full.strip_suffix(&suffix)
                    .map(str::to_string)
                    .unwrap_or(full)
            },
        };
        let raw: RawScenario = serde_json::from_str(text).map_err(parse_err)?;
        let invalid =
            |field: &str, key: &str, nth: usize, message: String| ScenarioError::Invalid {
                field: field.to_owned(),
                line: locate(text, key, nth),
                message,
            };

        if raw.scenario_version != SCENARIO_VERSION {
            return Err(invalid(
                "scenario_version",
                "scenario_version",
                0,
                format!(
                    "unsupported version {}, expected {SCENARIO_VERSION}",
                    raw.scenario_version
                ),
            ));
        }
        if raw.gateway.get("radio").is_some() {
            return Err(invalid(
                "gateway.radio",
                "radio",
                0,
                "radio parameters belong under `channel.radio`".into(),
            ));
        }
        let mut gateway: GatewayConfig = serde_json::from_value(raw.gateway)
            .map_err(|e| invalid("gateway", "gateway", 0, e.to_string()))?;
        gateway.radio = raw.channel.radio;
        // Positions live on the frame's grid so the channel and the monitor
        // measure the same distance.
        gateway.position = gateway.position.quantized_e7();

        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for (i, mut v) in raw.nodes.into_iter().enumerate() {
            let field = format!("nodes[{i}]");
            let obj = v
                .as_object_mut()
                .ok_or_else(|| invalid(&field, "nodes", 0, "expected an object".into()))?;
            if let Some(d) = obj.remove("distance_m") {
                let bearing = obj
                    .remove("bearing_deg")
                    .and_then(|b| b.as_f64())
                    .unwrap_or(0.0);
                let d = d
                    .as_f64()
                    .filter(|d| *d >= 0.0 && d.is_finite())
                    .ok_or_else(|| {
                        invalid(
                            &format!("{field}.distance_m"),
                            "distance_m",
                            i,
                            "must be a non-negative number".into(),
                        )
                    })?;
                if obj.contains_key("position") {
                    return Err(invalid(
                        &field,
                        "distance_m",
                        i,
                        "give either position or distance_m, not both".into(),
                    ));
                }
                let p = destination(&gateway.position, d, bearing);
                obj.insert(
                    "position".into(),
                    serde_json::to_value(p).expect("point serializes"),
                );
            }
            let node: NodeConfig = serde_json::from_value(v)
                .map_err(|e| invalid(&field, "node_id", i, e.to_string()))?;
            nodes.push(node);
        }
        for n in &mut nodes {
            n.position = n.position.quantized_e7();
        }

        let s = Scenario {
            scenario_version: raw.scenario_version,
            seed: raw.seed,
            duration_s: raw.duration_s,
            tick_s: raw.tick_s,
            environment: raw.environment,
            urban_extra_loss_db: raw.urban_extra_loss_db,
            channel: raw.channel,
            gateway,
            nodes,
            water: raw.water.unwrap_or_default(),
        };
        s.validate_with(|field, key, nth, msg| invalid(field, key, nth, msg))?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.validate_with(|field, _, _, message| ScenarioError::Invalid {
            field: field.to_owned(),
            line: None,
            message,
        })
    }

    fn validate_with(
        &self,
        invalid: impl Fn(&str, &str, usize, String) -> ScenarioError,
    ) -> Result<(), ScenarioError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid(
                "duration_s",
                "duration_s",
                0,
                format!("must be > 0, got {}", self.duration_s),
            ));
        }
        if !(self.tick_s > 0.0 && self.tick_s.is_finite()) {
            return Err(invalid(
                "tick_s",
                "tick_s",
                0,
                format!("must be > 0, got {}", self.tick_s),
            ));
        }
        if !(self.urban_extra_loss_db >= 0.0 && self.urban_extra_loss_db.is_finite()) {
            return Err(invalid(
                "urban_extra_loss_db",
                "urban_extra_loss_db",
                0,
                "must be >= 0".into(),
            ));
        }
        let m = &self.channel.model;
        if !(m.distance_unit_m > 0.0
            && m.distance_unit_m.is_finite()
            && m.a.is_finite()
            && m.b.is_finite())
        {
            return Err(invalid(
                "channel.model",
                "model",
                0,
                "coefficients must be finite and distance_unit_m > 0".into(),
            ));
        }
        self.channel
            .radio
            .validate()
            .map_err(|e| invalid("channel.radio", "radio", 0, e))?;
        self.gateway
            .validate()
            .map_err(|e| invalid("gateway", "gateway", 0, e))?;
        if self.nodes.is_empty() {
            return Err(invalid(
                "nodes",
                "nodes",
                0,
                "at least one node is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !seen.insert(n.node_id) {
                return Err(invalid(
                    &format!("nodes[{i}].node_id"),
                    "node_id",
                    i,
                    format!("duplicate node id {}", n.node_id),
                ));
            }
            n.validate()
                .map_err(|e| invalid(&format!("nodes[{i}]"), "node_id", i, e))?;
            if !self.gateway.position.distance_m(&n.position).is_finite() {
                return Err(invalid(
                    &format!("nodes[{i}].position"),
                    "node_id",
                    i,
                    "distance to gateway is not finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Flat loss applied on every link for the selected preset.
    pub fn extra_loss_db(&self) -> f64 {
        match self.environment {
            EnvironmentPreset::Open => 0.0,
            EnvironmentPreset::Urban => self.urban_extra_loss_db,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
