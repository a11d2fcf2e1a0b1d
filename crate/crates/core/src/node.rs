//! Sensor buoy model: DS18B20 sampling, battery drain, solar charging and
//! frame emission, advanced in discrete steps.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::frame::{LoraFrame, FRAME_VERSION};
use crate::geo::GeoPoint;

/// DS18B20 12-bit resolution.
pub const DS18B20_STEP_C: f64 = 0.0625;
pub const DS18B20_MIN_C: f64 = -55.0;
pub const DS18B20_MAX_C: f64 = 125.0;
pub const NOMINAL_CELL_V: f64 = 3.7;
const SECONDS_PER_DAY: f64 = 86_400.0;

/// Synthetic truth for the sensed field.
pub trait Environment {
    fn water_temp_c(&self, position: &GeoPoint, time_s: f64) -> f64;
    /// Fraction of full sun in `[0, 1]`.
    fn irradiance(&self, time_s: f64) -> f64;
}

/// Sinusoidal diurnal water temperature with a linear north-south gradient,
/// and a clipped-sine day with sunrise at 06:00.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiurnalEnvironment {
    pub base_c: f64,
    pub amplitude_c: f64,
    /// Hour of the daily temperature peak.
    pub peak_hour: f64,
    pub gradient_c_per_km_north: f64,
    pub reference: GeoPoint,
}

impl Default for DiurnalEnvironment {
    fn default() -> Self {
        Self {
            base_c: 22.0,
            amplitude_c: 1.5,
            peak_hour: 15.0,
            gradient_c_per_km_north: -0.2,
            reference: GeoPoint::new(20.0, 110.0),
        }
    }
}

impl Environment for DiurnalEnvironment {
    fn water_temp_c(&self, position: &GeoPoint, time_s: f64) -> f64 {
        let phase = 2.0 * PI * (time_s / SECONDS_PER_DAY - self.peak_hour / 24.0);
        let north_km =
            (position.lat - self.reference.lat).to_radians() * crate::geo::EARTH_RADIUS_M / 1000.0;
        self.base_c + self.amplitude_c * phase.cos() + self.gradient_c_per_km_north * north_km
    }

    fn irradiance(&self, time_s: f64) -> f64 {
        let day = time_s.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_DAY;
        (2.0 * PI * (day - 0.25)).sin().clamp(0.0, 1.0)
    }
}

/// Fixed temperature and irradiance, for tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantEnvironment {
    pub temp_c: f64,
    pub irradiance: f64,
}

impl Environment for ConstantEnvironment {
    fn water_temp_c(&self, _: &GeoPoint, _: f64) -> f64 {
        self.temp_c
    }

    fn irradiance(&self, _: f64) -> f64 {
        self.irradiance
    }
}

/// Current draws in milliamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerProfile {
    pub sleep_ma: f64,
    pub active_ma: f64,
    pub active_s: f64,
    pub transmit_ma: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self {
            sleep_ma: 0.002,
            active_ma: 10.0,
            active_s: 1.0,
            transmit_ma: 120.0,
        }
    }
}

fn default_period() -> f64 {
    60.0
}
fn default_capacity() -> f64 {
    4.0 * 2600.0
}
fn default_panels() -> u32 {
    6
}
fn default_panel_mw() -> f64 {
    100.0
}
fn default_airtime() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: u16,
    pub position: GeoPoint,
    #[serde(default = "default_period")]
    pub sample_period_s: f64,
    #[serde(default = "default_capacity")]
    pub battery_capacity_mah: f64,
    #[serde(default = "default_panels")]
    pub solar_panel_count: u32,
    #[serde(default = "default_panel_mw")]
    pub panel_power_mw: f64,
    /// Charge at start; full when omitted.
    #[serde(default)]
    pub initial_charge_mah: Option<f64>,
    /// Offset of the first sample; drawn uniformly from `[0, period)` when omitted.
    #[serde(default)]
    pub phase_s: Option<f64>,
    #[serde(default = "default_airtime")]
    pub airtime_s: f64,
    #[serde(default)]
    pub power: PowerProfile,
    /// Whether the start button has been pressed.
    #[serde(default = "default_true")]
    pub started: bool,
}

impl NodeConfig {
    pub fn new(node_id: u16, position: GeoPoint) -> Self {
        Self {
            node_id,
            position,
            sample_period_s: default_period(),
            battery_capacity_mah: default_capacity(),
            solar_panel_count: default_panels(),
            panel_power_mw: default_panel_mw(),
            initial_charge_mah: None,
            phase_s: None,
            airtime_s: default_airtime(),
            power: PowerProfile::default(),
            started: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let id = self.node_id;
        if !(self.sample_period_s > 0.0 && self.sample_period_s.is_finite()) {
            return Err(format!("node {id}: sample_period_s must be > 0"));
        }
        if !(self.battery_capacity_mah > 0.0 && self.battery_capacity_mah.is_finite()) {
            return Err(format!("node {id}: battery_capacity_mah must be > 0"));
        }
        if !(self.panel_power_mw >= 0.0 && self.panel_power_mw.is_finite()) {
            return Err(format!("node {id}: panel_power_mw must be >= 0"));
        }
        if let Some(c) = self.initial_charge_mah {
            if !(0.0..=self.battery_capacity_mah).contains(&c) {
                return Err(format!(
                    "node {id}: initial_charge_mah must lie in [0, capacity]"
                ));
            }
        }
        if let Some(p) = self.phase_s {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(format!("node {id}: phase_s must be >= 0"));
            }
        }
        if !(self.airtime_s > 0.0 && self.airtime_s.is_finite()) {
            return Err(format!("node {id}: airtime_s must be > 0"));
        }
        let p = &self.power;
        if [p.sleep_ma, p.active_ma, p.active_s, p.transmit_ma]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(format!("node {id}: power profile values must be >= 0"));
        }
        if !self.position.is_valid() {
            return Err(format!("node {id}: position out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeMode {
    Sleep,
    Active,
    Transmitting,
}

/// Cumulative energy flows, in mAh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub initial_mah: f64,
    pub sleep_mah: f64,
    pub active_mah: f64,
    pub transmit_mah: f64,
    pub solar_mah: f64,
    /// Solar input discarded because the battery was full.
    pub spilled_mah: f64,
    /// Drain that could not be served because the battery was empty.
    pub shortfall_mah: f64,
}

impl EnergyLedger {
    pub fn expected_charge(&self) -> f64 {
        self.initial_mah - self.sleep_mah - self.active_mah - self.transmit_mah + self.solar_mah
            - self.spilled_mah
            + self.shortfall_mah
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub charge_mah: f64,
    pub seq: u16,
    pub mode: NodeMode,
    pub started: bool,
    /// Time of the next due sample.
    pub next_sample_s: f64,
    pub ledger: EnergyLedger,
}

/// One frame leaving the node's radio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub frame: LoraFrame,
    pub sample_time_s: f64,
    pub start_s: f64,
    pub airtime_s: f64,
}

impl NodeState {
    pub fn new<R: Rng + ?Sized>(config: &NodeConfig, rng: &mut R) -> Self {
        let charge = config
            .initial_charge_mah
            .unwrap_or(config.battery_capacity_mah);
        let phase = config
            .phase_s
            .unwrap_or_else(|| rng.random_range(0.0..config.sample_period_s));
        Self {
            charge_mah: charge,
            seq: 0,
            mode: NodeMode::Sleep,
            started: config.started,
            next_sample_s: phase,
            ledger: EnergyLedger {
                initial_mah: charge,
                ..EnergyLedger::default()
            },
        }
    }

    pub fn state_of_charge(&self, config: &NodeConfig) -> f64 {
        (self.charge_mah / config.battery_capacity_mah).clamp(0.0, 1.0)
    }

    /// Battery terminal voltage from a linear 3.0–4.2 V discharge curve.
    pub fn battery_mv(&self, config: &NodeConfig) -> u16 {
        (3000.0 + 1200.0 * self.state_of_charge(config)).round() as u16
    }

    fn drain(&mut self, mah: f64) -> f64 {
        let served = mah.min(self.charge_mah);
        self.charge_mah -= served;
        self.ledger.shortfall_mah += mah - served;
        mah
    }

    /// Advances the node over `[now, now + dt)`.
    pub fn step<E: Environment + ?Sized>(
        &mut self,
        config: &NodeConfig,
        env: &E,
        now: f64,
        dt: f64,
    ) -> Vec<Emission> {
        debug_assert!(dt > 0.0);
        let end = now + dt;
        let mut out = Vec::new();
        if !self.started {
            while self.next_sample_s < end {
                self.next_sample_s += config.sample_period_s;
            }
            return out;
        }
        while self.next_sample_s < end {
            let t = self.next_sample_s;
            self.next_sample_s += config.sample_period_s;
            if t < now || self.charge_mah <= 0.0 {
                continue;
            }
            self.mode = NodeMode::Active;
            let temp = sample_temperature(env, config, t);
            let frame = LoraFrame {
                version: FRAME_VERSION,
                node_id: config.node_id,
                seq: self.seq,
                temp_centi_c: (temp * 100.0).round() as i16,
                lat_e7: (config.position.lat * 1e7).round() as i32,
                lon_e7: (config.position.lon * 1e7).round() as i32,
                battery_mv: self.battery_mv(config),
            };
            self.seq = self.seq.wrapping_add(1);
            let active = self.drain(config.power.active_ma * config.power.active_s / 3600.0);
            self.ledger.active_mah += active;
            self.mode = NodeMode::Transmitting;
            let tx = self.drain(config.power.transmit_ma * config.airtime_s / 3600.0);
            self.ledger.transmit_mah += tx;
            out.push(Emission {
                frame,
                sample_time_s: t,
                start_s: t + config.power.active_s,
                airtime_s: config.airtime_s,
            });
        }
        self.mode = NodeMode::Sleep;
        let sleep = self.drain(config.power.sleep_ma * dt / 3600.0);
        self.ledger.sleep_mah += sleep;
        let solar = solar_charge(config, env.irradiance(now), dt);
        self.ledger.solar_mah += solar;
        self.charge_mah += solar;
        if self.charge_mah > config.battery_capacity_mah {
            self.ledger.spilled_mah += self.charge_mah - config.battery_capacity_mah;
            self.charge_mah = config.battery_capacity_mah;
        }
        out
    }
}

/// Sensor reading: truth quantized to the 12-bit grid and clamped to the
/// sensor's operating range.
pub fn sample_temperature<E: Environment + ?Sized>(
    env: &E,
    config: &NodeConfig,
    time_s: f64,
) -> f64 {
    quantize_ds18b20(env.water_temp_c(&config.position, time_s))
}

pub fn quantize_ds18b20(true_c: f64) -> f64 {
    let clamped = true_c.clamp(DS18B20_MIN_C, DS18B20_MAX_C);
    (clamped / DS18B20_STEP_C).round() * DS18B20_STEP_C
}

/// Charge delivered by the panels over `dt_s`, in mAh at the nominal cell voltage.
pub fn solar_charge(config: &NodeConfig, irradiance: f64, dt_s: f64) -> f64 {
    let irradiance = irradiance.clamp(0.0, 1.0);
    f64::from(config.solar_panel_count) * config.panel_power_mw * irradiance * dt_s
        / (3600.0 * NOMINAL_CELL_V)
}
