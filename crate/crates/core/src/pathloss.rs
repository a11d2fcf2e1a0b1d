//! Log-distance path-loss model `RSSI = a·ln(d / unit) + b`.
//!
//! Forward prediction, inversion to a maximum range, ordinary least-squares
//! fitting in `(ln x, rssi)` space, the coefficient of determination, and
//! the shadowed reception decision used by the channel.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slope of the reference buoy-link fit, dBm per natural-log unit.
pub const REFERENCE_A: f64 = -22.06;
/// Intercept of the reference fit at one distance unit, dBm.
pub const REFERENCE_B: f64 = -50.194;
/// Distance represented by `x = 1` in the reference fit.
pub const DEFAULT_DISTANCE_UNIT_M: f64 = 60.0;
/// SX1278 receiver sensitivity.
pub const SX1278_SENSITIVITY_DBM: f64 = -132.0;
/// HC-12 receiver sensitivity.
pub const HC12_SENSITIVITY_DBM: f64 = -117.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathLossError {
    #[error("distance must be positive and finite, got {0} m")]
    NonPositiveDistance(f64),
    #[error("distance unit must be positive and finite, got {0} m")]
    InvalidUnit(f64),
    #[error("no range solution: slope {a} must be negative and sensitivity {sensitivity_dbm} dBm below intercept {b} dBm")]
    NoSolution {
        a: f64,
        b: f64,
        sensitivity_dbm: f64,
    },
    #[error("need at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error("all samples share one distance; the fit is singular")]
    SingularFit,
    #[error("rssi values have zero variance")]
    DegenerateData,
    #[error("rssi must be finite")]
    NonFiniteRssi,
    #[error("sample csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossModel {
    pub a: f64,
    pub b: f64,
    pub r_squared: Option<f64>,
    pub distance_unit_m: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self::reference()
    }
}

impl PathLossModel {
    pub fn new(a: f64, b: f64, distance_unit_m: f64) -> Self {
        Self {
            a,
            b,
            r_squared: None,
            distance_unit_m,
        }
    }

    /// The fitted buoy-link curve: a = −22.06, b = −50.194, 60 m unit.
    pub fn reference() -> Self {
        Self::new(REFERENCE_A, REFERENCE_B, DEFAULT_DISTANCE_UNIT_M)
    }

    fn check_unit(&self) -> Result<(), PathLossError> {
        if self.distance_unit_m > 0.0 && self.distance_unit_m.is_finite() {
            Ok(())
        } else {
            Err(PathLossError::InvalidUnit(self.distance_unit_m))
        }
    }

    /// Deterministic RSSI at `distance_m`.
    pub fn rssi_at(&self, distance_m: f64) -> Result<f64, PathLossError> {
        self.check_unit()?;
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return Err(PathLossError::NonPositiveDistance(distance_m));
        }
        Ok(self.a * (distance_m / self.distance_unit_m).ln() + self.b)
    }

    /// Distance at which the predicted RSSI equals `sensitivity_dbm`.
    pub fn max_range(&self, sensitivity_dbm: f64) -> Result<f64, PathLossError> {
        self.check_unit()?;
        let solvable = self.a < 0.0 && sensitivity_dbm <= self.b; // false for NaN
        if !solvable {
            return Err(PathLossError::NoSolution {
                a: self.a,
                b: self.b,
                sensitivity_dbm,
            });
        }
        Ok(self.distance_unit_m * ((sensitivity_dbm - self.b) / self.a).exp())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub distance_m: f64,
    pub rssi_dbm: f64,
}

impl RssiSample {
    pub fn new(distance_m: f64, rssi_dbm: f64) -> Result<Self, PathLossError> {
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return Err(PathLossError::NonPositiveDistance(distance_m));
        }
        if !rssi_dbm.is_finite() {
            return Err(PathLossError::NonFiniteRssi);
        }
        Ok(Self {
            distance_m,
            rssi_dbm,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    pub sensitivity_dbm: f64,
    pub shadowing_sigma_db: f64,
    pub capture_threshold_db: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            sensitivity_dbm: SX1278_SENSITIVITY_DBM,
            shadowing_sigma_db: 3.0,
            capture_threshold_db: 6.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), String> {
        let negative = self.sensitivity_dbm < 0.0;
        if !negative {
            return Err(format!(
                "sensitivity_dbm must be negative, got {}",
                self.sensitivity_dbm
            ));
        }
        if !(self.shadowing_sigma_db >= 0.0 && self.shadowing_sigma_db.is_finite()) {
            return Err(format!(
                "shadowing_sigma_db must be >= 0, got {}",
                self.shadowing_sigma_db
            ));
        }
        if !(self.capture_threshold_db >= 0.0 && self.capture_threshold_db.is_finite()) {
            return Err(format!(
                "capture_threshold_db must be >= 0, got {}",
                self.capture_threshold_db
            ));
        }
        Ok(())
    }
}

/// RSSI as seen by the receiver: `tx_rssi` plus one Gaussian shadowing draw.
///
/// One standard-normal value is consumed even when sigma is zero so that the
/// random stream stays aligned across sigma settings.
pub fn shadowed_rssi<R: Rng + ?Sized>(tx_rssi_dbm: f64, params: &RadioParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    tx_rssi_dbm + params.shadowing_sigma_db * z
}

pub fn is_received(rssi_dbm: f64, params: &RadioParams) -> bool {
    rssi_dbm >= params.sensitivity_dbm
}

pub fn receive_decision<R: Rng + ?Sized>(
    tx_rssi_dbm: f64,
    params: &RadioParams,
    rng: &mut R,
) -> bool {
    is_received(shadowed_rssi(tx_rssi_dbm, params, rng), params)
}

fn check_samples(samples: &[RssiSample]) -> Result<(), PathLossError> {
    if samples.len() < 2 {
        return Err(PathLossError::InsufficientData(samples.len()));
    }
    for s in samples {
        if !(s.distance_m > 0.0 && s.distance_m.is_finite()) {
            return Err(PathLossError::NonPositiveDistance(s.distance_m));
        }
        if !s.rssi_dbm.is_finite() {
            return Err(PathLossError::NonFiniteRssi);
        }
    }
    Ok(())
}

/// Ordinary least squares of rssi on `ln(d / unit_m)`.
pub fn fit_log_model(samples: &[RssiSample], unit_m: f64) -> Result<PathLossModel, PathLossError> {
    if !(unit_m > 0.0 && unit_m.is_finite()) {
        return Err(PathLossError::InvalidUnit(unit_m));
    }
    check_samples(samples)?;
    let n = samples.len() as f64;
    let u: Vec<f64> = samples
        .iter()
        .map(|s| (s.distance_m / unit_m).ln())
        .collect();
    let mean_u = u.iter().sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.rssi_dbm).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (ui, s) in u.iter().zip(samples) {
        let du = ui - mean_u;
        sxx += du * du;
        sxy += du * (s.rssi_dbm - mean_y);
    }
    if sxx == 0.0
        || samples
            .iter()
            .all(|s| s.distance_m == samples[0].distance_m)
    {
        return Err(PathLossError::SingularFit);
    }
    let a = sxy / sxx;
    let b = mean_y - a * mean_u;
    let mut model = PathLossModel::new(a, b, unit_m);
    model.r_squared = match r_squared(samples, &model) {
        Ok(r2) => Some(r2),
        // Flat data is fitted exactly by a horizontal line.
        Err(PathLossError::DegenerateData) => Some(1.0),
        Err(e) => return Err(e),
    };
    Ok(model)
}

/// `1 − SS_res / SS_tot`, clamped into `[0, 1]`.
///
/// The clamp only bites for models that fit worse than the mean line;
/// least-squares fits land in the range by construction.
pub fn r_squared(samples: &[RssiSample], model: &PathLossModel) -> Result<f64, PathLossError> {
    let raw = r_squared_unclamped(samples, model)?;
    Ok(raw.clamp(0.0, 1.0))
}

pub fn r_squared_unclamped(
    samples: &[RssiSample],
    model: &PathLossModel,
) -> Result<f64, PathLossError> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let mean_y = samples.iter().map(|s| s.rssi_dbm).sum::<f64>() / n;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for s in samples {
        let predicted = model.rssi_at(s.distance_m)?;
        ss_res += (s.rssi_dbm - predicted).powi(2);
        ss_tot += (s.rssi_dbm - mean_y).powi(2);
    }
    if ss_tot == 0.0 {
        return Err(PathLossError::DegenerateData);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Samples drawn from `model` at `distances_m` with Gaussian noise of `sigma_db`.
pub fn synthesize_samples<R: Rng + ?Sized>(
    model: &PathLossModel,
    distances_m: &[f64],
    sigma_db: f64,
    rng: &mut R,
) -> Result<Vec<RssiSample>, PathLossError> {
    distances_m
        .iter()
        .map(|&d| {
            let z: f64 = rng.sample(StandardNormal);
            RssiSample::new(d, model.rssi_at(d)? + sigma_db * z)
        })
        .collect()
}

/// Reads `distance_m,rssi_dbm` CSV.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<RssiSample>, PathLossError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| PathLossError::Csv(e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "distance_m" || &headers[1] != "rssi_dbm" {
        return Err(PathLossError::Csv(format!(
            "expected header distance_m,rssi_dbm, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (d, r) = rec.map_err(|e| PathLossError::Csv(format!("row {}: {e}", i + 2)))?;
        out.push(RssiSample::new(d, r)?);
    }
    Ok(out)
}

pub fn write_samples_csv<W: Write>(writer: W, samples: &[RssiSample]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["distance_m", "rssi_dbm"])?;
    for s in samples {
        w.write_record([s.distance_m.to_string(), s.rssi_dbm.to_string()])?;
    }
    w.flush()
}
