//! Fixed 19-byte over-the-air application frame.
//!
//! ```text
//! off len field
//!   0   1 magic 0xA5
//!   1   1 version
//!   2   2 node_id       u16 BE
//!   4   2 seq           u16 BE
//!   6   2 temp_centi_c  i16 BE
//!   8   4 lat_e7        i32 BE
//!  12   4 lon_e7        i32 BE
//!  16   2 battery_mv    u16 BE
//!  18   2 crc16         CRC-16/CCITT-FALSE over bytes 0..18
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crc::crc16_ccitt_false;

pub const FRAME_MAGIC: u8 = 0xA5;
pub const FRAME_VERSION: u8 = 1;
pub const FRAME_LEN: usize = 20;
const CRC_OFFSET: usize = FRAME_LEN - 2;

pub const TEMP_CENTI_MIN: i16 = -5500;
pub const TEMP_CENTI_MAX: i16 = 12500;
pub const LAT_E7_MAX: i32 = 900_000_000;
pub const LON_E7_MAX: i32 = 1_800_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("field {field} out of range: {value}")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("not a frame: bad magic 0x{0:02X}")]
    NotAFrame(u8),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: {0} bytes")]
    Truncated(usize),
    #[error("corrupt frame: crc 0x{found:04X}, expected 0x{expected:04X}")]
    Corrupt { found: u16, expected: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoraFrame {
    pub version: u8,
    pub node_id: u16,
    pub seq: u16,
    pub temp_centi_c: i16,
    pub lat_e7: i32,
    pub lon_e7: i32,
    pub battery_mv: u16,
}

impl LoraFrame {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.version != FRAME_VERSION {
            return Err(FrameError::UnsupportedVersion(self.version));
        }
        if !(TEMP_CENTI_MIN..=TEMP_CENTI_MAX).contains(&self.temp_centi_c) {
            return Err(FrameError::OutOfRange {
                field: "temp_centi_c",
                value: self.temp_centi_c.into(),
            });
        }
        if !(-LAT_E7_MAX..=LAT_E7_MAX).contains(&self.lat_e7) {
            return Err(FrameError::OutOfRange {
                field: "lat_e7",
                value: self.lat_e7.into(),
            });
        }
        if !(-LON_E7_MAX..=LON_E7_MAX).contains(&self.lon_e7) {
            return Err(FrameError::OutOfRange {
                field: "lon_e7",
                value: self.lon_e7.into(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<[u8; FRAME_LEN], FrameError> {
        encode_frame(self)
    }
}

pub fn encode_frame(frame: &LoraFrame) -> Result<[u8; FRAME_LEN], FrameError> {
    frame.validate()?;
    let mut out = [0u8; FRAME_LEN];
    out[0] = FRAME_MAGIC;
    out[1] = frame.version;
    out[2..4].copy_from_slice(&frame.node_id.to_be_bytes());
    out[4..6].copy_from_slice(&frame.seq.to_be_bytes());
    out[6..8].copy_from_slice(&frame.temp_centi_c.to_be_bytes());
    out[8..12].copy_from_slice(&frame.lat_e7.to_be_bytes());
    out[12..16].copy_from_slice(&frame.lon_e7.to_be_bytes());
    out[16..18].copy_from_slice(&frame.battery_mv.to_be_bytes());
    let crc = crc16_ccitt_false(&out[..CRC_OFFSET]);
    out[CRC_OFFSET..].copy_from_slice(&crc.to_be_bytes());
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<LoraFrame, FrameError> {
    if let Some(&m) = bytes.first() {
        if m != FRAME_MAGIC {
            return Err(FrameError::NotAFrame(m));
        }
    }
    if bytes.len() != FRAME_LEN {
        return Err(FrameError::Truncated(bytes.len()));
    }
    let expected = crc16_ccitt_false(&bytes[..CRC_OFFSET]);
    let found = u16::from_be_bytes([bytes[CRC_OFFSET], bytes[CRC_OFFSET + 1]]);
    if found != expected {
        return Err(FrameError::Corrupt { found, expected });
    }
    let be16 = |i: usize| [bytes[i], bytes[i + 1]];
    let be32 = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let frame = LoraFrame {
        version: bytes[1],
        node_id: u16::from_be_bytes(be16(2)),
        seq: u16::from_be_bytes(be16(4)),
        temp_centi_c: i16::from_be_bytes(be16(6)),
        lat_e7: i32::from_be_bytes(be32(8)),
        lon_e7: i32::from_be_bytes(be32(12)),
        battery_mv: u16::from_be_bytes(be16(16)),
    };
    frame.validate()?;
    Ok(frame)
}
