//! Six-field frame protocol: header, length, address, type, instruction/data, end.
//!
//! Every frame starts with `0xA5`, carries its total byte count in the second
//! byte and ends with `0x0D`. Sensor-layer frames (serial link between the
//! coordinator and the gateway) carry a terminal address; network and
//! application frames carry a fixed sequence of typed sections instead.
//!
//! Field widths: light values are two bytes big-endian, every other value is
//! one byte. Temperatures are signed (two's complement). The resulting frame
//! lengths are listed in [`layout`].

mod codec;
pub mod golden;
mod scan;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{Actuator, ActuatorBank};

pub use codec::{decode_frame, encode_frame, Codec, Layer, Terminator};
pub use scan::{frame_stream_scan, FrameScanner, ScanOutput};

/// Type codes and framing bytes.
pub mod codes {
    pub const HEADER: u8 = 0xA5;
    pub const END: u8 = 0x0D;
    pub const LINE_FEED: u8 = 0x0A;

    pub const QUERY_TEMPERATURE: u8 = 0x20;
    pub const QUERY_HUMIDITY: u8 = 0x21;
    pub const QUERY_LIGHT: u8 = 0x22;
    pub const QUERY_SOIL: u8 = 0x23;

    pub const READING_TEMPERATURE: u8 = 0x01;
    pub const READING_HUMIDITY: u8 = 0x02;
    pub const READING_LIGHT: u8 = 0x03;
    pub const READING_SOIL: u8 = 0x04;

    pub const SETPOINT_TEMPERATURE: u8 = 0x40;
    pub const SETPOINT_HUMIDITY: u8 = 0x41;
    pub const SETPOINT_LIGHT: u8 = 0x42;

    pub const AGGREGATE_TEMPERATURE: u8 = 0x60;
    pub const AGGREGATE_HUMIDITY: u8 = 0x61;
    pub const AGGREGATE_LIGHT: u8 = 0x62;
    pub const AGGREGATE_SOIL: u8 = 0x63;
}

/// Total frame lengths (with the single `0x0D` terminator).
pub mod layout {
    pub const SENSOR: usize = 6;
    pub const SENSOR_LIGHT: usize = 7;
    pub const SETPOINTS: usize = 9;
    pub const GEARS: usize = 15;
    pub const APP_DATA: usize = 24;
    pub const NET_SENSOR: usize = 37;

    pub const ALL: [usize; 6] = [SENSOR, SENSOR_LIGHT, SETPOINTS, GEARS, APP_DATA, NET_SENSOR];
}

/// Number of detecting terminals / sensing locations.
pub const LOCATIONS: usize = 6;

pub const TEMPERATURE_RANGE: (i32, i32) = (-10, 40);
pub const HUMIDITY_RANGE: (i32, i32) = (0, 100);
pub const LIGHT_RANGE: (i32, i32) = (0, 30_000);
/// Light setpoints travel as one byte in units of this many lux.
pub const SETPOINT_LIGHT_UNIT: u32 = 100;

pub const MIN_ADDRESS: u8 = 0x01;
pub const MAX_DETECTING_ADDRESS: u8 = 0x06;
pub const PRIMARY_EXECUTIVE: u8 = 0x07;
pub const MAX_ADDRESS: u8 = 0x08;

/// Measured quantities of a detecting terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Temperature,
    Humidity,
    Light,
    Soil,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Quantity::Temperature, Quantity::Humidity, Quantity::Light, Quantity::Soil];

    pub const fn query_code(self) -> u8 {
        codes::QUERY_TEMPERATURE + self as u8
    }

    pub const fn reading_code(self) -> u8 {
        codes::READING_TEMPERATURE + self as u8
    }

    pub const fn aggregate_code(self) -> u8 {
        codes::AGGREGATE_TEMPERATURE + self as u8
    }

    pub fn from_query_code(code: u8) -> Option<Self> {
        code.checked_sub(codes::QUERY_TEMPERATURE).and_then(|i| Self::ALL.get(i as usize).copied())
    }

    pub fn from_reading_code(code: u8) -> Option<Self> {
        code.checked_sub(codes::READING_TEMPERATURE).and_then(|i| Self::ALL.get(i as usize).copied())
    }

    pub const fn name(self) -> &'static str {
        match self {
            Quantity::Temperature => "temperature",
            Quantity::Humidity => "humidity",
            Quantity::Light => "light",
            Quantity::Soil => "soil",
        }
    }
}

/// Instruction payload of a sensor-layer instruction frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    /// Pull a reading from a detecting terminal; `arg` is the opaque query byte.
    Query { quantity: Quantity, arg: u8 },
    /// Drive one actuator to a gear.
    Set { actuator: Actuator, gear: u8 },
}

impl Command {
    pub const fn type_code(&self) -> u8 {
        match self {
            Command::Query { quantity, .. } => quantity.query_code(),
            Command::Set { actuator, .. } => actuator.instruction_code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorInstruction {
    pub address: u8,
    pub command: Command,
}

impl SensorInstruction {
    pub const fn set(address: u8, actuator: Actuator, gear: u8) -> Self {
        Self { address, command: Command::Set { actuator, gear } }
    }

    pub const fn query(address: u8, quantity: Quantity, arg: u8) -> Self {
        Self { address, command: Command::Query { quantity, arg } }
    }
}

/// A single per-location sensor reading as carried on the sensor layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reading {
    Temperature(i8),
    Humidity(u8),
    Light(u16),
    /// Digital soil state; the sensor drives its output high when dry.
    Soil { dry: bool },
}

impl Reading {
    pub const fn quantity(&self) -> Quantity {
        match self {
            Reading::Temperature(_) => Quantity::Temperature,
            Reading::Humidity(_) => Quantity::Humidity,
            Reading::Light(_) => Quantity::Light,
            Reading::Soil { .. } => Quantity::Soil,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Report {
    Reading(Reading),
    Status { actuator: Actuator, gear: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorData {
    pub address: u8,
    pub report: Report,
}

impl SensorData {
    pub const fn reading(address: u8, reading: Reading) -> Self {
        Self { address, report: Report::Reading(reading) }
    }

    pub const fn status(address: u8, actuator: Actuator, gear: u8) -> Self {
        Self { address, report: Report::Status { actuator, gear } }
    }
}

/// Per-location readings of all six detecting terminals (network layer data frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LocationReadings {
    pub temperature: [i8; LOCATIONS],
    pub humidity: [u8; LOCATIONS],
    pub light: [u16; LOCATIONS],
    pub soil_dry: [bool; LOCATIONS],
}

impl LocationReadings {
    pub fn mean_temperature(&self) -> f64 {
        self.temperature.iter().map(|&t| f64::from(t)).sum::<f64>() / LOCATIONS as f64
    }

    pub fn mean_humidity(&self) -> f64 {
        self.humidity.iter().map(|&h| f64::from(h)).sum::<f64>() / LOCATIONS as f64
    }

    pub fn mean_light(&self) -> f64 {
        self.light.iter().map(|&l| f64::from(l)).sum::<f64>() / LOCATIONS as f64
    }

    pub fn dry_fraction(&self) -> f64 {
        self.soil_dry.iter().filter(|&&d| d).count() as f64 / LOCATIONS as f64
    }
}

/// Application-layer data frame: actuator gears plus the six-location averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppData {
    pub gears: ActuatorBank,
    pub temperature: i8,
    pub humidity: u8,
    pub light: u16,
    pub soil_dry: bool,
}

impl AppData {
    /// Averages rounded half away from zero; soil is the rounded mean of the dry flags.
    pub fn from_readings(gears: ActuatorBank, readings: &LocationReadings) -> Self {
        Self {
            gears,
            temperature: readings.mean_temperature().round() as i8,
            humidity: readings.mean_humidity().round() as u8,
            light: readings.mean_light().round() as u16,
            soil_dry: readings.dry_fraction().round() >= 1.0,
        }
    }
}

/// Automatic-mode setpoints as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SetpointFrame {
    pub temperature: i8,
    pub humidity: u8,
    /// Light setpoint in units of [`SETPOINT_LIGHT_UNIT`] lux.
    pub light: u8,
}

impl SetpointFrame {
    pub fn light_lux(&self) -> u32 {
        u32::from(self.light) * SETPOINT_LIGHT_UNIT
    }
}

/// Frame kinds, one per protocol table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    SensorInstruction,
    SensorData,
    NetSensorData,
    NetExecutorStatus,
    NetInstruction,
    AppData,
    AppAutoInstruction,
    AppManualInstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    SensorInstruction(SensorInstruction),
    SensorData(SensorData),
    NetSensorData(LocationReadings),
    NetExecutorStatus(ActuatorBank),
    NetInstruction(ActuatorBank),
    AppData(AppData),
    AppAutoInstruction(SetpointFrame),
    AppManualInstruction(ActuatorBank),
}

impl Frame {
    pub const fn kind(&self) -> FrameKind {
        match self {
            Frame::SensorInstruction(_) => FrameKind::SensorInstruction,
            Frame::SensorData(_) => FrameKind::SensorData,
            Frame::NetSensorData(_) => FrameKind::NetSensorData,
            Frame::NetExecutorStatus(_) => FrameKind::NetExecutorStatus,
            Frame::NetInstruction(_) => FrameKind::NetInstruction,
            Frame::AppData(_) => FrameKind::AppData,
            Frame::AppAutoInstruction(_) => FrameKind::AppAutoInstruction,
            Frame::AppManualInstruction(_) => FrameKind::AppManualInstruction,
        }
    }
}

fn write_gears(f: &mut fmt::Formatter<'_>, bank: &ActuatorBank) -> fmt::Result {
    for (actuator, gear) in bank.iter() {
        write!(f, " {actuator}={gear}")?;
    }
    Ok(())
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::SensorInstruction(SensorInstruction { address, command }) => match command {
                Command::Set { actuator, gear } => {
                    write!(f, "SensorInstruction addr={address:02X} {actuator} gear={gear}")
                }
                Command::Query { quantity, arg } => write!(
                    f,
                    "SensorInstruction addr={address:02X} query {} arg={arg:02X}",
                    quantity.name()
                ),
            },
            Frame::SensorData(SensorData { address, report }) => match report {
                Report::Status { actuator, gear } => {
                    write!(f, "SensorData addr={address:02X} {actuator} status gear={gear}")
                }
                Report::Reading(reading) => {
                    write!(f, "SensorData addr={address:02X} ")?;
                    match reading {
                        Reading::Temperature(t) => write!(f, "temperature={t}C"),
                        Reading::Humidity(h) => write!(f, "humidity={h}%"),
                        Reading::Light(l) => write!(f, "light={l}lx"),
                        Reading::Soil { dry } => write!(f, "soil={}", if *dry { "dry" } else { "wet" }),
                    }
                }
            },
            Frame::NetSensorData(r) => write!(
                f,
                "NetSensorData temperature={:?} humidity={:?} light={:?} soil_dry={:?}",
                r.temperature,
                r.humidity,
                r.light,
                r.soil_dry.map(u8::from)
            ),
            Frame::NetExecutorStatus(bank) => {
                f.write_str("NetExecutorStatus")?;
                write_gears(f, bank)
            }
            Frame::NetInstruction(bank) => {
                f.write_str("NetInstruction")?;
                write_gears(f, bank)
            }
            Frame::AppManualInstruction(bank) => {
                f.write_str("AppManualInstruction")?;
                write_gears(f, bank)
            }
            Frame::AppData(d) => {
                f.write_str("AppData")?;
                write_gears(f, &d.gears)?;
                write!(
                    f,
                    " temperature={}C humidity={}% light={}lx soil={}",
                    d.temperature,
                    d.humidity,
                    d.light,
                    if d.soil_dry { "dry" } else { "wet" }
                )
            }
            Frame::AppAutoInstruction(s) => write!(
                f,
                "AppAutoInstruction temperature={}C humidity={}% light={}lx",
                s.temperature,
                s.humidity,
                s.light_lux()
            ),
        }
    }
}

/// A field value outside its declared range.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("RangeError: {field}={value} outside {min}..={max}")]
pub struct RangeError {
    pub field: &'static str,
    pub value: i32,
    pub min: i32,
    pub max: i32,
}

impl RangeError {
    pub(crate) fn check(field: &'static str, value: i32, (min, max): (i32, i32)) -> Result<(), Self> {
        if (min..=max).contains(&value) {
            Ok(())
        } else {
            Err(Self { field, value, min, max })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("BadHeader: expected 0xA5, found {found:#04x}")]
    BadHeader { found: u8 },
    #[error("BadLength: declared {declared}, actual {actual}")]
    BadLength { declared: usize, actual: usize },
    #[error("BadEnd: expected 0x0D terminator, found {found:#04x}")]
    BadEnd { found: u8 },
    #[error("UnknownType: {code:#04x} at offset {offset}")]
    UnknownType { code: u8, offset: usize },
    #[error(transparent)]
    Range(#[from] RangeError),
}

/// Error taxonomy names, used for coverage accounting and CLI output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    BadHeader,
    BadLength,
    BadEnd,
    UnknownType,
    RangeError,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] =
        [ErrorKind::BadHeader, ErrorKind::BadLength, ErrorKind::BadEnd, ErrorKind::UnknownType, ErrorKind::RangeError];

    pub const fn name(self) -> &'static str {
        match self {
            ErrorKind::BadHeader => "BadHeader",
            ErrorKind::BadLength => "BadLength",
            ErrorKind::BadEnd => "BadEnd",
            ErrorKind::UnknownType => "UnknownType",
            ErrorKind::RangeError => "RangeError",
        }
    }
}

impl DecodeError {
    pub const fn kind(&self) -> ErrorKind {
        match self {
            DecodeError::BadHeader { .. } => ErrorKind::BadHeader,
            DecodeError::BadLength { .. } => ErrorKind::BadLength,
            DecodeError::BadEnd { .. } => ErrorKind::BadEnd,
            DecodeError::UnknownType { .. } => ErrorKind::UnknownType,
            DecodeError::Range(_) => ErrorKind::RangeError,
        }
    }
}

/// Formats bytes as space-separated upper-case hex, e.g. `A5 06 07 30 01 0D`.
pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

/// Parses hex with optional whitespace, e.g. `A5060730010D` or `a5 06 07 30 01 0d`.
pub fn parse_hex(text: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = text.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
    if digits.len() % 2 != 0 {
        return None;
    }
    digits
        .chunks(2)
        .map(|pair| {
            let s = std::str::from_utf8(pair).ok()?;
            u8::from_str_radix(s, 16).ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_helpers() {
        assert_eq!(parse_hex("A5060730010D"), Some(vec![0xA5, 0x06, 0x07, 0x30, 0x01, 0x0D]));
        assert_eq!(parse_hex("a5 06\n07"), Some(vec![0xA5, 0x06, 0x07]));
        assert_eq!(parse_hex("A5 0"), None);
        assert_eq!(parse_hex("ZZ"), None);
        assert_eq!(to_hex(&[0xA5, 0x0D]), "A5 0D");
    }

    #[test]
    fn app_data_rounds_half_away_from_zero() {
        let readings = LocationReadings {
            temperature: [18, 19, 20, 21, 22, 23],
            humidity: [60; 6],
            light: [100, 100, 100, 101, 101, 101],
            soil_dry: [true, true, true, false, false, false],
        };
        let d = AppData::from_readings(ActuatorBank::OFF, &readings);
        assert_eq!(d.temperature, 21);
        assert_eq!(d.light, 101);
        assert!(d.soil_dry);

        let negative = LocationReadings { temperature: [-3, -2, -3, -2, -3, -2], ..readings };
        assert_eq!(AppData::from_readings(ActuatorBank::OFF, &negative).temperature, -3);
    }

    #[test]
    fn quantity_codes() {
        assert_eq!(Quantity::Temperature.query_code(), 0x20);
        assert_eq!(Quantity::Soil.reading_code(), 0x04);
        assert_eq!(Quantity::Light.aggregate_code(), 0x62);
        assert_eq!(Quantity::from_query_code(0x23), Some(Quantity::Soil));
        assert_eq!(Quantity::from_query_code(0x24), None);
        assert_eq!(Quantity::from_reading_code(0x00), None);
    }
}
