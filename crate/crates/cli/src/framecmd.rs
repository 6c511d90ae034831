//! `greenhouse frame`: decode, encode, round-trip and golden-file checks.

use std::collections::BTreeMap;

use greenhouse_core::protocol::golden::{check_vector, parse_golden};
use greenhouse_core::protocol::{
    parse_hex, to_hex, AppData, Codec, Frame, Layer, LocationReadings, Quantity, Reading, SensorData,
    SensorInstruction, LOCATIONS, PRIMARY_EXECUTIVE,
};
use greenhouse_core::{Actuator, ActuatorBank};

use crate::scenario::Action;

/// Layer a protocol table belongs to.
pub fn table_layer(table: u8) -> Option<Layer> {
    match table {
        3 | 4 => Some(Layer::Sensor),
        5..=7 => Some(Layer::Network),
        8..=10 => Some(Layer::Application),
        _ => None,
    }
}

fn codec(layer: Option<Layer>) -> Codec {
    layer.map_or_else(Codec::default, Codec::for_layer)
}

fn bytes_of(hex: &str) -> Result<Vec<u8>, String> {
    parse_hex(hex).ok_or_else(|| format!("invalid hex: {hex:?}"))
}

/// Decodes and pretty-prints a frame. Decode failures come back as the
/// error kind name, e.g. `BadHeader`.
pub fn decode(hex: &str, layer: Option<Layer>) -> Result<String, String> {
    let bytes = bytes_of(hex)?;
    codec(layer).decode(&bytes).map(|f| f.to_string()).map_err(|e| e.kind().name().to_string())
}

/// Decodes, re-encodes and compares the bytes.
pub fn roundtrip(hex: &str, layer: Option<Layer>) -> Result<String, String> {
    let bytes = bytes_of(hex)?;
    let codec = codec(layer);
    let frame = codec.decode(&bytes).map_err(|e| e.kind().name().to_string())?;
    let again = codec.encode(&frame).map_err(|e| e.to_string())?;
    if again == bytes {
        Ok(format!("{frame}\n{}\nround-trip ok", to_hex(&again)))
    } else {
        Err(format!("round-trip mismatch: {} became {}", to_hex(&bytes), to_hex(&again)))
    }
}

/// Checks every vector of a golden file; returns the report and whether all passed.
pub fn verify(text: &str) -> Result<(String, bool), String> {
    let vectors = parse_golden(text)?;
    let mut report = String::new();
    let mut failed = 0;
    for v in &vectors {
        if let Err(e) = check_vector(v) {
            failed += 1;
            report.push_str(&format!("FAIL {e}\n"));
        }
    }
    report.push_str(&format!("{}/{} vectors ok", vectors.len() - failed, vectors.len()));
    Ok((report, failed == 0))
}

type Fields = BTreeMap<String, String>;

fn parse_fields(args: &[String]) -> Result<Fields, String> {
    let mut out = Fields::new();
    for a in args {
        let (k, v) = a.split_once('=').ok_or_else(|| format!("expected key=value, got {a:?}"))?;
        if out.insert(k.trim().to_ascii_lowercase(), v.trim().to_string()).is_some() {
            return Err(format!("field {k:?} given twice"));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    let parsed = match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(hex) => i64::from_str_radix(hex, 16).ok().and_then(|n| n.to_string().parse().ok()),
        None => value.parse().ok(),
    };
    parsed.ok_or_else(|| format!("{key}: cannot parse {value:?}"))
}

fn address(fields: &mut Fields, default: Option<u8>) -> Result<u8, String> {
    match fields.remove("addr") {
        Some(v) => u8::from_str_radix(v.trim_start_matches("0x"), 16).map_err(|_| format!("addr: bad hex {v:?}")),
        None => default.ok_or_else(|| "addr= is required".to_string()),
    }
}

fn soil_dry(value: &str) -> Result<bool, String> {
    match value {
        "dry" | "1" => Ok(true),
        "wet" | "0" => Ok(false),
        _ => Err(format!("soil: expected dry|wet, got {value:?}")),
    }
}

fn take_bank(fields: &mut Fields) -> Result<ActuatorBank, String> {
    let mut bank = ActuatorBank::OFF;
    let keys: Vec<String> = fields.keys().cloned().collect();
    for k in keys {
        if let Some(a) = Actuator::parse(&k) {
            let v = fields.remove(&k).expect("key listed");
            bank.set(a, num(&k, &v)?);
        }
    }
    Ok(bank)
}

fn take_list<T: std::str::FromStr + Copy + Default>(fields: &mut Fields, key: &str) -> Result<[T; LOCATIONS], String> {
    let mut out = [T::default(); LOCATIONS];
    let Some(v) = fields.remove(key) else {
        return Ok(out);
    };
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.len() == 1 {
        out = [num(key, items[0])?; LOCATIONS];
    } else if items.len() == LOCATIONS {
        for (slot, item) in out.iter_mut().zip(items) {
            *slot = num(key, item)?;
        }
    } else {
        return Err(format!("{key}: expected 1 or {LOCATIONS} comma-separated values"));
    }
    Ok(out)
}

fn take<T: std::str::FromStr>(fields: &mut Fields, key: &str) -> Result<Option<T>, String> {
    fields.remove(key).map(|v| num(key, &v)).transpose()
}

fn required<T: std::str::FromStr>(fields: &mut Fields, key: &str) -> Result<T, String> {
    take(fields, key)?.ok_or_else(|| format!("{key}= is required"))
}

/// Builds a frame of the given protocol table from `key=value` fields.
pub fn build_frame(table: u8, args: &[String]) -> Result<Frame, String> {
    let mut f = parse_fields(args)?;
    let frame = match table {
        3 => {
            if let Some(q) = f.remove("query") {
                let quantity = Quantity::ALL
                    .into_iter()
                    .find(|x| x.name().eq_ignore_ascii_case(&q))
                    .ok_or_else(|| format!("query: unknown quantity {q:?}"))?;
                let arg = take(&mut f, "arg")?.unwrap_or(0);
                let addr = address(&mut f, None)?;
                Frame::SensorInstruction(SensorInstruction::query(addr, quantity, arg))
            } else {
                let addr = address(&mut f, Some(PRIMARY_EXECUTIVE))?;
                let (a, g) = single_actuator(&mut f)?;
                Frame::SensorInstruction(SensorInstruction::set(addr, a, g))
            }
        }
        4 => {
            let reading = if let Some(t) = take(&mut f, "temperature")? {
                Some(Reading::Temperature(t))
            } else if let Some(h) = take(&mut f, "humidity")? {
                Some(Reading::Humidity(h))
            } else if let Some(l) = take(&mut f, "light")? {
                Some(Reading::Light(l))
            } else if let Some(s) = f.remove("soil") {
                Some(Reading::Soil { dry: soil_dry(&s)? })
            } else {
                None
            };
            match reading {
                Some(r) => Frame::SensorData(SensorData::reading(address(&mut f, None)?, r)),
                None => {
                    let addr = address(&mut f, Some(PRIMARY_EXECUTIVE))?;
                    let (a, g) = single_actuator(&mut f)?;
                    Frame::SensorData(SensorData::status(addr, a, g))
                }
            }
        }
        5 => {
            let soil: [u8; LOCATIONS] = take_list(&mut f, "soil_dry")?;
            Frame::NetSensorData(LocationReadings {
                temperature: take_list(&mut f, "temperature")?,
                humidity: take_list(&mut f, "humidity")?,
                light: take_list(&mut f, "light")?,
                soil_dry: soil.map(|s| s != 0),
            })
        }
        6 => Frame::NetExecutorStatus(take_bank(&mut f)?),
        7 => Frame::NetInstruction(take_bank(&mut f)?),
        8 => {
            let gears = take_bank(&mut f)?;
            let soil = f.remove("soil").map(|s| soil_dry(&s)).transpose()?.unwrap_or(false);
            Frame::AppData(AppData {
                gears,
                temperature: required(&mut f, "temperature")?,
                humidity: required(&mut f, "humidity")?,
                light: required(&mut f, "light")?,
                soil_dry: soil,
            })
        }
        9 => {
            let t = required(&mut f, "temperature")?;
            let h = required(&mut f, "humidity")?;
            let lux: u32 = required(&mut f, "light")?;
            Frame::AppAutoInstruction(Action::setpoint_frame(t, h, lux))
        }
        10 => Frame::AppManualInstruction(take_bank(&mut f)?),
        other => return Err(format!("no protocol table {other}; use 3..=10")),
    };
    if let Some(k) = f.keys().next() {
        return Err(format!("field {k:?} does not belong to table {table}"));
    }
    Ok(frame)
}

fn single_actuator(f: &mut Fields) -> Result<(Actuator, u8), String> {
    let bank_keys: Vec<String> = f.keys().filter(|k| Actuator::parse(k).is_some()).cloned().collect();
    let [key] = bank_keys.as_slice() else {
        return Err("exactly one actuator=gear field is required".into());
    };
    let a = Actuator::parse(key).expect("filtered");
    let v = f.remove(key).expect("key listed");
    Ok((a, num(key, &v)?))
}

/// Encodes fields as a frame of `table` and returns spaced hex.
pub fn encode(table: u8, args: &[String]) -> Result<String, String> {
    let layer = table_layer(table).ok_or_else(|| format!("no protocol table {table}; use 3..=10"))?;
    let frame = build_frame(table, args)?;
    let bytes = Codec::for_layer(layer).encode(&frame).map_err(|e| e.to_string())?;
    Ok(to_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode("A5060730010D", None).unwrap(), "SensorInstruction addr=07 LED gear=1");
        assert_eq!(decode("A6060730010D", None).unwrap_err(), "BadHeader");
        assert!(decode("A5 0", None).unwrap_err().starts_with("invalid hex"));
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(3, &args("led=1")).unwrap(), "A5 06 07 30 01 0D");
        assert_eq!(encode(3, &args("cool=4")).unwrap(), "A5 06 07 32 04 0D");
        assert_eq!(encode(4, &args("addr=07 heat=2")).unwrap(), "A5 06 07 51 02 0D");
        assert_eq!(encode(9, &args("temperature=25 humidity=60 light=10000")).unwrap(), "A5 09 40 19 41 3C 42 64 0D");
        assert_eq!(encode(3, &args("query=temperature addr=01 arg=0x10")).unwrap(), "A5 06 01 20 10 0D");
    }

    #[test]
    fn encoded_frames_decode_back() {
        for (table, fields) in [
            (5, "temperature=18,19,20,21,22,23 humidity=60 light=1000 soil_dry=0,1,0,0,0,0"),
            (6, "led=1 cooling=2"),
            (7, "cooling=4"),
            (8, "heat=3 temperature=21 humidity=60 light=1000 soil=wet"),
            (10, "cool=4"),
        ] {
            let hex = encode(table, &args(fields)).unwrap();
            let layer = table_layer(table);
            assert!(roundtrip(&hex, layer).is_ok(), "table {table}: {hex}");
        }
    }

    #[test]
    fn bad_fields() {
        assert!(encode(3, &args("led=1 cool=2")).is_err());
        assert!(encode(6, &args("led=1 bogus=2")).unwrap_err().contains("bogus"));
        assert!(encode(11, &args("")).is_err());
        assert!(encode(3, &args("led=9")).unwrap_err().contains("RangeError"));
    }

    #[test]
    fn verify_reports_failures() {
        let (report, ok) = verify("sensor | A5 06 07 30 01 0D | SensorInstruction addr=07 LED gear=2").unwrap();
        assert!(!ok);
        assert!(report.ends_with("0/1 vectors ok"));
    }
}
