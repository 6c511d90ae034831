use crate::actuator::{Actuator, ActuatorBank};

use super::{
    codes, layout, AppData, Command, DecodeError, Frame, LocationReadings, Quantity, RangeError, Reading, Report,
    SensorData, SensorInstruction, SetpointFrame, HUMIDITY_RANGE, LIGHT_RANGE, LOCATIONS, MAX_ADDRESS, MIN_ADDRESS,
    TEMPERATURE_RANGE,
};

/// Frame terminator. Tables use a single `0x0D`; serial links may append `0x0A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Terminator {
    #[default]
    Cr,
    CrLf,
}

impl Terminator {
    const fn extra(self) -> usize {
        match self {
            Terminator::Cr => 0,
            Terminator::CrLf => 1,
        }
    }
}

/// Link on which a frame travels.
///
/// The network instruction and the application manual instruction share one
/// byte layout; the layer decides which kind a decoded frame becomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layer {
    Sensor,
    #[default]
    Network,
    Application,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Codec {
    pub terminator: Terminator,
    pub layer: Layer,
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, RangeError> {
    Codec::default().encode(frame)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, DecodeError> {
    Codec::default().decode(bytes)
}

fn check_address(address: u8) -> Result<(), RangeError> {
    RangeError::check("address", address.into(), (MIN_ADDRESS.into(), MAX_ADDRESS.into()))
}

fn check_gear(actuator: Actuator, gear: u8) -> Result<(), RangeError> {
    RangeError::check(actuator.name(), gear.into(), (0, actuator.max_gear().into()))
}

fn check_bank(bank: &ActuatorBank) -> Result<(), RangeError> {
    bank.iter().try_for_each(|(a, g)| check_gear(a, g))
}

fn check_temperature(t: i8) -> Result<(), RangeError> {
    RangeError::check("temperature", t.into(), TEMPERATURE_RANGE)
}

fn check_humidity(h: u8) -> Result<(), RangeError> {
    RangeError::check("humidity", h.into(), HUMIDITY_RANGE)
}

fn check_light(l: u16) -> Result<(), RangeError> {
    RangeError::check("light", l.into(), LIGHT_RANGE)
}

fn check_flag(field: &'static str, value: u8) -> Result<bool, RangeError> {
    RangeError::check(field, value.into(), (0, 1))?;
    Ok(value == 1)
}

impl Codec {
    pub const fn new(terminator: Terminator, layer: Layer) -> Self {
        Self { terminator, layer }
    }

    pub const fn for_layer(layer: Layer) -> Self {
        Self { terminator: Terminator::Cr, layer }
    }

    /// Every total length a frame can have under this codec.
    pub fn valid_lengths(&self) -> impl Iterator<Item = usize> {
        let extra = self.terminator.extra();
        layout::ALL.into_iter().map(move |l| l + extra)
    }

    pub fn encode(&self, frame: &Frame) -> Result<Vec<u8>, RangeError> {
        let mut body = Vec::with_capacity(layout::NET_SENSOR);
        match frame {
            Frame::SensorInstruction(SensorInstruction { address, command }) => {
                check_address(*address)?;
                let value = match *command {
                    Command::Query { arg, .. } => arg,
                    Command::Set { actuator, gear } => {
                        check_gear(actuator, gear)?;
                        gear
                    }
                };
                body.extend_from_slice(&[*address, command.type_code(), value]);
            }
            Frame::SensorData(SensorData { address, report }) => {
                check_address(*address)?;
                body.push(*address);
                match *report {
                    Report::Status { actuator, gear } => {
                        check_gear(actuator, gear)?;
                        body.extend_from_slice(&[actuator.status_code(), gear]);
                    }
                    Report::Reading(reading) => {
                        body.push(reading.quantity().reading_code());
                        match reading {
                            Reading::Temperature(t) => {
                                check_temperature(t)?;
                                body.push(t as u8);
                            }
                            Reading::Humidity(h) => {
                                check_humidity(h)?;
                                body.push(h);
                            }
                            Reading::Light(l) => {
                                check_light(l)?;
                                body.extend_from_slice(&l.to_be_bytes());
                            }
                            Reading::Soil { dry } => body.push(u8::from(dry)),
                        }
                    }
                }
            }
            Frame::NetSensorData(readings) => encode_location_readings(readings, &mut body)?,
            Frame::NetExecutorStatus(bank) => {
                check_bank(bank)?;
                for (actuator, gear) in bank.iter() {
                    body.extend_from_slice(&[actuator.status_code(), gear]);
                }
            }
            Frame::NetInstruction(bank) | Frame::AppManualInstruction(bank) => {
                check_bank(bank)?;
                for (actuator, gear) in bank.iter() {
                    body.extend_from_slice(&[actuator.instruction_code(), gear]);
                }
            }
            Frame::AppData(data) => {
                check_bank(&data.gears)?;
                check_temperature(data.temperature)?;
                check_humidity(data.humidity)?;
                check_light(data.light)?;
                for (actuator, gear) in data.gears.iter() {
                    body.extend_from_slice(&[actuator.status_code(), gear]);
                }
                body.extend_from_slice(&[codes::AGGREGATE_TEMPERATURE, data.temperature as u8]);
                body.extend_from_slice(&[codes::AGGREGATE_HUMIDITY, data.humidity]);
                body.push(codes::AGGREGATE_LIGHT);
                body.extend_from_slice(&data.light.to_be_bytes());
                body.extend_from_slice(&[codes::AGGREGATE_SOIL, u8::from(data.soil_dry)]);
            }
            Frame::AppAutoInstruction(s) => {
                check_temperature(s.temperature)?;
                check_humidity(s.humidity)?;
                body.extend_from_slice(&[
                    codes::SETPOINT_TEMPERATURE,
                    s.temperature as u8,
                    codes::SETPOINT_HUMIDITY,
                    s.humidity,
                    codes::SETPOINT_LIGHT,
                    s.light,
                ]);
            }
        }
        Ok(self.wrap(&body))
    }

    fn wrap(&self, body: &[u8]) -> Vec<u8> {
        let total = body.len() + 3 + self.terminator.extra();
        let mut out = Vec::with_capacity(total);
        out.push(codes::HEADER);
        out.push(total as u8);
        out.extend_from_slice(body);
        out.push(codes::END);
        if self.terminator == Terminator::CrLf {
            out.push(codes::LINE_FEED);
        }
        out
    }

    /// Validates header, length, terminator, type codes and field ranges, in that order.
    pub fn decode(&self, bytes: &[u8]) -> Result<Frame, DecodeError> {
        let first = *bytes.first().ok_or(DecodeError::BadLength { declared: 0, actual: 0 })?;
        if first != codes::HEADER {
            return Err(DecodeError::BadHeader { found: first });
        }
        let declared = match bytes.get(1) {
            Some(&l) => usize::from(l),
            None => return Err(DecodeError::BadLength { declared: 0, actual: bytes.len() }),
        };
        if declared != bytes.len() {
            return Err(DecodeError::BadLength { declared, actual: bytes.len() });
        }
        let trailer = 1 + self.terminator.extra();
        if declared < 2 + trailer {
            return Err(DecodeError::BadLength { declared, actual: bytes.len() });
        }
        let end = bytes.len() - trailer;
        if bytes[end] != codes::END {
            return Err(DecodeError::BadEnd { found: bytes[end] });
        }
        if self.terminator == Terminator::CrLf && bytes[end + 1] != codes::LINE_FEED {
            return Err(DecodeError::BadEnd { found: bytes[end + 1] });
        }
        let body = Body { bytes: &bytes[..end], start: 2 };
        let frame_len = bytes.len() - self.terminator.extra();
        match frame_len {
            layout::SENSOR | layout::SENSOR_LIGHT => decode_sensor_layer(body),
            layout::SETPOINTS => decode_setpoints(body),
            layout::GEARS => decode_gears(body, self.layer),
            layout::APP_DATA => decode_app_data(body),
            layout::NET_SENSOR => decode_location_readings(body),
            _ => Err(DecodeError::BadLength { declared, actual: bytes.len() }),
        }
    }
}

/// Frame bytes up to (not including) the terminator, with absolute offsets.
#[derive(Clone, Copy)]
struct Body<'a> {
    bytes: &'a [u8],
    start: usize,
}

impl Body<'_> {
    fn at(&self, offset: usize) -> u8 {
        self.bytes[offset]
    }

    fn len(&self) -> usize {
        self.bytes.len() - self.start
    }

    fn expect_type(&self, offset: usize, code: u8) -> Result<(), DecodeError> {
        if self.at(offset) == code {
            Ok(())
        } else {
            Err(DecodeError::UnknownType { code: self.at(offset), offset })
        }
    }

    fn u16_at(&self, offset: usize) -> u16 {
        u16::from_be_bytes([self.at(offset), self.at(offset + 1)])
    }
}

fn decode_sensor_layer(body: Body<'_>) -> Result<Frame, DecodeError> {
    let address = body.at(2);
    let code = body.at(3);
    let unknown = DecodeError::UnknownType { code, offset: 3 };
    let frame = if body.len() == 4 {
        // Only the light reading has a two-byte value on the sensor layer.
        if code != codes::READING_LIGHT {
            return Err(unknown);
        }
        let light = body.u16_at(4);
        check_light(light)?;
        Frame::SensorData(SensorData::reading(address, Reading::Light(light)))
    } else {
        let value = body.at(4);
        if let Some(quantity) = Quantity::from_query_code(code) {
            Frame::SensorInstruction(SensorInstruction::query(address, quantity, value))
        } else if let Some(actuator) = Actuator::from_instruction_code(code) {
            check_gear(actuator, value)?;
            Frame::SensorInstruction(SensorInstruction::set(address, actuator, value))
        } else if let Some(actuator) = Actuator::from_status_code(code) {
            check_gear(actuator, value)?;
            Frame::SensorData(SensorData::status(address, actuator, value))
        } else {
            let reading = match Quantity::from_reading_code(code) {
                Some(Quantity::Temperature) => {
                    let t = value as i8;
                    check_temperature(t)?;
                    Reading::Temperature(t)
                }
                Some(Quantity::Humidity) => {
                    check_humidity(value)?;
                    Reading::Humidity(value)
                }
                Some(Quantity::Soil) => Reading::Soil { dry: check_flag("soil", value)? },
                Some(Quantity::Light) | None => return Err(unknown),
            };
            Frame::SensorData(SensorData::reading(address, reading))
        }
    };
    check_address(address)?;
    Ok(frame)
}

fn decode_setpoints(body: Body<'_>) -> Result<Frame, DecodeError> {
    body.expect_type(2, codes::SETPOINT_TEMPERATURE)?;
    body.expect_type(4, codes::SETPOINT_HUMIDITY)?;
    body.expect_type(6, codes::SETPOINT_LIGHT)?;
    let temperature = body.at(3) as i8;
    let humidity = body.at(5);
    check_temperature(temperature)?;
    check_humidity(humidity)?;
    Ok(Frame::AppAutoInstruction(SetpointFrame { temperature, humidity, light: body.at(7) }))
}

fn read_bank(body: Body<'_>, first: usize, code_of: fn(Actuator) -> u8) -> Result<ActuatorBank, DecodeError> {
    let mut bank = ActuatorBank::OFF;
    for (i, actuator) in Actuator::ALL.into_iter().enumerate() {
        let offset = first + 2 * i;
        body.expect_type(offset, code_of(actuator))?;
        bank.set(actuator, body.at(offset + 1));
    }
    Ok(bank)
}

fn decode_gears(body: Body<'_>, layer: Layer) -> Result<Frame, DecodeError> {
    let frame = match body.at(2) {
        0x30 => {
            let bank = read_bank(body, 2, Actuator::instruction_code)?;
            match layer {
                Layer::Application => Frame::AppManualInstruction(bank),
                Layer::Sensor | Layer::Network => Frame::NetInstruction(bank),
            }
        }
        0x50 => Frame::NetExecutorStatus(read_bank(body, 2, Actuator::status_code)?),
        code => return Err(DecodeError::UnknownType { code, offset: 2 }),
    };
    let bank = match &frame {
        Frame::AppManualInstruction(b) | Frame::NetInstruction(b) | Frame::NetExecutorStatus(b) => b,
        _ => unreachable!(),
    };
    check_bank(bank)?;
    Ok(frame)
}

fn decode_app_data(body: Body<'_>) -> Result<Frame, DecodeError> {
    let gears = read_bank(body, 2, Actuator::status_code)?;
    body.expect_type(14, codes::AGGREGATE_TEMPERATURE)?;
    body.expect_type(16, codes::AGGREGATE_HUMIDITY)?;
    body.expect_type(18, codes::AGGREGATE_LIGHT)?;
    body.expect_type(21, codes::AGGREGATE_SOIL)?;
    check_bank(&gears)?;
    let temperature = body.at(15) as i8;
    let humidity = body.at(17);
    let light = body.u16_at(19);
    check_temperature(temperature)?;
    check_humidity(humidity)?;
    check_light(light)?;
    let soil_dry = check_flag("soil", body.at(22))?;
    Ok(Frame::AppData(AppData { gears, temperature, humidity, light, soil_dry }))
}

// Section offsets within a network sensor data frame.
const NET_TEMPERATURE: usize = 2;
const NET_HUMIDITY: usize = NET_TEMPERATURE + 1 + LOCATIONS;
const NET_LIGHT: usize = NET_HUMIDITY + 1 + LOCATIONS;
const NET_SOIL: usize = NET_LIGHT + 1 + 2 * LOCATIONS;

fn encode_location_readings(r: &LocationReadings, body: &mut Vec<u8>) -> Result<(), RangeError> {
    r.temperature.iter().try_for_each(|&t| check_temperature(t))?;
    r.humidity.iter().try_for_each(|&h| check_humidity(h))?;
    r.light.iter().try_for_each(|&l| check_light(l))?;
    body.push(codes::AGGREGATE_TEMPERATURE);
    body.extend(r.temperature.iter().map(|&t| t as u8));
    body.push(codes::AGGREGATE_HUMIDITY);
    body.extend_from_slice(&r.humidity);
    body.push(codes::AGGREGATE_LIGHT);
    for l in r.light {
        body.extend_from_slice(&l.to_be_bytes());
    }
    body.push(codes::AGGREGATE_SOIL);
    body.extend(r.soil_dry.iter().map(|&d| u8::from(d)));
    Ok(())
}

fn decode_location_readings(body: Body<'_>) -> Result<Frame, DecodeError> {
    body.expect_type(NET_TEMPERATURE, codes::AGGREGATE_TEMPERATURE)?;
    body.expect_type(NET_HUMIDITY, codes::AGGREGATE_HUMIDITY)?;
    body.expect_type(NET_LIGHT, codes::AGGREGATE_LIGHT)?;
    body.expect_type(NET_SOIL, codes::AGGREGATE_SOIL)?;
    let mut r = LocationReadings::default();
    for i in 0..LOCATIONS {
        let t = body.at(NET_TEMPERATURE + 1 + i) as i8;
        check_temperature(t)?;
        r.temperature[i] = t;
        let h = body.at(NET_HUMIDITY + 1 + i);
        check_humidity(h)?;
        r.humidity[i] = h;
        let l = body.u16_at(NET_LIGHT + 1 + 2 * i);
        check_light(l)?;
        r.light[i] = l;
        r.soil_dry[i] = check_flag("soil", body.at(NET_SOIL + 1 + i))?;
    }
    Ok(Frame::NetSensorData(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{parse_hex, ErrorKind};

    fn hex(s: &str) -> Vec<u8> {
        parse_hex(s).unwrap()
    }

    #[test]
    fn sensor_instruction_examples() {
        let led = Frame::SensorInstruction(SensorInstruction::set(0x07, Actuator::Led, 1));
        assert_eq!(encode_frame(&led).unwrap(), hex("A5 06 07 30 01 0D"));
        let heat_off = Frame::SensorInstruction(SensorInstruction::set(0x07, Actuator::Heating, 0));
        assert_eq!(encode_frame(&heat_off).unwrap(), hex("A5 06 07 31 00 0D"));
        assert_eq!(
            decode_frame(&hex("A5 06 01 20 10 0D")).unwrap(),
            Frame::SensorInstruction(SensorInstruction::query(0x01, Quantity::Temperature, 0x10))
        );
    }

    #[test]
    fn setpoint_frame_has_declared_length_nine() {
        let f = Frame::AppAutoInstruction(SetpointFrame { temperature: 0x19, humidity: 0x32, light: 0x64 });
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes, hex("A5 09 40 19 41 32 42 64 0D"));
        assert_eq!(bytes[1] as usize, bytes.len());
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn all_off_instruction_has_zero_payload() {
        let bytes = encode_frame(&Frame::NetInstruction(ActuatorBank::OFF)).unwrap();
        assert_eq!(bytes, hex("A5 0F 30 00 31 00 32 00 33 00 34 00 35 00 0D"));
        for i in 0..6 {
            assert_eq!(bytes[3 + 2 * i], 0);
        }
    }

    #[test]
    fn decode_error_examples() {
        assert_eq!(decode_frame(&hex("A6 06 07 30 01 0D")), Err(DecodeError::BadHeader { found: 0xA6 }));
        assert_eq!(decode_frame(&hex("A5 07 07 30 01 0D")), Err(DecodeError::BadLength { declared: 7, actual: 6 }));
        assert_eq!(decode_frame(&hex("A5 06 07 30 01 0A")), Err(DecodeError::BadEnd { found: 0x0A }));
        assert_eq!(decode_frame(&hex("A5 06 07 99 01 0D")), Err(DecodeError::UnknownType { code: 0x99, offset: 3 }));
        assert_eq!(decode_frame(&hex("A5 06 07 30 04 0D")).unwrap_err().kind(), ErrorKind::RangeError);
        assert_eq!(decode_frame(&hex("A5 06 09 30 01 0D")).unwrap_err().kind(), ErrorKind::RangeError);
        assert_eq!(decode_frame(&[]).unwrap_err().kind(), ErrorKind::BadLength);
        assert_eq!(decode_frame(&[0xA5]).unwrap_err().kind(), ErrorKind::BadLength);
        assert_eq!(decode_frame(&hex("A5 08 07 30 01 00 00 0D")).unwrap_err().kind(), ErrorKind::BadLength);
        assert_eq!(decode_frame(&hex("A5 02")).unwrap_err().kind(), ErrorKind::BadLength);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let bad = Frame::SensorInstruction(SensorInstruction::set(0x07, Actuator::Led, 9));
        assert_eq!(encode_frame(&bad).unwrap_err().field, "LED");
        let hot = Frame::SensorData(SensorData::reading(0x01, Reading::Temperature(41)));
        assert!(encode_frame(&hot).is_err());
        let addr = Frame::SensorData(SensorData::reading(0x00, Reading::Humidity(50)));
        assert_eq!(encode_frame(&addr).unwrap_err().field, "address");
    }

    #[test]
    fn sensor_readings_layouts() {
        let t = Frame::SensorData(SensorData::reading(0x01, Reading::Temperature(20)));
        assert_eq!(encode_frame(&t).unwrap(), hex("A5 06 01 01 14 0D"));
        let cold = Frame::SensorData(SensorData::reading(0x06, Reading::Temperature(-10)));
        assert_eq!(encode_frame(&cold).unwrap(), hex("A5 06 06 01 F6 0D"));
        let light = Frame::SensorData(SensorData::reading(0x02, Reading::Light(30_000)));
        assert_eq!(encode_frame(&light).unwrap(), hex("A5 07 02 03 75 30 0D"));
        let soil = Frame::SensorData(SensorData::reading(0x03, Reading::Soil { dry: true }));
        assert_eq!(encode_frame(&soil).unwrap(), hex("A5 06 03 04 01 0D"));
        for f in [t, cold, light, soil] {
            assert_eq!(decode_frame(&encode_frame(&f).unwrap()).unwrap(), f);
        }
    }

    #[test]
    fn shared_instruction_layout_depends_on_layer() {
        let bank = ActuatorBank::OFF.with(Actuator::Cooling, 4);
        let manual = Frame::AppManualInstruction(bank);
        let bytes = encode_frame(&manual).unwrap();
        assert_eq!(bytes, encode_frame(&Frame::NetInstruction(bank)).unwrap());
        assert_eq!(&bytes[6..8], &[0x32, 0x04]);
        assert_eq!(Codec::for_layer(Layer::Application).decode(&bytes).unwrap(), manual);
        assert_eq!(decode_frame(&bytes).unwrap(), Frame::NetInstruction(bank));
    }

    #[test]
    fn computed_lengths() {
        let net = encode_frame(&Frame::NetSensorData(LocationReadings::default())).unwrap();
        assert_eq!(net.len(), 37);
        assert_eq!(net[1], 0x25);
        let status = encode_frame(&Frame::NetExecutorStatus(ActuatorBank::OFF)).unwrap();
        assert_eq!(status[1], 0x0F);
        let app = encode_frame(&Frame::AppData(AppData::default())).unwrap();
        assert_eq!(app[1], 0x18);
    }

    #[test]
    fn net_sensor_section_offsets() {
        let r = LocationReadings {
            temperature: [20; 6],
            humidity: [55; 6],
            light: [0x1234; 6],
            soil_dry: [false, true, false, false, false, false],
        };
        let bytes = encode_frame(&Frame::NetSensorData(r)).unwrap();
        assert_eq!(&bytes[2..9], &[0x60, 0x14, 0x14, 0x14, 0x14, 0x14, 0x14]);
        assert_eq!(bytes[9], 0x61);
        assert_eq!(&bytes[16..19], &[0x62, 0x12, 0x34]);
        assert_eq!(&bytes[29..36], &[0x63, 0, 1, 0, 0, 0, 0]);
        assert_eq!(decode_frame(&bytes).unwrap(), Frame::NetSensorData(r));
    }

    #[test]
    fn crlf_terminator() {
        let codec = Codec::new(Terminator::CrLf, Layer::Sensor);
        let f = Frame::SensorInstruction(SensorInstruction::set(0x07, Actuator::Led, 1));
        let bytes = codec.encode(&f).unwrap();
        assert_eq!(bytes, hex("A5 07 07 30 01 0D 0A"));
        assert_eq!(codec.decode(&bytes).unwrap(), f);
        assert_eq!(codec.decode(&hex("A5 07 07 30 01 0D 0D")), Err(DecodeError::BadEnd { found: 0x0D }));
    }
}
