//! Automatic-mode climate controller.
//!
//! Temperature and humidity are each driven by a quantized rule-table
//! controller: the crisp error and its per-cycle variation are scaled onto
//! integer fuzzy domains, labelled, looked up in a 5×7 rule table, and the
//! output label is scaled back to a crisp adjustment that selects actuator
//! gears. Light and soil moisture use simple threshold rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{Actuator, ActuatorBank};
use crate::plant::EnvAggregate;

/// Maps a crisp value from a symmetric basic domain onto an integer fuzzy domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    /// Basic domain is `[-basic_max, basic_max]`.
    pub basic_max: f64,
    /// Fuzzy domain is `{-levels..=levels}`.
    pub levels: i32,
    pub factor: f64,
}

impl QuantizerSpec {
    pub const fn new(basic_max: f64, levels: i32) -> Self {
        Self { basic_max, levels, factor: levels as f64 / basic_max }
    }
}

/// Temperature error, °C: [-5, 5] → {-3..3}, k = 3/5.
pub const TEMPERATURE_ERROR: QuantizerSpec = QuantizerSpec::new(5.0, 3);
/// Temperature error variation, °C per cycle: [-2, 2] → {-2..2}, k = 2/2.
pub const TEMPERATURE_ERROR_CHANGE: QuantizerSpec = QuantizerSpec::new(2.0, 2);
/// Humidity error, percentage points: [-20, 20] → {-3..3}, k = 3/20.
pub const HUMIDITY_ERROR: QuantizerSpec = QuantizerSpec::new(20.0, 3);
/// Humidity error variation, percentage points per cycle: [-5, 5] → {-2..2}, k = 2/5.
pub const HUMIDITY_ERROR_CHANGE: QuantizerSpec = QuantizerSpec::new(5.0, 2);

/// Output scaling factor shared by both channels.
pub const OUTPUT_FACTOR: f64 = 3.0 / 5.0;

/// Clamps to the basic domain, scales, and rounds half away from zero.
pub fn quantize(value: f64, spec: &QuantizerSpec) -> i32 {
    let clamped = if value.is_nan() { 0.0 } else { value.clamp(-spec.basic_max, spec.basic_max) };
    let level = (clamped * spec.factor).round() as i32;
    level.clamp(-spec.levels, spec.levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NB,
    NM,
    NS,
    ZO,
    PS,
    PM,
    PB,
}

impl Label {
    pub const ALL: [Label; 7] = [Label::NB, Label::NM, Label::NS, Label::ZO, Label::PS, Label::PM, Label::PB];

    /// Position on the integer fuzzy domain, NB = -3 … PB = 3.
    pub const fn level(self) -> i32 {
        self as i32 - 3
    }

    pub const fn name(self) -> &'static str {
        match self {
            Label::NB => "NB",
            Label::NM => "NM",
            Label::NS => "NS",
            Label::ZO => "ZO",
            Label::PS => "PS",
            Label::PM => "PM",
            Label::PB => "PB",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| DomainError::UnknownLabel(s.to_owned()))
    }
}

/// The label sets used by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSet {
    /// NB..PB over {-3..3}: errors and the temperature output.
    Seven,
    /// NM..PM over {-2..2}: error variations.
    FiveInput,
    /// NB..PS over {-3..1}: the humidity output.
    HumidityOutput,
}

impl LabelSet {
    pub const fn domain(self) -> (i32, i32) {
        match self {
            LabelSet::Seven => (-3, 3),
            LabelSet::FiveInput => (-2, 2),
            LabelSet::HumidityOutput => (-3, 1),
        }
    }

    pub fn contains(self, label: Label) -> bool {
        let (lo, hi) = self.domain();
        (lo..=hi).contains(&label.level())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("DomainError: level {level} outside {lo}..={hi}")]
    Level { level: i32, lo: i32, hi: i32 },
    #[error("DomainError: label {label} not in the {axis} axis")]
    Label { label: Label, axis: &'static str },
    #[error("DomainError: unknown label {0:?}")]
    UnknownLabel(String),
}

pub fn level_to_label(level: i32, set: LabelSet) -> Result<Label, DomainError> {
    let (lo, hi) = set.domain();
    if !(lo..=hi).contains(&level) {
        return Err(DomainError::Level { level, lo, hi });
    }
    Ok(Label::ALL[(level + 3) as usize])
}

/// Controlled channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Temperature,
    Humidity,
}

impl Channel {
    pub const fn output_set(self) -> LabelSet {
        match self {
            Channel::Temperature => LabelSet::Seven,
            Channel::Humidity => LabelSet::HumidityOutput,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Channel::Temperature => "temperature",
            Channel::Humidity => "humidity",
        }
    }
}

/// Rows indexed by error-variation label NM..PM, columns by error label NB..PB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleTable {
    cells: [[Label; 7]; 5],
}

use Label::{NB, NM, NS, PB, PM, PS, ZO};

pub const TEMPERATURE_RULES: RuleTable = RuleTable {
    cells: [
        [NB, NB, NM, NS, PS, PS, PM],
        [NB, NM, NS, NS, PS, PM, PM],
        [NM, NS, NS, ZO, PS, PM, PM],
        [NS, NS, NS, PS, PM, PM, PB],
        [NS, NS, PS, PS, PM, PB, PB],
    ],
};

pub const HUMIDITY_RULES: RuleTable = RuleTable {
    cells: [
        [NB, NB, NM, NS, PS, PS, PS],
        [NB, NM, NS, NS, PS, PS, PS],
        [NM, NS, NS, ZO, PS, PS, PS],
        [NS, NS, NS, ZO, PS, PS, PS],
        [NS, NS, ZO, PS, PS, PS, PS],
    ],
};

/// Shipped text copy of both rule tables.
pub const RULES_FILE: &str = include_str!("../data/rules.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing [{0}] section")]
    MissingSection(&'static str),
    #[error("{channel} rule table differs from the built-in table at de={de} e={e}: file {file}, built-in {builtin}")]
    Mismatch { channel: &'static str, de: Label, e: Label, file: Label, builtin: Label },
}

impl RuleTable {
    pub const E_AXIS: [Label; 7] = Label::ALL;
    pub const DE_AXIS: [Label; 5] = [Label::NM, Label::NS, Label::ZO, Label::PS, Label::PM];

    pub fn for_channel(channel: Channel) -> &'static RuleTable {
        match channel {
            Channel::Temperature => &TEMPERATURE_RULES,
            Channel::Humidity => &HUMIDITY_RULES,
        }
    }

    pub fn lookup(&self, e: Label, de: Label) -> Result<Label, DomainError> {
        if !LabelSet::FiveInput.contains(de) {
            return Err(DomainError::Label { label: de, axis: "error-variation" });
        }
        Ok(self.cells[(de.level() + 2) as usize][(e.level() + 3) as usize])
    }

    pub fn cells(&self) -> &[[Label; 7]; 5] {
        &self.cells
    }

    /// Parses one `[temperature]` and one `[humidity]` grid from the rules text format.
    pub fn parse_file(text: &str) -> Result<(RuleTable, RuleTable), RuleFileError> {
        let mut temperature: Option<Vec<[Label; 7]>> = None;
        let mut humidity: Option<Vec<[Label; 7]>> = None;
        let mut current: Option<&mut Vec<[Label; 7]>> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| RuleFileError::Syntax { line: line_no, message };
            if let Some(section) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = match section {
                    "temperature" => Some(temperature.insert(Vec::new())),
                    "humidity" => Some(humidity.insert(Vec::new())),
                    other => return Err(syntax(format!("unknown section [{other}]"))),
                };
                continue;
            }
            let rows = current.as_deref_mut().ok_or_else(|| syntax("row outside a section".into()))?;
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap_or_default();
            if head.contains('\\') {
                let header: Vec<&str> = tokens.collect();
                let expected: Vec<&str> = Self::E_AXIS.iter().map(|l| l.name()).collect();
                if header != expected {
                    return Err(syntax(format!("column header must be {}", expected.join(" "))));
                }
                continue;
            }
            let row_label: Label = head.parse().map_err(|e: DomainError| syntax(e.to_string()))?;
            let expected = Self::DE_AXIS.get(rows.len()).ok_or_else(|| syntax("more than 5 rows".into()))?;
            if row_label != *expected {
                return Err(syntax(format!("expected row {expected}, found {row_label}")));
            }
            let cells: Vec<Label> = tokens
                .map(|t| t.parse::<Label>())
                .collect::<Result<_, _>>()
                .map_err(|e| syntax(e.to_string()))?;
            let row: [Label; 7] = cells.try_into().map_err(|_| syntax("row must have 7 cells".into()))?;
            rows.push(row);
        }
        let finish = |rows: Option<Vec<[Label; 7]>>, name: &'static str| -> Result<RuleTable, RuleFileError> {
            let rows = rows.ok_or(RuleFileError::MissingSection(name))?;
            let cells: [[Label; 7]; 5] = rows
                .try_into()
                .map_err(|_| RuleFileError::Syntax { line: 0, message: format!("[{name}] must have 5 rows") })?;
            Ok(RuleTable { cells })
        };
        Ok((finish(temperature, "temperature")?, finish(humidity, "humidity")?))
    }

    /// Loads the rules text and checks it cell by cell against the built-in tables.
    pub fn verify_file(text: &str) -> Result<(), RuleFileError> {
        let (temperature, humidity) = Self::parse_file(text)?;
        for (channel, parsed) in [(Channel::Temperature, temperature), (Channel::Humidity, humidity)] {
            let builtin = Self::for_channel(channel);
            for (r, de) in Self::DE_AXIS.into_iter().enumerate() {
                for (c, e) in Self::E_AXIS.into_iter().enumerate() {
                    if parsed.cells[r][c] != builtin.cells[r][c] {
                        return Err(RuleFileError::Mismatch {
                            channel: channel.name(),
                            de,
                            e,
                            file: parsed.cells[r][c],
                            builtin: builtin.cells[r][c],
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn rule_lookup(e: Label, de: Label, table: &RuleTable) -> Result<Label, DomainError> {
    table.lookup(e, de)
}

/// Crisp adjustment for an output label: `level / k`.
pub fn dequantize(label: Label, channel: Channel) -> Result<f64, DomainError> {
    let set = channel.output_set();
    if !set.contains(label) {
        return Err(DomainError::Label { label, axis: "output" });
    }
    Ok(f64::from(label.level()) / OUTPUT_FACTOR)
}

/// Gear commands produced by the temperature and humidity channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClimateCommands {
    pub heating: u8,
    pub cooling: u8,
    pub dehumidify: u8,
    pub humidifier: u8,
}

impl ClimateCommands {
    pub fn apply_to(&self, bank: &mut ActuatorBank) {
        bank.set(Actuator::Heating, self.heating);
        bank.set(Actuator::Cooling, self.cooling);
        bank.set(Actuator::Dehumidify, self.dehumidify);
        bank.set(Actuator::Humidifier, self.humidifier);
    }
}

fn gear_for(magnitude: f64, max: u8) -> u8 {
    magnitude.round().clamp(0.0, f64::from(max)) as u8
}

/// Positive temperature output heats, negative cools; negative humidity output
/// dehumidifies, and the single-gear humidifier switches on at +0.5.
pub fn commands_from_outputs(t_crisp: f64, h_crisp: f64) -> ClimateCommands {
    ClimateCommands {
        heating: if t_crisp > 0.0 { gear_for(t_crisp, Actuator::Heating.max_gear()) } else { 0 },
        cooling: if t_crisp < 0.0 { gear_for(-t_crisp, Actuator::Cooling.max_gear()) } else { 0 },
        dehumidify: if h_crisp < 0.0 { gear_for(-h_crisp, Actuator::Dehumidify.max_gear()) } else { 0 },
        humidifier: u8::from(h_crisp >= 0.5),
    }
}

/// Automatic-mode targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoints {
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
}

impl Setpoints {
    pub fn from_frame(frame: &crate::protocol::SetpointFrame) -> Self {
        Self {
            temperature: f64::from(frame.temperature),
            humidity: f64::from(frame.humidity),
            light: f64::from(frame.light_lux()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub prev_temp_error: f64,
    pub prev_hum_error: f64,
    pub initialized: bool,
}

/// Intermediate values of one channel, kept for logging and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTrace {
    pub error: f64,
    pub error_change: f64,
    pub e_label: Label,
    pub de_label: Label,
    pub output: Label,
    pub crisp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub commands: ClimateCommands,
    pub temperature: ChannelTrace,
    pub humidity: ChannelTrace,
}

fn run_channel(
    channel: Channel,
    error: f64,
    error_change: f64,
    e_spec: &QuantizerSpec,
    de_spec: &QuantizerSpec,
) -> ChannelTrace {
    // Quantizer outputs always fall inside the label domains, so these cannot fail.
    let e_label = level_to_label(quantize(error, e_spec), LabelSet::Seven).expect("error level in domain");
    let de_label =
        level_to_label(quantize(error_change, de_spec), LabelSet::FiveInput).expect("variation level in domain");
    let output = RuleTable::for_channel(channel).lookup(e_label, de_label).expect("variation label on axis");
    let crisp = dequantize(output, channel).expect("rule outputs lie in the channel's output set");
    ChannelTrace { error, error_change, e_label, de_label, output, crisp }
}

/// One controller cycle: errors are `setpoint - measured`; the variation is
/// zero on the first cycle.
pub fn controller_step(
    setpoints: &Setpoints,
    measured: &EnvAggregate,
    state: &ControllerState,
) -> (StepOutput, ControllerState) {
    let e_t = setpoints.temperature - measured.temperature;
    let e_h = setpoints.humidity - measured.humidity;
    let (de_t, de_h) = if state.initialized {
        (e_t - state.prev_temp_error, e_h - state.prev_hum_error)
    } else {
        (0.0, 0.0)
    };
    let temperature = run_channel(Channel::Temperature, e_t, de_t, &TEMPERATURE_ERROR, &TEMPERATURE_ERROR_CHANGE);
    let humidity = run_channel(Channel::Humidity, e_h, de_h, &HUMIDITY_ERROR, &HUMIDITY_ERROR_CHANGE);
    let commands = commands_from_outputs(temperature.crisp, humidity.crisp);
    let next = ControllerState { prev_temp_error: e_t, prev_hum_error: e_h, initialized: true };
    (StepOutput { commands, temperature, humidity }, next)
}

/// Fraction of the setpoint by which the deficit must clear a band edge before the gear changes.
pub const LIGHT_HYSTERESIS: f64 = 0.05;

fn light_band(fraction: f64) -> u8 {
    if fraction <= 0.0 {
        0
    } else {
        (3.0 * fraction).ceil().clamp(1.0, 3.0) as u8
    }
}

/// Supplemental LED gear from the light deficit, without hysteresis.
pub fn light_rule(setpoint: f64, measured: f64) -> u8 {
    light_rule_with_hysteresis(setpoint, measured, None)
}

/// Gear `g ≥ 1` covers deficit fractions `((g-1)/3, g/3]`; gear 0 covers `≤ 0`.
/// With a previous gear, the gear only changes once the fraction leaves the
/// previous band widened by [`LIGHT_HYSTERESIS`] on both sides.
pub fn light_rule_with_hysteresis(setpoint: f64, measured: f64, previous: Option<u8>) -> u8 {
    if setpoint <= 0.0 {
        return 0;
    }
    let fraction = (setpoint - measured) / setpoint;
    let raw = light_band(fraction);
    match previous {
        Some(prev) if prev != raw && prev <= 3 => {
            let (lo, hi) = match prev {
                0 => (f64::NEG_INFINITY, 0.0),
                g => (f64::from(g - 1) / 3.0, if g == 3 { f64::INFINITY } else { f64::from(g) / 3.0 }),
            };
            if fraction > lo - LIGHT_HYSTERESIS && fraction <= hi + LIGHT_HYSTERESIS {
                prev
            } else {
                raw
            }
        }
        _ => raw,
    }
}

/// Drip irrigation switch: on while any location reports dry soil.
pub fn soil_rule(soil_dry: &[bool]) -> u8 {
    u8::from(soil_dry.iter().any(|&d| d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aggregate(temperature: f64, humidity: f64) -> EnvAggregate {
        EnvAggregate { temperature, humidity, light: 0.0, soil_dry: [false; 6] }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(5.0, &TEMPERATURE_ERROR), 3);
        for spec in [TEMPERATURE_ERROR, TEMPERATURE_ERROR_CHANGE, HUMIDITY_ERROR, HUMIDITY_ERROR_CHANGE] {
            assert_eq!(quantize(0.0, &spec), 0);
        }
        // 2.4 × 3/5 = 1.44
        assert_eq!(quantize(2.4, &TEMPERATURE_ERROR), 1);
        // clamp to -20, then -20 × 3/20 = -3
        assert_eq!(quantize(-30.0, &HUMIDITY_ERROR), -3);
        // 2.5 × 3/5 = 1.5 rounds away from zero
        assert_eq!(quantize(2.5, &TEMPERATURE_ERROR), 2);
        assert_eq!(quantize(-2.5, &TEMPERATURE_ERROR), -2);
        assert_eq!(quantize(f64::NAN, &TEMPERATURE_ERROR), 0);
    }

    #[test]
    fn factors_match_domains() {
        assert!((TEMPERATURE_ERROR.factor - 3.0 / 5.0).abs() < 1e-15);
        assert!((TEMPERATURE_ERROR_CHANGE.factor - 1.0).abs() < 1e-15);
        assert!((HUMIDITY_ERROR.factor - 3.0 / 20.0).abs() < 1e-15);
        assert!((HUMIDITY_ERROR_CHANGE.factor - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn label_mapping() {
        assert_eq!(level_to_label(0, LabelSet::Seven), Ok(Label::ZO));
        assert_eq!(level_to_label(-3, LabelSet::Seven), Ok(Label::NB));
        assert_eq!(level_to_label(2, LabelSet::FiveInput), Ok(Label::PM));
        assert_eq!(level_to_label(-3, LabelSet::HumidityOutput), Ok(Label::NB));
        assert_eq!(level_to_label(1, LabelSet::HumidityOutput), Ok(Label::PS));
        assert!(level_to_label(3, LabelSet::FiveInput).is_err());
        assert!(level_to_label(2, LabelSet::HumidityOutput).is_err());
        assert!(level_to_label(4, LabelSet::Seven).is_err());
    }

    #[test]
    fn lookup_examples() {
        assert_eq!(rule_lookup(Label::NB, Label::NM, &TEMPERATURE_RULES), Ok(Label::NB));
        assert_eq!(rule_lookup(Label::ZO, Label::ZO, &TEMPERATURE_RULES), Ok(Label::ZO));
        assert_eq!(rule_lookup(Label::PB, Label::PM, &HUMIDITY_RULES), Ok(Label::PS));
        assert!(rule_lookup(Label::ZO, Label::PB, &TEMPERATURE_RULES).is_err());
        assert!(rule_lookup(Label::ZO, Label::NB, &HUMIDITY_RULES).is_err());
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(Label::PB, Channel::Temperature), Ok(5.0));
        assert_eq!(dequantize(Label::ZO, Channel::Temperature), Ok(0.0));
        assert_eq!(dequantize(Label::ZO, Channel::Humidity), Ok(0.0));
        assert_eq!(dequantize(Label::NB, Channel::Humidity), Ok(-5.0));
        assert!(dequantize(Label::PM, Channel::Humidity).is_err());
    }

    #[test]
    fn commands_examples() {
        assert_eq!(
            commands_from_outputs(5.0, 0.0),
            ClimateCommands { heating: 5, cooling: 0, dehumidify: 0, humidifier: 0 }
        );
        assert_eq!(commands_from_outputs(0.0, 0.0), ClimateCommands::default());
        assert_eq!(
            commands_from_outputs(-3.33, 1.67),
            ClimateCommands { heating: 0, cooling: 3, dehumidify: 0, humidifier: 1 }
        );
    }

    #[test]
    fn step_examples() {
        let sp = Setpoints { temperature: 25.0, humidity: 60.0, light: 10_000.0 };
        let (out, state) = controller_step(&sp, &aggregate(25.0, 60.0), &ControllerState::default());
        assert_eq!(out.commands, ClimateCommands::default());
        assert!(state.initialized);

        let (out, _) = controller_step(&sp, &aggregate(20.0, 60.0), &ControllerState::default());
        assert_eq!(out.temperature.e_label, Label::PB);
        assert_eq!(out.temperature.de_label, Label::ZO);
        assert_eq!(out.temperature.output, Label::PM);
        assert!((out.temperature.crisp - 2.0 / 0.6).abs() < 1e-12);
        assert_eq!(out.commands.heating, 3);
        assert_eq!(out.commands.cooling, 0);

        let (out, _) = controller_step(&sp, &aggregate(25.0, 80.0), &ControllerState::default());
        assert_eq!(out.humidity.e_label, Label::NB);
        assert_eq!(out.humidity.output, Label::NM);
        assert_eq!(out.commands.dehumidify, 3);
        assert_eq!(out.commands.humidifier, 0);
    }

    #[test]
    fn step_uses_previous_error() {
        let sp = Setpoints { temperature: 25.0, humidity: 60.0, light: 0.0 };
        let prev = ControllerState { prev_temp_error: 3.0, prev_hum_error: 0.0, initialized: true };
        // e = 5 (PB), de = 2 (PM) → PB → heating 5
        let (out, next) = controller_step(&sp, &aggregate(20.0, 60.0), &prev);
        assert_eq!(out.temperature.de_label, Label::PM);
        assert_eq!(out.commands.heating, 5);
        assert_eq!(next.prev_temp_error, 5.0);
    }

    #[test]
    fn light_examples() {
        assert_eq!(light_rule(10_000.0, 12_000.0), 0);
        assert_eq!(light_rule(10_000.0, 0.0), 3);
        assert_eq!(light_rule(10_000.0, 7_000.0), 1);
        assert_eq!(light_rule(0.0, 0.0), 0);
    }

    #[test]
    fn light_hysteresis_holds_near_band_edge() {
        // fraction 0.35 is just past the gear-1 edge at 1/3
        assert_eq!(light_rule(10_000.0, 6_500.0), 2);
        assert_eq!(light_rule_with_hysteresis(10_000.0, 6_500.0, Some(1)), 1);
        // 0.40 clears the widened band
        assert_eq!(light_rule_with_hysteresis(10_000.0, 6_000.0, Some(1)), 2);
        // a small surplus does not switch the LED off
        assert_eq!(light_rule_with_hysteresis(10_000.0, 10_300.0, Some(1)), 1);
        assert_eq!(light_rule_with_hysteresis(10_000.0, 11_000.0, Some(1)), 0);
        // from off, a tiny deficit does not switch on
        assert_eq!(light_rule_with_hysteresis(10_000.0, 9_800.0, Some(0)), 0);
    }

    #[test]
    fn soil_examples() {
        assert_eq!(soil_rule(&[false; 6]), 0);
        assert_eq!(soil_rule(&[false, false, true, false, false, false]), 1);
        assert_eq!(soil_rule(&[true; 6]), 1);
    }

    #[test]
    fn shipped_rule_file_matches_builtin_tables() {
        RuleTable::verify_file(RULES_FILE).unwrap();
    }

    #[test]
    fn tampered_rule_file_is_rejected() {
        let tampered = RULES_FILE.replacen("NM    NB  NB  NM  NS  PS  PS  PM", "NM    NB  NB  NM  NS  PS  PS  PB", 1);
        assert!(matches!(RuleTable::verify_file(&tampered), Err(RuleFileError::Mismatch { .. })));
        assert!(matches!(RuleTable::verify_file("[temperature]\n"), Err(RuleFileError::Syntax { .. })));
        assert!(RuleTable::verify_file("NM NB\n").is_err());
    }

    #[test]
    fn zero_row_is_monotone() {
        for table in [&TEMPERATURE_RULES, &HUMIDITY_RULES] {
            let row: Vec<i32> =
                Label::ALL.iter().map(|&e| table.lookup(e, Label::ZO).unwrap().level()).collect();
            assert!(row.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
        }
    }
}
