//! Scenario files: TOML describing initial conditions, models, links, periods
//! and a timeline of scripted events. See `docs/scenario.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use greenhouse_core::gateway::GatewayPeriods;
use greenhouse_core::link::LinkConfig;
use greenhouse_core::plant::{AmbientProfile, EnvState, PlantParams};
use greenhouse_core::protocol::{SetpointFrame, LOCATIONS, SETPOINT_LIGHT_UNIT};
use greenhouse_core::sensor_net::NetworkConfig;
use greenhouse_core::{Actuator, ActuatorBank};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read scenario {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: f64,
    /// Plant integration step and trajectory row spacing.
    pub plant_dt_s: f64,
    /// Base tick of the in-process scheduler.
    pub tick_ms: u64,
    pub initial: Initial,
    pub ambient: AmbientProfile,
    pub plant: PlantParams,
    pub network: NetworkConfig,
    pub serial: LinkConfig,
    pub uplink: LinkConfig,
    pub gateway: GatewayPeriods,
    pub server: ServerSection,
    pub ports: Ports,
    pub account: Account,
    pub events: Vec<Event>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 600.0,
            plant_dt_s: 1.0,
            tick_ms: 100,
            initial: Initial::default(),
            ambient: AmbientProfile::default(),
            plant: PlantParams::default(),
            network: NetworkConfig::default(),
            serial: LinkConfig::default(),
            uplink: LinkConfig { latency: Duration::from_millis(20), ..LinkConfig::default() },
            gateway: GatewayPeriods::default(),
            server: ServerSection::default(),
            ports: Ports::default(),
            account: Account::default(),
            events: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Initial {
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    /// Soil moisture fraction, 0 = bone dry.
    pub soil: f64,
}

impl Default for Initial {
    fn default() -> Self {
        Self { temperature: 20.0, humidity: 60.0, light: 8000.0, soil: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub auto_period_ms: u64,
    pub snapshot_every: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self { auto_period_ms: 10_000, snapshot_every: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ports {
    pub gateway: u16,
    pub app: u16,
    pub ws: u16,
    /// TCP port the simulated coordinator listens on in `--net tcp` mode.
    pub serial: u16,
}

impl Default for Ports {
    fn default() -> Self {
        Self { gateway: 8080, app: 8088, ws: 8090, serial: 8070 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Account {
    pub username: String,
    pub password: String,
}

impl Default for Account {
    fn default() -> Self {
        Self { username: "operator".into(), password: "greenhouse".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at_s: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    /// Switch to automatic mode with these setpoints.
    Setpoints { temperature: i8, humidity: u8, light_lux: u32 },
    /// Switch to manual mode; actuators not named stay at their current gear.
    Manual { gears: BTreeMap<String, u8> },
    /// The gateway's uplink accepts no bytes for a while.
    UplinkStall { duration_s: f64 },
    /// The gateway's uplink is disconnected for a while.
    UplinkDown { duration_s: f64 },
    /// Force a location's soil moisture to a value.
    Soil { location: usize, moisture: f64 },
}

impl Action {
    pub fn setpoint_frame(temperature: i8, humidity: u8, light_lux: u32) -> SetpointFrame {
        let light = (light_lux + SETPOINT_LIGHT_UNIT / 2) / SETPOINT_LIGHT_UNIT;
        SetpointFrame { temperature, humidity, light: light.min(u32::from(u8::MAX)) as u8 }
    }

    /// Resolves a manual event against the gears in force.
    pub fn manual_bank(gears: &BTreeMap<String, u8>, current: ActuatorBank) -> Result<ActuatorBank, String> {
        let mut bank = current;
        for (name, &gear) in gears {
            let actuator = Actuator::parse(name).ok_or_else(|| format!("unknown actuator {name:?}"))?;
            if gear > actuator.max_gear() {
                return Err(format!("{actuator} gear {gear} exceeds {}", actuator.max_gear()));
            }
            bank.set(actuator, gear);
        }
        Ok(bank)
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ScenarioError::NotFound(path.into())),
            Err(source) => return Err(ScenarioError::Io { path: path.into(), source }),
        };
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.events.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return bad(format!("duration_s must be a non-negative number, got {}", self.duration_s));
        }
        if !(self.plant_dt_s.is_finite() && self.plant_dt_s > 0.0) {
            return bad(format!("plant_dt_s must be positive, got {}", self.plant_dt_s));
        }
        if self.tick_ms == 0 {
            return bad("tick_ms must be positive".into());
        }
        let dt_ms = self.plant_dt_s * 1000.0;
        if (dt_ms / self.tick_ms as f64).fract() != 0.0 {
            return bad(format!("plant_dt_s ({}) must be a whole number of ticks ({} ms)", self.plant_dt_s, self.tick_ms));
        }
        self.plant.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.at_s.is_finite() && ev.at_s >= 0.0) {
                return bad(format!("event {i}: at_s must be non-negative"));
            }
            match &ev.action {
                Action::Manual { gears } => {
                    Action::manual_bank(gears, ActuatorBank::OFF).map_err(|e| ScenarioError::Invalid(format!("event {i}: {e}")))?;
                }
                Action::Soil { location, moisture } => {
                    if *location >= LOCATIONS || !(0.0..=1.0).contains(moisture) {
                        return bad(format!("event {i}: soil location 0..{LOCATIONS} and moisture 0..1"));
                    }
                }
                Action::UplinkStall { duration_s } | Action::UplinkDown { duration_s } => {
                    if !(duration_s.is_finite() && *duration_s >= 0.0) {
                        return bad(format!("event {i}: duration_s must be non-negative"));
                    }
                }
                Action::Setpoints { .. } => {}
            }
        }
        Ok(())
    }

    pub fn plant_seed(&self) -> u64 {
        self.seed
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig { seed: self.network.seed ^ self.seed.rotate_left(17), ..self.network.clone() }
    }

    pub fn serial_link(&self) -> LinkConfig {
        LinkConfig { seed: self.serial.seed ^ self.seed.rotate_left(29), ..self.serial.clone() }
    }

    pub fn uplink_link(&self) -> LinkConfig {
        LinkConfig { seed: self.uplink.seed ^ self.seed.rotate_left(41), ..self.uplink.clone() }
    }

    pub fn initial_state(&self) -> EnvState {
        let i = &self.initial;
        EnvState::uniform(i.temperature, i.humidity, i.light, i.soil)
    }

    pub fn tick(&self) -> Duration {
        Duration::from_millis(self.tick_ms)
    }

    pub fn duration(&self) -> Duration {
        Duration::from_secs_f64(self.duration_s)
    }

    /// Number of trajectory rows a full run produces.
    pub fn row_count(&self) -> usize {
        (self.duration_s / self.plant_dt_s + 1e-9).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ScenarioConfig::parse("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn events_parse_and_sort() {
        let cfg = ScenarioConfig::parse(
            r#"
            seed = 9
            [[events]]
            at_s = 60
            action = "manual"
            gears = { cool = 4, led = 1 }

            [[events]]
            at_s = 10
            action = "setpoints"
            temperature = 25
            humidity = 60
            light_lux = 10000
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.events[0].at_s, 10.0);
        assert_eq!(cfg.events[0].action, Action::Setpoints { temperature: 25, humidity: 60, light_lux: 10000 });
        let Action::Manual { gears } = &cfg.events[1].action else { panic!() };
        let bank = Action::manual_bank(gears, ActuatorBank::OFF).unwrap();
        assert_eq!(bank.get(Actuator::Cooling), 4);
        assert_eq!(bank.get(Actuator::Led), 1);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ScenarioConfig::parse("sed = 1"), Err(ScenarioError::Parse(_))));
        assert!(ScenarioConfig::parse("plant_dt_s = 0.15").is_err());
        assert!(ScenarioConfig::parse("[[events]]\nat_s = 1\naction = \"manual\"\ngears = { fan = 1 }").is_err());
        assert!(ScenarioConfig::parse("[[events]]\nat_s = 1\naction = \"manual\"\ngears = { led = 9 }").is_err());
    }

    #[test]
    fn missing_file() {
        let err = ScenarioConfig::load(Path::new("/nonexistent/x.cfg")).unwrap_err();
        assert!(err.to_string().starts_with("scenario not found"));
    }

    #[test]
    fn durations_in_millis() {
        let cfg = ScenarioConfig::parse("[serial]\nlatency = 250\n[gateway]\npush = 2000").unwrap();
        assert_eq!(cfg.serial.latency, Duration::from_millis(250));
        assert_eq!(cfg.gateway.push, Duration::from_secs(2));
        assert_eq!(cfg.row_count(), 600);
    }

    #[test]
    fn setpoint_light_rounds_to_unit() {
        assert_eq!(Action::setpoint_frame(25, 60, 10_049).light, 100);
        assert_eq!(Action::setpoint_frame(25, 60, 10_050).light, 101);
        assert_eq!(Action::setpoint_frame(25, 60, 1_000_000).light, 255);
    }
}
