//! First-order environment model of the greenhouse at six sensing locations.
//!
//! Each location relaxes toward the ambient curves and is pushed by the
//! actuator gears:
//!
//! ```text
//! T' = T + dt·[λT·(Tout − T) + gain·(g_heat·heating − g_cool·cooling)] + noise
//! H' = H + dt·[λH·(Hout − H) + gain·(g_humid·humidifier − g_dehum·dehumidify + g_evap·drip)] + noise
//! L' = daylight(t')·shade + g_led·led
//! S' = S + dt·[gain·g_drip·drip − k_dry]
//! ```
//!
//! and every value is clamped to its sensor range afterwards.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{Actuator, ActuatorBank};
use crate::protocol::{LocationReadings, LOCATIONS};

pub const TEMPERATURE_LIMITS: (f64, f64) = (-10.0, 40.0);
pub const HUMIDITY_LIMITS: (f64, f64) = (10.0, 100.0);
pub const LIGHT_LIMITS: (f64, f64) = (0.0, 30_000.0);
pub const SOIL_LIMITS: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
#[error("ParamError: {name} = {value} is invalid ({reason})")]
pub struct ParamError {
    pub name: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub temperature: [f64; LOCATIONS],
    pub humidity: [f64; LOCATIONS],
    pub light: [f64; LOCATIONS],
    pub soil: [f64; LOCATIONS],
    /// Simulated clock, seconds since the start of the run.
    pub time: f64,
}

impl EnvState {
    pub fn uniform(temperature: f64, humidity: f64, light: f64, soil: f64) -> Self {
        Self {
            temperature: [temperature; LOCATIONS],
            humidity: [humidity; LOCATIONS],
            light: [light; LOCATIONS],
            soil: [soil; LOCATIONS],
            time: 0.0,
        }
        .clamped()
    }

    pub fn clamped(mut self) -> Self {
        for i in 0..LOCATIONS {
            self.temperature[i] = self.temperature[i].clamp(TEMPERATURE_LIMITS.0, TEMPERATURE_LIMITS.1);
            self.humidity[i] = self.humidity[i].clamp(HUMIDITY_LIMITS.0, HUMIDITY_LIMITS.1);
            self.light[i] = self.light[i].clamp(LIGHT_LIMITS.0, LIGHT_LIMITS.1);
            self.soil[i] = self.soil[i].clamp(SOIL_LIMITS.0, SOIL_LIMITS.1);
        }
        self
    }

    pub fn in_bounds(&self) -> bool {
        let within = |v: &[f64; LOCATIONS], (lo, hi): (f64, f64)| v.iter().all(|x| (lo..=hi).contains(x));
        within(&self.temperature, TEMPERATURE_LIMITS)
            && within(&self.humidity, HUMIDITY_LIMITS)
            && within(&self.light, LIGHT_LIMITS)
            && within(&self.soil, SOIL_LIMITS)
    }
}

/// Daily cosine curve peaking at `peak_hour`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyCurve {
    pub mean: f64,
    pub amplitude: f64,
    pub peak_hour: f64,
}

impl DailyCurve {
    pub const fn constant(value: f64) -> Self {
        Self { mean: value, amplitude: 0.0, peak_hour: 0.0 }
    }

    pub fn at_hour(&self, hour: f64) -> f64 {
        self.mean + self.amplitude * (2.0 * PI * (hour - self.peak_hour) / 24.0).cos()
    }
}

/// Half-sine daylight between sunrise and sunset. A window covering the whole
/// day (`sunrise_hour <= 0`, `sunset_hour >= 24`) gives constant `peak_lux`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaylightCurve {
    pub peak_lux: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
}

impl DaylightCurve {
    pub fn at_hour(&self, hour: f64) -> f64 {
        if self.sunrise_hour <= 0.0 && self.sunset_hour >= 24.0 {
            return self.peak_lux;
        }
        let span = self.sunset_hour - self.sunrise_hour;
        if span <= 0.0 || hour <= self.sunrise_hour || hour >= self.sunset_hour {
            return 0.0;
        }
        self.peak_lux * (PI * (hour - self.sunrise_hour) / span).sin()
    }
}

/// Outdoor conditions as periodic functions of the simulated clock.
///
/// The sun's heating contribution is folded into the outdoor temperature curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmbientProfile {
    /// Hour of day at simulated time 0.
    pub start_hour: f64,
    pub temperature: DailyCurve,
    pub humidity: DailyCurve,
    pub daylight: DaylightCurve,
}

impl Default for AmbientProfile {
    /// A heated room next to a south-facing window.
    fn default() -> Self {
        Self {
            start_hour: 8.0,
            temperature: DailyCurve { mean: 22.0, amplitude: 1.5, peak_hour: 14.0 },
            humidity: DailyCurve { mean: 60.0, amplitude: 2.0, peak_hour: 5.0 },
            daylight: DaylightCurve { peak_lux: 12_000.0, sunrise_hour: 6.0, sunset_hour: 18.0 },
        }
    }
}

impl AmbientProfile {
    pub fn constant(temperature: f64, humidity: f64, daylight: f64) -> Self {
        Self {
            start_hour: 12.0,
            temperature: DailyCurve::constant(temperature),
            humidity: DailyCurve::constant(humidity),
            daylight: DaylightCurve { peak_lux: daylight, sunrise_hour: 0.0, sunset_hour: 24.0 },
        }
    }

    pub fn hour_of_day(&self, time: f64) -> f64 {
        (self.start_hour + time / 3600.0).rem_euclid(24.0)
    }

    pub fn outdoor_temperature(&self, time: f64) -> f64 {
        self.temperature.at_hour(self.hour_of_day(time))
    }

    pub fn outdoor_humidity(&self, time: f64) -> f64 {
        self.humidity.at_hour(self.hour_of_day(time))
    }

    pub fn daylight(&self, time: f64) -> f64 {
        self.daylight.at_hour(self.hour_of_day(time)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// Temperature leakage toward outdoor, 1/s.
    pub leak_temperature: f64,
    /// °C/s per heating gear.
    pub heat_gain: f64,
    /// °C/s per cooling gear.
    pub cool_gain: f64,
    /// Humidity leakage toward outdoor, 1/s.
    pub leak_humidity: f64,
    /// %/s with the humidifier on.
    pub humidify_gain: f64,
    /// %/s per dehumidify gear.
    pub dehumidify_gain: f64,
    /// %/s with drip irrigation on.
    pub evaporation_gain: f64,
    /// lux per LED gear.
    pub led_gain: f64,
    /// Soil moisture per second with drip irrigation on.
    pub drip_gain: f64,
    /// Soil moisture lost per second.
    pub drying_rate: f64,
    /// Soil below this moisture reads as dry.
    pub soil_threshold: f64,
    /// Fraction of daylight reaching each location.
    pub shade: [f64; LOCATIONS],
    /// Actuator effectiveness at each location.
    pub actuator_gain: [f64; LOCATIONS],
    /// Half-width of the uniform temperature noise, °C.
    pub temperature_noise: f64,
    /// Half-width of the uniform humidity noise, percentage points.
    pub humidity_noise: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            leak_temperature: 0.002,
            heat_gain: 0.004,
            cool_gain: 0.005,
            leak_humidity: 0.002,
            humidify_gain: 0.05,
            dehumidify_gain: 0.02,
            evaporation_gain: 0.005,
            led_gain: 2000.0,
            drip_gain: 0.005,
            drying_rate: 0.0002,
            soil_threshold: 0.3,
            shade: [1.0; LOCATIONS],
            actuator_gain: [1.0; LOCATIONS],
            temperature_noise: 0.0,
            humidity_noise: 0.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let scalars = [
            ("leak_temperature", self.leak_temperature),
            ("heat_gain", self.heat_gain),
            ("cool_gain", self.cool_gain),
            ("leak_humidity", self.leak_humidity),
            ("humidify_gain", self.humidify_gain),
            ("dehumidify_gain", self.dehumidify_gain),
            ("evaporation_gain", self.evaporation_gain),
            ("led_gain", self.led_gain),
            ("drip_gain", self.drip_gain),
            ("drying_rate", self.drying_rate),
            ("soil_threshold", self.soil_threshold),
            ("temperature_noise", self.temperature_noise),
            ("humidity_noise", self.humidity_noise),
        ];
        let per_location = self
            .shade
            .iter()
            .map(|&v| ("shade", v))
            .chain(self.actuator_gain.iter().map(|&v| ("actuator_gain", v)));
        for (name, value) in scalars.into_iter().chain(per_location) {
            if !value.is_finite() || value < 0.0 {
                return Err(ParamError { name, value, reason: "must be finite and non-negative" });
            }
        }
        for (name, value) in [("leak_temperature", self.leak_temperature), ("leak_humidity", self.leak_humidity)] {
            if value > 1.0 {
                return Err(ParamError { name, value, reason: "leakage must not exceed 1/s" });
            }
        }
        Ok(())
    }
}

/// Advances the environment by `dt` seconds. `noise` is only drawn from when a
/// noise amplitude is non-zero.
pub fn step_env<R: Rng + ?Sized>(
    state: &EnvState,
    actuators: &ActuatorBank,
    ambient: &AmbientProfile,
    params: &PlantParams,
    dt: f64,
    noise: &mut R,
) -> Result<EnvState, ParamError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ParamError { name: "dt", value: dt, reason: "step must be positive" });
    }
    params.validate()?;
    let gear = |a: Actuator| f64::from(actuators.get(a));
    let t_out = ambient.outdoor_temperature(state.time);
    let h_out = ambient.outdoor_humidity(state.time);
    let time = state.time + dt;
    let daylight = ambient.daylight(time);
    let mut next = state.clone();
    next.time = time;
    for i in 0..LOCATIONS {
        let g = params.actuator_gain[i];
        let heat = g * (params.heat_gain * gear(Actuator::Heating) - params.cool_gain * gear(Actuator::Cooling));
        let mut t = state.temperature[i] + dt * (params.leak_temperature * (t_out - state.temperature[i]) + heat);
        if params.temperature_noise > 0.0 {
            t += noise.gen_range(-params.temperature_noise..=params.temperature_noise);
        }
        let moisture = g
            * (params.humidify_gain * gear(Actuator::Humidifier) - params.dehumidify_gain * gear(Actuator::Dehumidify)
                + params.evaporation_gain * gear(Actuator::Drip));
        let mut h = state.humidity[i] + dt * (params.leak_humidity * (h_out - state.humidity[i]) + moisture);
        if params.humidity_noise > 0.0 {
            h += noise.gen_range(-params.humidity_noise..=params.humidity_noise);
        }
        next.temperature[i] = t;
        next.humidity[i] = h;
        next.light[i] = daylight * params.shade[i] + params.led_gain * gear(Actuator::Led);
        next.soil[i] = state.soil[i] + dt * (g * params.drip_gain * gear(Actuator::Drip) - params.drying_rate);
    }
    Ok(next.clamped())
}

/// Six-location averages plus per-location soil states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAggregate {
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub soil_dry: [bool; LOCATIONS],
}

fn mean(values: &[f64; LOCATIONS]) -> f64 {
    values.iter().sum::<f64>() / LOCATIONS as f64
}

pub fn aggregate(state: &EnvState, soil_threshold: f64) -> EnvAggregate {
    EnvAggregate {
        temperature: mean(&state.temperature),
        humidity: mean(&state.humidity),
        light: mean(&state.light),
        soil_dry: state.soil.map(|s| s < soil_threshold),
    }
}

impl From<&LocationReadings> for EnvAggregate {
    fn from(r: &LocationReadings) -> Self {
        Self {
            temperature: r.mean_temperature(),
            humidity: r.mean_humidity(),
            light: r.mean_light(),
            soil_dry: r.soil_dry,
        }
    }
}

/// A greenhouse instance: state, parameters and its own seeded noise source.
#[derive(Debug, Clone)]
pub struct Greenhouse {
    pub state: EnvState,
    pub params: PlantParams,
    pub ambient: AmbientProfile,
    rng: ChaCha8Rng,
}

impl Greenhouse {
    pub fn new(state: EnvState, params: PlantParams, ambient: AmbientProfile, seed: u64) -> Result<Self, ParamError> {
        params.validate()?;
        Ok(Self { state, params, ambient, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn step(&mut self, actuators: &ActuatorBank, dt: f64) -> Result<&EnvState, ParamError> {
        self.state = step_env(&self.state, actuators, &self.ambient, &self.params, dt, &mut self.rng)?;
        Ok(&self.state)
    }

    pub fn aggregate(&self) -> EnvAggregate {
        aggregate(&self.state, self.params.soil_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let ambient = AmbientProfile::constant(20.0, 60.0, 5000.0);
        let state = EnvState::uniform(20.0, 60.0, 5000.0, 0.5);
        let params = PlantParams { drying_rate: 0.0, ..PlantParams::default() };
        let next = step_env(&state, &ActuatorBank::OFF, &ambient, &params, 1.0, &mut quiet()).unwrap();
        assert_eq!(next.temperature, state.temperature);
        assert_eq!(next.humidity, state.humidity);
        assert_eq!(next.light, state.light);
        assert_eq!(next.soil, state.soil);
        assert_eq!(next.time, 1.0);
    }

    #[test]
    fn heating_only_raises_temperature_linearly_without_leakage() {
        let ambient = AmbientProfile::constant(15.0, 60.0, 0.0);
        let params = PlantParams { leak_temperature: 0.0, ..PlantParams::default() };
        let bank = ActuatorBank::OFF.with(Actuator::Heating, 5);
        let mut state = EnvState::uniform(15.0, 60.0, 0.0, 0.5);
        let mut prev = state.temperature[0];
        for _ in 0..60 {
            state = step_env(&state, &bank, &ambient, &params, 1.0, &mut quiet()).unwrap();
            assert!(state.temperature[0] > prev);
            assert!((state.temperature[0] - prev - 0.004 * 5.0).abs() < 1e-12);
            prev = state.temperature[0];
        }
        // T(t) = 15 + g_heat·5·t
        assert!((state.temperature[0] - (15.0 + 0.004 * 5.0 * 60.0)).abs() < 1e-9);
    }

    #[test]
    fn heating_with_default_leakage_matches_discrete_closed_form() {
        let ambient = AmbientProfile::constant(15.0, 60.0, 0.0);
        let params = PlantParams::default();
        let bank = ActuatorBank::OFF.with(Actuator::Heating, 5);
        let mut state = EnvState::uniform(15.0, 60.0, 0.0, 0.5);
        for _ in 0..60 {
            state = step_env(&state, &bank, &ambient, &params, 1.0, &mut quiet()).unwrap();
        }
        // T_n = T_out + (u/λ)·(1 − (1 − λ·dt)^n) with u = 0.02 °C/s, λ = 0.002/s
        let u = 0.004 * 5.0;
        let lambda: f64 = 0.002;
        let expected = 15.0 + (u / lambda) * (1.0 - (1.0 - lambda).powi(60));
        assert!((state.temperature[0] - expected).abs() < 1e-9, "{} vs {expected}", state.temperature[0]);
    }

    #[test]
    fn heating_clamps_at_upper_limit() {
        let ambient = AmbientProfile::constant(39.0, 60.0, 0.0);
        let params = PlantParams { heat_gain: 1.0, ..PlantParams::default() };
        let bank = ActuatorBank::OFF.with(Actuator::Heating, 5);
        let state = EnvState::uniform(39.0, 60.0, 0.0, 0.5);
        let next = step_env(&state, &bank, &ambient, &params, 10.0, &mut quiet()).unwrap();
        assert_eq!(next.temperature, [40.0; 6]);
    }

    #[test]
    fn rejects_negative_gain_and_bad_dt() {
        let state = EnvState::uniform(20.0, 60.0, 0.0, 0.5);
        let params = PlantParams { cool_gain: -0.1, ..PlantParams::default() };
        let err = step_env(&state, &ActuatorBank::OFF, &AmbientProfile::default(), &params, 1.0, &mut quiet());
        assert_eq!(err.unwrap_err().name, "cool_gain");
        let err = step_env(&state, &ActuatorBank::OFF, &AmbientProfile::default(), &PlantParams::default(), 0.0, &mut quiet());
        assert_eq!(err.unwrap_err().name, "dt");
    }

    #[test]
    fn aggregate_examples() {
        let mut state = EnvState::uniform(20.0, 60.0, 0.0, 0.9);
        assert_eq!(aggregate(&state, 0.3).temperature, 20.0);
        state.temperature = [18.0, 19.0, 20.0, 21.0, 22.0, 23.0];
        assert_eq!(aggregate(&state, 0.3).temperature, 20.5);
        state.soil[0] = 0.1;
        let agg = aggregate(&state, 0.3);
        assert!(agg.soil_dry[0]);
        assert!(!agg.soil_dry[1]);
    }

    #[test]
    fn led_adds_to_shaded_daylight() {
        let ambient = AmbientProfile::constant(20.0, 60.0, 10_000.0);
        let params = PlantParams { shade: [1.0, 0.5, 1.0, 1.0, 1.0, 1.0], ..PlantParams::default() };
        let bank = ActuatorBank::OFF.with(Actuator::Led, 2);
        let state = EnvState::uniform(20.0, 60.0, 0.0, 0.5);
        let next = step_env(&state, &bank, &ambient, &params, 1.0, &mut quiet()).unwrap();
        assert_eq!(next.light[0], 14_000.0);
        assert_eq!(next.light[1], 9_000.0);
    }

    #[test]
    fn daylight_curve_shape() {
        let d = DaylightCurve { peak_lux: 10_000.0, sunrise_hour: 6.0, sunset_hour: 18.0 };
        assert_eq!(d.at_hour(3.0), 0.0);
        assert!((d.at_hour(12.0) - 10_000.0).abs() < 1e-9);
        assert_eq!(d.at_hour(18.0), 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let params = PlantParams { temperature_noise: 0.5, humidity_noise: 1.0, ..PlantParams::default() };
        let run = |seed| {
            let mut g = Greenhouse::new(EnvState::uniform(20.0, 60.0, 0.0, 0.5), params.clone(), AmbientProfile::default(), seed)
                .unwrap();
            for _ in 0..100 {
                g.step(&ActuatorBank::OFF, 1.0).unwrap();
            }
            g.state
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
