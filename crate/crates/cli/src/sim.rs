//! Deterministic in-process run of the whole stack: plant, sensor network,
//! gateway and server, joined by simulated links that carry real frame bytes.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use greenhouse_core::gateway::{CounterSnapshot, GatewayScheduler, PipeUplink};
use greenhouse_core::link::{Pipe, SerialLink};
use greenhouse_core::plant::{Greenhouse, ParamError};
use greenhouse_core::protocol::{Codec, Frame, FrameScanner, Layer};
use greenhouse_core::sensor_net::{Diagnostics, SensorNetwork, TickError};
use greenhouse_core::ActuatorBank;
use greenhouse_server::engine::{Effects, EngineError, Recovery, ServerConfig, ServerCore};
use greenhouse_server::history::ControlMode;

use crate::scenario::{Action, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tick(#[from] TickError),
    #[error("server: {0}")]
    Engine(#[from] EngineError),
    #[error("event at {at_s} s: {reason}")]
    Event { at_s: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time_s: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub soil_dry: usize,
    pub gears: ActuatorBank,
    pub automatic: bool,
}

pub const TRAJECTORY_HEADER: [&str; 12] = [
    "time_s",
    "temperature",
    "humidity",
    "light",
    "soil_dry",
    "led",
    "heating",
    "cooling",
    "dehumidify",
    "drip",
    "humidifier",
    "mode",
];

pub fn write_trajectory<W: Write>(rows: &[TrajectoryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        let mut record = vec![
            format!("{:.1}", r.time_s),
            format!("{:.4}", r.temperature),
            format!("{:.4}", r.humidity),
            format!("{:.1}", r.light),
            r.soil_dry.to_string(),
        ];
        record.extend(r.gears.gears().iter().map(u8::to_string));
        record.push(if r.automatic { "automatic" } else { "manual" }.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub rows: usize,
    pub broadcasts: usize,
    pub records: usize,
    pub gateway: CounterSnapshot,
    pub network: Diagnostics,
    pub mode: ControlMode,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    pub plant: Greenhouse,
    pub network: SensorNetwork,
    pub gateway: GatewayScheduler<PipeUplink>,
    pub server: ServerCore,
    pub recovery: Recovery,
    serial: SerialLink,
    uplink: Pipe,
    inbound: Pipe,
    scanner: FrameScanner,
    clock: Duration,
    next_plant: Duration,
    next_auto: Duration,
    next_event: usize,
    stall_until: Option<Duration>,
    down_until: Option<Duration>,
    broadcasts: Vec<(Duration, Vec<u8>)>,
    rows: Vec<TrajectoryRow>,
}

fn ms(t: Duration) -> u64 {
    t.as_millis() as u64
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, data_dir: &Path) -> Result<Self, SimError> {
        let server_cfg = ServerConfig {
            data_dir: data_dir.to_path_buf(),
            auto_period_ms: cfg.server.auto_period_ms,
            push_period_ms: ms(cfg.gateway.push),
            snapshot_every: cfg.server.snapshot_every,
        };
        let (mut server, recovery) = ServerCore::open(server_cfg)?;
        if !server.has_users() {
            server.add_user(&cfg.account.username, &cfg.account.password, 0)?;
        }
        let serial = SerialLink::new(cfg.serial_link());
        let network = SensorNetwork::new(cfg.network_config(), serial.clone());
        let uplink = Pipe::new(cfg.uplink_link());
        let mut inbound_cfg = cfg.uplink_link();
        inbound_cfg.seed = inbound_cfg.seed.wrapping_add(1);
        let inbound = Pipe::new(inbound_cfg);
        let gateway = GatewayScheduler::new(cfg.gateway.clone(), serial.clone(), inbound.clone(), PipeUplink::new(uplink.clone()));
        let plant = Greenhouse::new(cfg.initial_state(), cfg.plant.clone(), cfg.ambient.clone(), cfg.plant_seed())?;
        let mut sim = Self {
            cfg: cfg.clone(),
            plant,
            network,
            gateway,
            server,
            recovery,
            serial,
            uplink,
            inbound,
            scanner: FrameScanner::new(Codec::for_layer(Layer::Network)),
            clock: Duration::ZERO,
            next_plant: Duration::from_secs_f64(cfg.plant_dt_s),
            next_auto: Duration::from_millis(cfg.server.auto_period_ms.max(1)),
            next_event: 0,
            stall_until: None,
            down_until: None,
            broadcasts: Vec::new(),
            rows: Vec::with_capacity(cfg.row_count()),
        };
        let effects = sim.server.gateway_connected(Some("sim".into()), 0)?;
        sim.dispatch(effects);
        Ok(sim)
    }

    pub fn clock(&self) -> Duration {
        self.clock
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn serial(&self) -> &SerialLink {
        &self.serial
    }

    /// Every app data frame the server broadcast, with its send time.
    pub fn broadcasts(&self) -> &[(Duration, Vec<u8>)] {
        &self.broadcasts
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            rows: self.rows.len(),
            broadcasts: self.broadcasts.len(),
            records: self.server.records().len(),
            gateway: self.gateway.core.counters.snapshot(),
            network: self.network.diagnostics(),
            mode: self.server.mode(),
        }
    }

    fn dispatch(&mut self, effects: Effects) {
        for bytes in effects.to_gateway {
            self.inbound.send(self.clock, &bytes);
        }
        if let Some(b) = effects.broadcast {
            self.broadcasts.push((self.clock, b.bytes));
        }
    }

    /// Sends an application-layer frame to the server as a logged-in user would.
    /// The frame goes through the codec in both directions.
    pub fn app_frame(&mut self, frame: &Frame) -> Result<(), SimError> {
        let codec = Codec::for_layer(Layer::Application);
        let at_s = self.clock.as_secs_f64();
        let bytes = codec.encode(frame).map_err(|e| SimError::Event { at_s, reason: e.to_string() })?;
        let frame = codec.decode(&bytes).map_err(|e| SimError::Event { at_s, reason: e.to_string() })?;
        let user = self.cfg.account.username.clone();
        let effects = self.server.on_app_frame(Some(&user), &frame, ms(self.clock))?;
        self.dispatch(effects);
        Ok(())
    }

    fn apply(&mut self, action: &Action, at_s: f64) -> Result<(), SimError> {
        match action {
            Action::Setpoints { temperature, humidity, light_lux } => {
                let sp = Action::setpoint_frame(*temperature, *humidity, *light_lux);
                self.app_frame(&Frame::AppAutoInstruction(sp))
            }
            Action::Manual { gears } => {
                let current = self.server.last_commanded().unwrap_or_else(|| self.network.primary_bank());
                let bank = Action::manual_bank(gears, current).map_err(|reason| SimError::Event { at_s, reason })?;
                self.app_frame(&Frame::AppManualInstruction(bank))
            }
            Action::UplinkStall { duration_s } => {
                self.gateway.uplink().faults.stalled.store(true, Ordering::SeqCst);
                self.stall_until = Some(self.clock + Duration::from_secs_f64(*duration_s));
                Ok(())
            }
            Action::UplinkDown { duration_s } => {
                self.gateway.uplink().faults.down.store(true, Ordering::SeqCst);
                self.down_until = Some(self.clock + Duration::from_secs_f64(*duration_s));
                Ok(())
            }
            Action::Soil { location, moisture } => {
                self.plant.state.soil[*location] = *moisture;
                Ok(())
            }
        }
    }

    fn expire_faults(&mut self) {
        let faults = self.gateway.uplink().faults.clone();
        if self.stall_until.is_some_and(|t| self.clock >= t) {
            faults.stalled.store(false, Ordering::SeqCst);
            self.stall_until = None;
        }
        if self.down_until.is_some_and(|t| self.clock >= t) {
            faults.down.store(false, Ordering::SeqCst);
            self.down_until = None;
        }
    }

    /// Advances every component by one base tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.clock += self.cfg.tick();
        let now = self.clock;
        let now_ms = ms(now);

        while let Some(ev) = self.cfg.events.get(self.next_event) {
            if ev.at_s * 1000.0 > now_ms as f64 {
                break;
            }
            let ev = ev.clone();
            self.next_event += 1;
            self.apply(&ev.action, ev.at_s)?;
        }
        self.expire_faults();

        self.network.network_tick(self.cfg.tick(), &self.plant.state)?;
        self.gateway.poll(now);

        if self.gateway.is_connected() != self.server.is_gateway_connected() {
            if self.gateway.is_connected() {
                let effects = self.server.gateway_connected(Some("sim".into()), now_ms)?;
                self.dispatch(effects);
            } else {
                self.server.gateway_disconnected(now_ms)?;
            }
        }

        let bytes = self.uplink.recv_ready(now);
        if !bytes.is_empty() {
            let out = self.scanner.push(&bytes);
            for e in &out.errors {
                self.server.on_gateway_error(e, &[], now_ms)?;
            }
            for frame in &out.frames {
                match self.server.on_gateway_frame(frame, now_ms) {
                    Ok(effects) => self.dispatch(effects),
                    Err(EngineError::UnexpectedFrame(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }

        if now >= self.next_auto {
            let effects = self.server.auto_control_cycle(now_ms)?;
            self.dispatch(effects);
            self.next_auto += Duration::from_millis(self.cfg.server.auto_period_ms.max(1));
        }

        if now >= self.next_plant {
            let bank = self.network.primary_bank();
            self.plant.step(&bank, self.cfg.plant_dt_s)?;
            let agg = self.plant.aggregate();
            self.rows.push(TrajectoryRow {
                time_s: now.as_secs_f64(),
                temperature: agg.temperature,
                humidity: agg.humidity,
                light: agg.light,
                soil_dry: agg.soil_dry.iter().filter(|&&d| d).count(),
                gears: bank,
                automatic: self.server.mode().is_automatic(),
            });
            self.next_plant += Duration::from_secs_f64(self.cfg.plant_dt_s);
        }
        Ok(())
    }

    pub fn run_until(&mut self, end: Duration) -> Result<(), SimError> {
        while self.clock + self.cfg.tick() <= end {
            self.step()?;
        }
        Ok(())
    }

    /// Runs the configured duration, or until `stop` is raised, then flushes
    /// the server's log.
    pub fn run(&mut self, stop: &AtomicBool) -> Result<SimSummary, SimError> {
        let end = self.cfg.duration();
        while self.clock + self.cfg.tick() <= end && !stop.load(Ordering::Relaxed) {
            self.step()?;
        }
        self.server.shutdown()?;
        Ok(self.summary())
    }
}
