//! Deterministic server state machine.
//!
//! [`ServerCore`] owns the control mode, the live snapshot, the record store
//! and the accounts. Every mutation goes through it and returns the bytes to
//! send as [`Effects`]; it performs no I/O besides the store. The network
//! layer wraps it in a single actor task, and the in-process simulation calls
//! it directly.

use std::path::PathBuf;

use greenhouse_core::fuzzy::{
    controller_step, light_rule_with_hysteresis, soil_rule, ControllerState, Setpoints, StepOutput,
};
use greenhouse_core::plant::EnvAggregate;
use greenhouse_core::protocol::{to_hex, AppData, DecodeError, Frame, FrameKind, LocationReadings};
use greenhouse_core::{encode_frame, Actuator, ActuatorBank};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthError, Authenticator};
use crate::history::{
    downsample, query_history, Bucket, ControlMode, HistoryRecord, InstructionSource, Payload, RecordClass,
    SessionEventKind,
};
use crate::store::{CrashPoint, LogScan, Store, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub auto_period_ms: u64,
    /// Gateway push period; readings older than three periods are stale.
    pub push_period_ms: u64,
    /// Records between snapshots.
    pub snapshot_every: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("data"), auto_period_ms: 10_000, push_period_ms: 5_000, snapshot_every: 1000 }
    }
}

impl ServerConfig {
    pub fn staleness_ms(&self) -> u64 {
        3 * self.push_period_ms
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("server crashed by fault injection")]
    Crashed,
    #[error(transparent)]
    Store(StoreError),
    #[error("Unauthenticated")]
    Unauthenticated,
    #[error("unexpected {0:?} frame")]
    UnexpectedFrame(FrameKind),
    #[error(transparent)]
    Auth(#[from] AuthError),
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Crashed => EngineError::Crashed,
            e => EngineError::Store(e),
        }
    }
}

/// Where an injected crash strikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerCrash {
    /// The next record is written in full, then the server dies before any broadcast.
    AfterAppend,
    /// The next record is cut short after this many bytes.
    MidRecord(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppBroadcast {
    pub frame: AppData,
    /// Encoded application-layer data frame.
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Effects {
    /// Encoded network-layer instruction frames for the gateway.
    pub to_gateway: Vec<Vec<u8>>,
    pub broadcast: Option<AppBroadcast>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveSnapshot {
    pub readings: Option<(LocationReadings, u64)>,
    pub gears: Option<(ActuatorBank, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct PersistedState {
    mode: ControlMode,
    last_commanded: Option<ActuatorBank>,
    live: LiveSnapshot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recovery {
    pub log: LogScan,
    pub snapshot_seq: Option<u64>,
    pub replayed: usize,
}

#[derive(Debug)]
pub struct ServerCore {
    config: ServerConfig,
    store: Store,
    auth: Authenticator,
    state: PersistedState,
    controller: ControllerState,
    last_step: Option<StepOutput>,
    gateway_connected: bool,
    pending_gateway: Option<ActuatorBank>,
    since_snapshot: u64,
    crash: Option<ServerCrash>,
    crashed: bool,
}

impl ServerCore {
    /// Opens the data directory, recovering state from the snapshot and the log tail.
    pub fn open(config: ServerConfig) -> Result<(Self, Recovery), EngineError> {
        let (store, log) = Store::open(&config.data_dir)?;
        let auth = Authenticator::load(&config.data_dir)?;
        let snapshot = store.read_snapshot::<PersistedState>();
        let snapshot_seq = snapshot.as_ref().map(|(seq, _)| *seq);
        let (from, mut state) = snapshot.unwrap_or_default();
        let mut replayed = 0;
        for r in store.records().iter().filter(|r| r.seq > from) {
            replay(&mut state, r);
            replayed += 1;
        }
        let core = Self {
            config,
            store,
            auth,
            state,
            controller: ControllerState::default(),
            last_step: None,
            gateway_connected: false,
            pending_gateway: None,
            since_snapshot: 0,
            crash: None,
            crashed: false,
        };
        Ok((core, Recovery { log, snapshot_seq, replayed }))
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn mode(&self) -> ControlMode {
        self.state.mode
    }

    pub fn live(&self) -> LiveSnapshot {
        self.state.live
    }

    pub fn last_commanded(&self) -> Option<ActuatorBank> {
        self.state.last_commanded
    }

    pub fn last_step(&self) -> Option<&StepOutput> {
        self.last_step.as_ref()
    }

    pub fn records(&self) -> &[HistoryRecord] {
        self.store.records()
    }

    pub fn pending_gateway(&self) -> Option<ActuatorBank> {
        self.pending_gateway
    }

    pub fn is_gateway_connected(&self) -> bool {
        self.gateway_connected
    }

    /// The data frame that the next broadcast would carry, if readings exist.
    pub fn current_app_data(&self) -> Option<AppData> {
        let (readings, _) = self.state.live.readings?;
        let gears = self.state.live.gears.map_or(ActuatorBank::OFF, |(g, _)| g);
        Some(AppData::from_readings(gears, &readings))
    }

    pub fn inject_crash(&mut self, crash: ServerCrash) {
        match crash {
            ServerCrash::MidRecord(n) => self.store.inject_crash(CrashPoint::MidRecord(n)),
            ServerCrash::AfterAppend => self.crash = Some(crash),
        }
    }

    pub fn add_user(&mut self, username: &str, password: &str, now_ms: u64) -> Result<(), EngineError> {
        self.auth.set_user(username, password, now_ms);
        self.auth.save(&self.config.data_dir)?;
        Ok(())
    }

    pub fn has_users(&self) -> bool {
        self.auth.user_count() > 0
    }

    fn append(&mut self, now_ms: u64, payload: Payload) -> Result<(), EngineError> {
        if self.crashed {
            return Err(EngineError::Crashed);
        }
        let appended = self.store.append(now_ms, payload);
        if matches!(appended, Err(StoreError::Crashed)) {
            self.crashed = true;
        }
        let record = appended?.clone();
        replay(&mut self.state, &record);
        if self.crash.take() == Some(ServerCrash::AfterAppend) {
            self.crashed = true;
            return Err(EngineError::Crashed);
        }
        self.since_snapshot += 1;
        if self.since_snapshot >= self.config.snapshot_every.max(1) {
            self.checkpoint()?;
        }
        Ok(())
    }

    /// Writes a state snapshot covering every record so far.
    pub fn checkpoint(&mut self) -> Result<(), EngineError> {
        if self.crashed {
            return Err(EngineError::Crashed);
        }
        self.store.write_snapshot(&self.state)?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Handles one decoded frame from the gateway. Readings are stored; an
    /// executor status completes a push and triggers one broadcast.
    pub fn on_gateway_frame(&mut self, frame: &Frame, now_ms: u64) -> Result<Effects, EngineError> {
        match frame {
            Frame::NetSensorData(readings) => {
                self.append(now_ms, Payload::Reading { readings: *readings })?;
                Ok(Effects::default())
            }
            Frame::NetExecutorStatus(gears) => {
                self.append(now_ms, Payload::Status { gears: *gears })?;
                let broadcast = self.current_app_data().map(|frame| AppBroadcast {
                    frame,
                    bytes: encode_frame(&Frame::AppData(frame)).expect("averages of in-range readings are in range"),
                });
                Ok(Effects { broadcast, ..Effects::default() })
            }
            other => {
                let error = format!("unexpected {:?} frame from gateway", other.kind());
                let raw = encode_frame(other).map(|b| to_hex(&b)).unwrap_or_default();
                self.append(now_ms, Payload::Error { error, raw })?;
                Err(EngineError::UnexpectedFrame(other.kind()))
            }
        }
    }

    /// Records a gateway-side decode failure with the offending bytes.
    pub fn on_gateway_error(&mut self, error: &DecodeError, raw: &[u8], now_ms: u64) -> Result<(), EngineError> {
        tracing::warn!(%error, raw = %to_hex(raw), "gateway decode error");
        self.append(now_ms, Payload::Error { error: error.to_string(), raw: to_hex(raw) })
    }

    /// Handles a setpoint or manual-gear frame from an app session.
    /// `user` is `None` for sessions that have not logged in.
    pub fn on_app_frame(&mut self, user: Option<&str>, frame: &Frame, now_ms: u64) -> Result<Effects, EngineError> {
        let Some(user) = user else {
            let event = Payload::SessionEvent { event: SessionEventKind::Rejected, user: None, peer: None };
            self.append(now_ms, event)?;
            return Err(EngineError::Unauthenticated);
        };
        match frame {
            Frame::AppAutoInstruction(setpoints) => {
                self.append(now_ms, Payload::ModeChange { mode: ControlMode::Automatic { setpoints: *setpoints } })?;
                self.controller = ControllerState::default();
                tracing::info!(user, ?setpoints, "automatic mode");
                Ok(Effects::default())
            }
            Frame::AppManualInstruction(gears) => {
                if !matches!(self.state.mode, ControlMode::Manual { gears: Some(_) }) {
                    self.append(now_ms, Payload::ModeChange { mode: ControlMode::Manual { gears: Some(*gears) } })?;
                }
                self.append(now_ms, Payload::Instruction { gears: *gears, source: InstructionSource::Manual })?;
                tracing::info!(user, %gears, "manual instruction");
                Ok(self.forward(*gears))
            }
            other => {
                let error = format!("unexpected {:?} frame from app", other.kind());
                self.append(now_ms, Payload::Error { error, raw: String::new() })?;
                Err(EngineError::UnexpectedFrame(other.kind()))
            }
        }
    }

    fn forward(&mut self, gears: ActuatorBank) -> Effects {
        if !self.gateway_connected {
            self.pending_gateway = Some(gears);
            return Effects::default();
        }
        Effects { to_gateway: vec![encode_net_instruction(gears)], broadcast: None }
    }

    /// Marks the gateway session up and flushes any queued instruction.
    pub fn gateway_connected(&mut self, peer: Option<String>, now_ms: u64) -> Result<Effects, EngineError> {
        let event = SessionEventKind::GatewayConnected;
        self.append(now_ms, Payload::SessionEvent { event, user: None, peer })?;
        self.gateway_connected = true;
        Ok(match self.pending_gateway.take() {
            Some(gears) => self.forward(gears),
            None => Effects::default(),
        })
    }

    pub fn gateway_disconnected(&mut self, now_ms: u64) -> Result<(), EngineError> {
        self.gateway_connected = false;
        let event = SessionEventKind::GatewayDisconnected;
        self.append(now_ms, Payload::SessionEvent { event, user: None, peer: None })
    }

    pub fn session_event(
        &mut self,
        event: SessionEventKind,
        user: Option<&str>,
        peer: Option<String>,
        now_ms: u64,
    ) -> Result<(), EngineError> {
        self.append(now_ms, Payload::SessionEvent { event, user: user.map(str::to_string), peer })
    }

    /// Checks credentials and returns a session token. Failures are recorded.
    pub fn authenticate(
        &mut self,
        username: &str,
        password: &str,
        peer: Option<String>,
        now_ms: u64,
    ) -> Result<String, EngineError> {
        let result = self.auth.authenticate(username, password, now_ms);
        let event = match &result {
            Ok(_) => SessionEventKind::LoginSucceeded,
            Err(AuthError::RateLimited) => SessionEventKind::RateLimited,
            Err(_) => SessionEventKind::LoginFailed,
        };
        if result.is_err() {
            tracing::warn!(username, ?peer, ?event, "login refused");
        }
        self.session_event(event, Some(username), peer, now_ms)?;
        Ok(result?)
    }

    pub fn validate_token(&self, token: &str) -> Option<&str> {
        self.auth.validate(token)
    }

    /// One automatic-mode cycle. Emits an instruction only when the computed
    /// bank differs from the last commanded (or last reported) bank.
    pub fn auto_control_cycle(&mut self, now_ms: u64) -> Result<Effects, EngineError> {
        let ControlMode::Automatic { setpoints } = self.state.mode else {
            return Ok(Effects::default());
        };
        let Some((readings, at)) = self.state.live.readings else {
            tracing::debug!("auto cycle skipped: no readings yet");
            return Ok(Effects::default());
        };
        if now_ms.saturating_sub(at) > self.config.staleness_ms() {
            tracing::warn!(age_ms = now_ms - at, "auto cycle skipped: stale readings");
            return Ok(Effects::default());
        }
        let measured = EnvAggregate::from(&readings);
        let sp = Setpoints::from_frame(&setpoints);
        let (step, next) = controller_step(&sp, &measured, &self.controller);
        self.controller = next;
        self.last_step = Some(step);

        let baseline = self
            .state
            .last_commanded
            .or(self.state.live.gears.map(|(g, _)| g))
            .unwrap_or(ActuatorBank::OFF);
        let mut bank = baseline;
        step.commands.apply_to(&mut bank);
        bank.set(Actuator::Led, light_rule_with_hysteresis(sp.light, measured.light, Some(baseline.get(Actuator::Led))));
        bank.set(Actuator::Drip, soil_rule(&readings.soil_dry));
        if bank == baseline {
            return Ok(Effects::default());
        }
        self.append(now_ms, Payload::Instruction { gears: bank, source: InstructionSource::Automatic })?;
        Ok(self.forward(bank))
    }

    pub fn query_history(&self, class: RecordClass, from_ms: u64, to_ms: u64) -> Vec<HistoryRecord> {
        query_history(self.store.records(), class, from_ms, to_ms)
    }

    pub fn history_buckets(&self, class: RecordClass, from_ms: u64, to_ms: u64, buckets: usize) -> Vec<Bucket> {
        downsample(&self.query_history(class, from_ms, to_ms), from_ms, to_ms, buckets)
    }

    /// Flushes the log to disk and writes a final snapshot.
    pub fn shutdown(&mut self) -> Result<(), EngineError> {
        self.store.sync()?;
        self.checkpoint()
    }
}

pub fn encode_net_instruction(gears: ActuatorBank) -> Vec<u8> {
    encode_frame(&Frame::NetInstruction(gears)).expect("validated banks are in range")
}

fn replay(state: &mut PersistedState, record: &HistoryRecord) {
    match &record.payload {
        Payload::Reading { readings } => state.live.readings = Some((*readings, record.timestamp_ms)),
        Payload::Status { gears } => state.live.gears = Some((*gears, record.timestamp_ms)),
        Payload::Instruction { gears, source } => {
            state.last_commanded = Some(*gears);
            if *source == InstructionSource::Manual {
                state.mode = ControlMode::Manual { gears: Some(*gears) };
            }
        }
        Payload::ModeChange { mode } => state.mode = *mode,
        Payload::SessionEvent { .. } | Payload::Error { .. } => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use greenhouse_core::protocol::{parse_hex, Codec, Layer, SetpointFrame};

    fn open(dir: &std::path::Path) -> ServerCore {
        let config = ServerConfig { data_dir: dir.to_path_buf(), ..ServerConfig::default() };
        ServerCore::open(config).unwrap().0
    }

    fn readings(temps: [i8; 6]) -> Frame {
        Frame::NetSensorData(LocationReadings { temperature: temps, humidity: [60; 6], ..Default::default() })
    }

    #[test]
    fn push_pair_broadcasts_rounded_average() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        assert!(s.on_gateway_frame(&readings([18, 19, 20, 21, 22, 23]), 0).unwrap().broadcast.is_none());
        let fx = s.on_gateway_frame(&Frame::NetExecutorStatus(ActuatorBank::OFF), 0).unwrap();
        let b = fx.broadcast.unwrap();
        assert_eq!(b.frame.temperature, 21);
        assert_eq!(b.frame.gears, ActuatorBank::OFF);
        assert_eq!(s.records().len(), 2);
    }

    #[test]
    fn manual_frame_is_reframed_for_gateway() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        s.gateway_connected(None, 0).unwrap();
        let gears = ActuatorBank::OFF.with(Actuator::Cooling, 4);
        let app = encode_frame(&Frame::AppManualInstruction(gears)).unwrap();
        let fx = s.on_app_frame(Some("u"), &Frame::AppManualInstruction(gears), 1).unwrap();
        assert_eq!(fx.to_gateway.len(), 1);
        assert_eq!(fx.to_gateway[0], app);
        assert!(fx.to_gateway[0].windows(2).any(|w| w == [0x32, 0x04]));
        assert_eq!(s.mode(), ControlMode::Manual { gears: Some(gears) });
    }

    #[test]
    fn manual_frame_is_queued_while_gateway_is_away() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        let a = ActuatorBank::OFF.with(Actuator::Led, 1);
        let b = ActuatorBank::OFF.with(Actuator::Led, 2);
        assert!(s.on_app_frame(Some("u"), &Frame::AppManualInstruction(a), 1).unwrap().to_gateway.is_empty());
        s.on_app_frame(Some("u"), &Frame::AppManualInstruction(b), 2).unwrap();
        assert_eq!(s.pending_gateway(), Some(b));
        let fx = s.gateway_connected(None, 3).unwrap();
        assert_eq!(fx.to_gateway, vec![encode_net_instruction(b)]);
        assert_eq!(s.pending_gateway(), None);
    }

    #[test]
    fn setpoints_switch_to_automatic() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        let codec = Codec::for_layer(Layer::Application);
        let frame = codec.decode(&parse_hex("A5 09 40 19 41 3C 42 64 0D").unwrap()).unwrap();
        s.on_app_frame(Some("u"), &frame, 0).unwrap();
        let sp = SetpointFrame { temperature: 25, humidity: 60, light: 100 };
        assert_eq!(s.mode(), ControlMode::Automatic { setpoints: sp });
    }

    #[test]
    fn unauthenticated_frames_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        let r = s.on_app_frame(None, &Frame::AppManualInstruction(ActuatorBank::OFF), 0);
        assert!(matches!(r, Err(EngineError::Unauthenticated)));
        assert_eq!(s.records()[0].class(), RecordClass::SessionEvent);
    }

    fn auto_core(dir: &std::path::Path, temp: i8, humidity: u8) -> ServerCore {
        let mut s = open(dir);
        s.gateway_connected(None, 0).unwrap();
        let sp = SetpointFrame { temperature: 25, humidity: 60, light: 0 };
        s.on_app_frame(Some("u"), &Frame::AppAutoInstruction(sp), 0).unwrap();
        let r = LocationReadings { temperature: [temp; 6], humidity: [humidity; 6], ..Default::default() };
        s.on_gateway_frame(&Frame::NetSensorData(r), 0).unwrap();
        s.on_gateway_frame(&Frame::NetExecutorStatus(ActuatorBank::OFF), 0).unwrap();
        s
    }

    #[test]
    fn auto_cycle_at_setpoint_emits_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = auto_core(dir.path(), 25, 60);
        assert_eq!(s.auto_control_cycle(1000).unwrap(), Effects::default());
    }

    #[test]
    fn auto_cycle_heats_a_cold_greenhouse() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = auto_core(dir.path(), 20, 60);
        let fx = s.auto_control_cycle(1000).unwrap();
        let expected = ActuatorBank::OFF.with(Actuator::Heating, 3);
        assert_eq!(fx.to_gateway, vec![encode_net_instruction(expected)]);
    }

    #[test]
    fn auto_cycle_skips_stale_readings() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = auto_core(dir.path(), 20, 60);
        assert_eq!(s.auto_control_cycle(15_001).unwrap(), Effects::default());
    }

    #[test]
    fn manual_mode_never_emits_from_auto_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        s.on_gateway_frame(&readings([10; 6]), 0).unwrap();
        assert_eq!(s.auto_control_cycle(0).unwrap(), Effects::default());
    }

    #[test]
    fn state_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = auto_core(dir.path(), 20, 60);
            s.auto_control_cycle(1000).unwrap();
        }
        let s = open(dir.path());
        assert!(s.mode().is_automatic());
        assert_eq!(s.last_commanded(), Some(ActuatorBank::OFF.with(Actuator::Heating, 3)));
    }

    #[test]
    fn crash_after_append_keeps_record_and_skips_broadcast() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(dir.path());
        s.on_gateway_frame(&readings([20; 6]), 0).unwrap();
        s.inject_crash(ServerCrash::AfterAppend);
        assert!(matches!(s.on_gateway_frame(&Frame::NetExecutorStatus(ActuatorBank::OFF), 1), Err(EngineError::Crashed)));
        assert!(matches!(s.on_gateway_frame(&readings([20; 6]), 2), Err(EngineError::Crashed)));
        drop(s);
        let s = open(dir.path());
        assert_eq!(s.records().len(), 2);
    }
}
