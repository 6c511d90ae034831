//! Serial ↔ TCP gateway.
//!
//! Two mailboxes decouple the serial side from the network side. The data
//! mailbox holds the latest per-location readings and actuator gears; the
//! instruction mailbox holds at most one pending actuator bank plus its
//! "new data" flag. The soil alarm writes straight to serial so it keeps
//! working while the uplink is stalled or down.
//!
//! [`GatewayCore`] holds the shared state and the task bodies. Two drivers
//! run them: [`GatewayScheduler`] polls them in a fixed order against a
//! simulated clock; [`threaded::spawn`] runs each task on its own thread over
//! real sockets.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::actuator::{Actuator, ActuatorBank};
use crate::link::{Pipe, SerialLink};
use crate::protocol::{
    encode_frame, Codec, DecodeError, Frame, FrameScanner, Layer, LocationReadings, Reading, Report, SensorData,
    SensorInstruction, LOCATIONS, MAX_DETECTING_ADDRESS, MIN_ADDRESS, PRIMARY_EXECUTIVE,
};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayPeriods {
    #[serde(with = "crate::link::millis")]
    pub serial_tx: Duration,
    #[serde(with = "crate::link::millis")]
    pub alarm: Duration,
    /// Interval between uplink pushes of the data mailbox.
    #[serde(with = "crate::link::millis")]
    pub push: Duration,
    /// Cycles an alarm instruction may go unacknowledged before it is re-sent.
    pub alarm_retry_cycles: u32,
}

impl Default for GatewayPeriods {
    fn default() -> Self {
        Self {
            serial_tx: Duration::from_millis(100),
            alarm: Duration::from_secs(1),
            push: Duration::from_secs(5),
            alarm_retry_cycles: 5,
        }
    }
}

/// Latest readings and gears as seen on the serial side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataSnapshot {
    pub readings: LocationReadings,
    pub gears: ActuatorBank,
    /// Which (location, quantity) readings have arrived at least once.
    pub seen: [[bool; 4]; LOCATIONS],
    pub last_update: Option<Duration>,
    pub version: u64,
}

impl DataSnapshot {
    pub fn complete(&self) -> bool {
        self.seen.iter().all(|q| q.iter().all(|&s| s))
    }

    /// Folds one sensor-layer frame in. Returns `false` for frames that carry
    /// nothing the gateway tracks (a status echo from the secondary executive).
    pub fn apply(&mut self, data: &SensorData, now: Duration) -> bool {
        match data.report {
            Report::Reading(reading) => {
                if !(MIN_ADDRESS..=MAX_DETECTING_ADDRESS).contains(&data.address) {
                    return false;
                }
                let i = usize::from(data.address - 1);
                match reading {
                    Reading::Temperature(t) => self.readings.temperature[i] = t,
                    Reading::Humidity(h) => self.readings.humidity[i] = h,
                    Reading::Light(l) => self.readings.light[i] = l,
                    Reading::Soil { dry } => self.readings.soil_dry[i] = dry,
                }
                self.seen[i][reading.quantity() as usize] = true;
            }
            Report::Status { actuator, gear } => {
                if data.address != PRIMARY_EXECUTIVE {
                    return false;
                }
                self.gears.set_clamped(actuator, gear);
            }
        }
        self.last_update = Some(now);
        self.version += 1;
        true
    }
}

#[derive(Debug, Default)]
pub struct DataMailbox {
    inner: RwLock<DataSnapshot>,
}

impl DataMailbox {
    pub fn snapshot(&self) -> DataSnapshot {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn update<R>(&self, f: impl FnOnce(&mut DataSnapshot) -> R) -> R {
        f(&mut self.inner.write().unwrap_or_else(|e| e.into_inner()))
    }
}

/// Single-slot instruction mailbox. The slot being occupied is the flag.
#[derive(Debug, Default)]
pub struct InstructionMailbox {
    slot: Mutex<Option<ActuatorBank>>,
}

impl InstructionMailbox {
    /// Stores `bank`, replacing any unconsumed instruction. Returns `true`
    /// when an earlier instruction was superseded.
    pub fn put(&self, bank: ActuatorBank) -> bool {
        lock(&self.slot).replace(bank).is_some()
    }

    /// Consumes the pending instruction and clears the flag atomically.
    pub fn take(&self) -> Option<ActuatorBank> {
        lock(&self.slot).take()
    }

    pub fn flag(&self) -> bool {
        lock(&self.slot).is_some()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlarmState {
    /// Drip was switched on by the alarm, so the alarm may switch it off again.
    pub engaged: bool,
    /// Gear sent and not yet echoed, with the cycles spent waiting.
    pub awaiting: Option<(u8, u32)>,
}

#[derive(Debug, Default)]
pub struct GatewayCounters {
    pub serial_frames_in: AtomicU64,
    pub serial_decode_errors: AtomicU64,
    pub serial_frames_out: AtomicU64,
    pub net_frames_in: AtomicU64,
    pub net_decode_errors: AtomicU64,
    pub net_unexpected: AtomicU64,
    pub instructions_superseded: AtomicU64,
    pub pushes_sent: AtomicU64,
    pub pushes_dropped: AtomicU64,
    pub alarm_frames: AtomicU64,
    pub reconnects: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub serial_frames_in: u64,
    pub serial_decode_errors: u64,
    pub serial_frames_out: u64,
    pub net_frames_in: u64,
    pub net_decode_errors: u64,
    pub net_unexpected: u64,
    pub instructions_superseded: u64,
    pub pushes_sent: u64,
    pub pushes_dropped: u64,
    pub alarm_frames: u64,
    pub reconnects: u64,
}

impl GatewayCounters {
    fn bump(c: &AtomicU64, n: u64) {
        c.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let g = |c: &AtomicU64| c.load(Ordering::Relaxed);
        CounterSnapshot {
            serial_frames_in: g(&self.serial_frames_in),
            serial_decode_errors: g(&self.serial_decode_errors),
            serial_frames_out: g(&self.serial_frames_out),
            net_frames_in: g(&self.net_frames_in),
            net_decode_errors: g(&self.net_decode_errors),
            net_unexpected: g(&self.net_unexpected),
            instructions_superseded: g(&self.instructions_superseded),
            pushes_sent: g(&self.pushes_sent),
            pushes_dropped: g(&self.pushes_dropped),
            alarm_frames: g(&self.alarm_frames),
            reconnects: g(&self.reconnects),
        }
    }
}

/// Shared gateway state plus the body of every task.
#[derive(Debug)]
pub struct GatewayCore {
    pub data: DataMailbox,
    pub instructions: InstructionMailbox,
    pub counters: GatewayCounters,
    alarm: Mutex<AlarmState>,
    alarm_retry_cycles: u32,
    serial_scanner: Mutex<FrameScanner>,
    net_scanner: Mutex<FrameScanner>,
}

impl Default for GatewayCore {
    fn default() -> Self {
        Self::new(GatewayPeriods::default().alarm_retry_cycles)
    }
}

impl GatewayCore {
    pub fn new(alarm_retry_cycles: u32) -> Self {
        Self {
            data: DataMailbox::default(),
            instructions: InstructionMailbox::default(),
            counters: GatewayCounters::default(),
            alarm: Mutex::new(AlarmState::default()),
            alarm_retry_cycles,
            serial_scanner: Mutex::new(FrameScanner::new(Codec::for_layer(Layer::Sensor))),
            net_scanner: Mutex::new(FrameScanner::new(Codec::for_layer(Layer::Network))),
        }
    }

    pub fn alarm_state(&self) -> AlarmState {
        *lock(&self.alarm)
    }

    /// Serial RX for one decoded frame. Only sensor-layer data is accepted.
    pub fn serial_rx(&self, frame: &Frame, now: Duration) -> bool {
        let Frame::SensorData(data) = frame else {
            return false;
        };
        GatewayCounters::bump(&self.counters.serial_frames_in, 1);
        self.data.update(|s| s.apply(data, now))
    }

    /// Serial RX for raw bytes; frames may be split across calls.
    pub fn serial_rx_bytes(&self, bytes: &[u8], now: Duration) -> Vec<DecodeError> {
        let out = lock(&self.serial_scanner).push(bytes);
        GatewayCounters::bump(&self.counters.serial_decode_errors, out.errors.len() as u64);
        for frame in &out.frames {
            self.serial_rx(frame, now);
        }
        out.errors
    }

    /// Serial TX: consumes the pending instruction and emits one set frame for
    /// each actuator whose gear differs from the last reported gear.
    pub fn serial_tx_cycle(&self) -> Vec<SensorInstruction> {
        let Some(target) = self.instructions.take() else {
            return Vec::new();
        };
        let known = self.data.snapshot().gears;
        known
            .changes_to(&target)
            .into_iter()
            .map(|(actuator, gear)| SensorInstruction::set(PRIMARY_EXECUTIVE, actuator, gear))
            .collect()
    }

    /// Network RX for one decoded frame. Last writer wins on the instruction mailbox.
    pub fn net_rx_frame(&self, frame: &Frame) -> bool {
        GatewayCounters::bump(&self.counters.net_frames_in, 1);
        match frame {
            Frame::NetInstruction(bank) => {
                if self.instructions.put(*bank) {
                    GatewayCounters::bump(&self.counters.instructions_superseded, 1);
                }
                true
            }
            _ => {
                GatewayCounters::bump(&self.counters.net_unexpected, 1);
                false
            }
        }
    }

    pub fn net_rx(&self, bytes: &[u8]) -> Vec<DecodeError> {
        let out = lock(&self.net_scanner).push(bytes);
        GatewayCounters::bump(&self.counters.net_decode_errors, out.errors.len() as u64);
        for frame in &out.frames {
            self.net_rx_frame(frame);
        }
        out.errors
    }

    /// Network TX payload: the per-location data frame once every reading has
    /// arrived at least once, followed by the executor status frame.
    pub fn net_tx_cycle(&self) -> Vec<Frame> {
        let snap = self.data.snapshot();
        let mut frames = Vec::with_capacity(2);
        if snap.complete() {
            frames.push(Frame::NetSensorData(snap.readings));
        }
        frames.push(Frame::NetExecutorStatus(snap.gears));
        frames
    }

    pub fn net_tx_bytes(&self) -> Vec<u8> {
        self.net_tx_cycle().iter().flat_map(|f| encode_frame(f).expect("mailbox values are in range")).collect()
    }

    /// Soil alarm: switches drip on when any location is dry and off again
    /// once all locations are wet, but only if the alarm switched it on.
    pub fn alarm_task_cycle(&self) -> Option<SensorInstruction> {
        let snap = self.data.snapshot();
        let dry = snap.readings.soil_dry.iter().any(|&d| d);
        let drip = snap.gears.get(Actuator::Drip);
        let mut alarm = lock(&self.alarm);
        if let Some((gear, waited)) = alarm.awaiting {
            if drip == gear {
                alarm.awaiting = None;
            } else if waited + 1 < self.alarm_retry_cycles {
                alarm.awaiting = Some((gear, waited + 1));
                return None;
            } else {
                alarm.awaiting = None;
            }
        }
        let want = if dry && drip == 0 {
            alarm.engaged = true;
            Some(1)
        } else if !dry && alarm.engaged {
            if drip == 0 {
                alarm.engaged = false;
                None
            } else {
                Some(0)
            }
        } else {
            None
        };
        let gear = want?;
        alarm.awaiting = Some((gear, 0));
        GatewayCounters::bump(&self.counters.alarm_frames, 1);
        Some(SensorInstruction::set(PRIMARY_EXECUTIVE, Actuator::Drip, gear))
    }
}

pub fn encode_instructions(instructions: &[SensorInstruction]) -> Vec<u8> {
    instructions
        .iter()
        .flat_map(|i| encode_frame(&Frame::SensorInstruction(*i)).expect("gateway instructions are in range"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendError {
    /// The peer is not draining; the payload was not sent.
    WouldBlock,
    Disconnected,
}

/// Uplink from the gateway to the cloud server.
pub trait NetUplink {
    fn try_send(&mut self, now: Duration, bytes: &[u8]) -> Result<(), SendError>;
    /// Attempts to (re)establish the connection.
    fn reconnect(&mut self, now: Duration) -> bool;
}

/// Exponential reconnect delay, doubling from `min` up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub min: Duration,
    pub max: Duration,
    next: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(Duration::from_secs(1), Duration::from_secs(30))
    }
}

impl Backoff {
    pub fn new(min: Duration, max: Duration) -> Self {
        Self { min, max, next: min }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.max);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.min;
    }
}

/// Fault switches for [`PipeUplink`].
#[derive(Debug, Default)]
pub struct UplinkFaults {
    pub stalled: std::sync::atomic::AtomicBool,
    pub down: std::sync::atomic::AtomicBool,
}

/// Uplink over an in-memory pipe with injectable stalls and outages.
#[derive(Debug, Clone)]
pub struct PipeUplink {
    pub pipe: Pipe,
    pub faults: std::sync::Arc<UplinkFaults>,
    connected: bool,
}

impl PipeUplink {
    pub fn new(pipe: Pipe) -> Self {
        Self { pipe, faults: Default::default(), connected: true }
    }
}

impl NetUplink for PipeUplink {
    fn try_send(&mut self, now: Duration, bytes: &[u8]) -> Result<(), SendError> {
        if !self.connected || self.faults.down.load(Ordering::Relaxed) {
            self.connected = false;
            return Err(SendError::Disconnected);
        }
        if self.faults.stalled.load(Ordering::Relaxed) {
            return Err(SendError::WouldBlock);
        }
        self.pipe.send(now, bytes);
        Ok(())
    }

    fn reconnect(&mut self, _now: Duration) -> bool {
        self.connected = !self.faults.down.load(Ordering::Relaxed);
        self.connected
    }
}

/// Deterministic driver: each [`GatewayScheduler::poll`] runs every task that
/// is due, in a fixed order: serial RX, network RX, alarm, serial TX, network TX.
#[derive(Debug)]
pub struct GatewayScheduler<U> {
    pub core: std::sync::Arc<GatewayCore>,
    pub periods: GatewayPeriods,
    serial: SerialLink,
    inbound: Pipe,
    uplink: U,
    next_serial_tx: Duration,
    next_alarm: Duration,
    next_push: Duration,
    connected: bool,
    retry_at: Duration,
    backoff: Backoff,
}

impl<U: NetUplink> GatewayScheduler<U> {
    /// `serial` is the coordinator link; `inbound` carries server → gateway bytes.
    pub fn new(periods: GatewayPeriods, serial: SerialLink, inbound: Pipe, uplink: U) -> Self {
        Self {
            core: std::sync::Arc::new(GatewayCore::new(periods.alarm_retry_cycles)),
            next_serial_tx: periods.serial_tx,
            next_alarm: periods.alarm,
            next_push: periods.push,
            periods,
            serial,
            inbound,
            uplink,
            connected: true,
            retry_at: Duration::ZERO,
            backoff: Backoff::default(),
        }
    }

    pub fn uplink(&self) -> &U {
        &self.uplink
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    fn write_serial(&self, now: Duration, instructions: &[SensorInstruction]) {
        if instructions.is_empty() {
            return;
        }
        self.serial.downlink.send(now, &encode_instructions(instructions));
        GatewayCounters::bump(&self.core.counters.serial_frames_out, instructions.len() as u64);
    }

    pub fn poll(&mut self, now: Duration) {
        let core = self.core.clone();
        let bytes = self.serial.uplink.recv_ready(now);
        if !bytes.is_empty() {
            core.serial_rx_bytes(&bytes, now);
        }
        let bytes = self.inbound.recv_ready(now);
        if !bytes.is_empty() && self.connected {
            core.net_rx(&bytes);
        }
        if now >= self.next_alarm {
            if let Some(ins) = core.alarm_task_cycle() {
                self.write_serial(now, &[ins]);
            }
            self.next_alarm = advance(self.next_alarm, self.periods.alarm, now);
        }
        if now >= self.next_serial_tx {
            let out = core.serial_tx_cycle();
            self.write_serial(now, &out);
            self.next_serial_tx = advance(self.next_serial_tx, self.periods.serial_tx, now);
        }
        if now >= self.next_push {
            self.push(now);
            self.next_push = advance(self.next_push, self.periods.push, now);
        }
    }

    fn push(&mut self, now: Duration) {
        let c = &self.core.counters;
        if !self.connected {
            if now < self.retry_at {
                GatewayCounters::bump(&c.pushes_dropped, 1);
                return;
            }
            if self.uplink.reconnect(now) {
                self.connected = true;
                self.backoff.reset();
                GatewayCounters::bump(&c.reconnects, 1);
                tracing::info!(?now, "uplink reconnected");
            } else {
                self.retry_at = now + self.backoff.next_delay();
                GatewayCounters::bump(&c.pushes_dropped, 1);
                return;
            }
        }
        match self.uplink.try_send(now, &self.core.net_tx_bytes()) {
            Ok(()) => GatewayCounters::bump(&c.pushes_sent, 1),
            Err(SendError::WouldBlock) => GatewayCounters::bump(&c.pushes_dropped, 1),
            Err(SendError::Disconnected) => {
                GatewayCounters::bump(&c.pushes_dropped, 1);
                self.connected = false;
                self.retry_at = now + self.backoff.next_delay();
                tracing::warn!(?now, "uplink lost");
            }
        }
    }
}

fn advance(due: Duration, period: Duration, now: Duration) -> Duration {
    let period = period.max(Duration::from_millis(1));
    let mut next = due + period;
    while next <= now {
        next += period;
    }
    next
}

/// One OS thread per task over real sockets.
pub mod threaded {
    use std::io::{self, Read, Write};
    use std::net::{SocketAddr, TcpStream};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::{Arc, Mutex};
    use std::thread::{self, JoinHandle};
    use std::time::{Duration, Instant};

    use super::{encode_instructions, lock, Backoff, GatewayCore, GatewayCounters, GatewayPeriods};

    const READ_TIMEOUT: Duration = Duration::from_millis(50);
    const NET_WRITE_TIMEOUT: Duration = Duration::from_millis(500);

    #[derive(Debug, Clone)]
    pub struct ThreadedConfig {
        pub serial_addr: SocketAddr,
        pub server_addr: SocketAddr,
        pub periods: GatewayPeriods,
        pub backoff: Backoff,
    }

    pub struct GatewayHandle {
        pub core: Arc<GatewayCore>,
        shutdown: Arc<AtomicBool>,
        threads: Vec<JoinHandle<()>>,
    }

    impl GatewayHandle {
        pub fn shutdown(self) {
            self.shutdown.store(true, Ordering::SeqCst);
            for t in self.threads {
                let _ = t.join();
            }
        }

        pub fn is_running(&self) -> bool {
            !self.shutdown.load(Ordering::SeqCst)
        }
    }

    struct NetConn {
        stream: Mutex<Option<TcpStream>>,
        generation: std::sync::atomic::AtomicU64,
    }

    fn sleep_until(deadline: Instant, shutdown: &AtomicBool) -> bool {
        while !shutdown.load(Ordering::Relaxed) {
            let now = Instant::now();
            if now >= deadline {
                return true;
            }
            thread::sleep((deadline - now).min(Duration::from_millis(20)));
        }
        false
    }

    /// Connects to the serial endpoint and starts all five tasks. The uplink is
    /// established by the network TX task and re-established with backoff.
    pub fn spawn(config: ThreadedConfig) -> io::Result<GatewayHandle> {
        let serial = TcpStream::connect(config.serial_addr)?;
        serial.set_nodelay(true)?;
        let serial_rx = serial.try_clone()?;
        serial_rx.set_read_timeout(Some(READ_TIMEOUT))?;
        let serial_tx = Arc::new(Mutex::new(serial));

        let core = Arc::new(GatewayCore::new(config.periods.alarm_retry_cycles));
        let shutdown = Arc::new(AtomicBool::new(false));
        let conn = Arc::new(NetConn { stream: Mutex::new(None), generation: Default::default() });
        let start = Instant::now();
        let mut threads = Vec::new();

        {
            let (core, shutdown) = (core.clone(), shutdown.clone());
            let mut rx = serial_rx;
            threads.push(thread::Builder::new().name("serial-rx".into()).spawn(move || {
                let mut buf = [0u8; 1024];
                while !shutdown.load(Ordering::Relaxed) {
                    match rx.read(&mut buf) {
                        Ok(0) => {
                            tracing::warn!("serial link closed");
                            break;
                        }
                        Ok(n) => {
                            core.serial_rx_bytes(&buf[..n], start.elapsed());
                        }
                        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                        Err(e) => {
                            tracing::warn!(%e, "serial read failed");
                            break;
                        }
                    }
                }
            })?);
        }

        let write_serial = |tx: &Mutex<TcpStream>, core: &GatewayCore, ins: &[super::SensorInstruction]| {
            if ins.is_empty() {
                return;
            }
            if let Err(e) = lock(tx).write_all(&encode_instructions(ins)) {
                tracing::warn!(%e, "serial write failed");
                return;
            }
            GatewayCounters::bump(&core.counters.serial_frames_out, ins.len() as u64);
        };

        {
            let (core, shutdown, tx) = (core.clone(), shutdown.clone(), serial_tx.clone());
            let period = config.periods.serial_tx;
            threads.push(thread::Builder::new().name("serial-tx".into()).spawn(move || {
                let mut due = Instant::now() + period;
                while sleep_until(due, &shutdown) {
                    write_serial(&tx, &core, &core.serial_tx_cycle());
                    due += period;
                }
            })?);
        }

        {
            let (core, shutdown, tx) = (core.clone(), shutdown.clone(), serial_tx);
            let period = config.periods.alarm;
            threads.push(thread::Builder::new().name("alarm".into()).spawn(move || {
                let mut due = Instant::now() + period;
                while sleep_until(due, &shutdown) {
                    if let Some(ins) = core.alarm_task_cycle() {
                        write_serial(&tx, &core, &[ins]);
                    }
                    due += period;
                }
            })?);
        }

        {
            let (core, shutdown, conn) = (core.clone(), shutdown.clone(), conn.clone());
            threads.push(thread::Builder::new().name("net-rx".into()).spawn(move || {
                let mut seen = 0;
                let mut reader: Option<TcpStream> = None;
                let mut buf = [0u8; 1024];
                while !shutdown.load(Ordering::Relaxed) {
                    let generation = conn.generation.load(Ordering::SeqCst);
                    if generation != seen {
                        seen = generation;
                        reader = lock(&conn.stream).as_ref().and_then(|s| s.try_clone().ok());
                        if let Some(r) = &reader {
                            let _ = r.set_read_timeout(Some(READ_TIMEOUT));
                        }
                    }
                    let Some(r) = reader.as_mut() else {
                        thread::sleep(READ_TIMEOUT);
                        continue;
                    };
                    match r.read(&mut buf) {
                        Ok(0) => {
                            reader = None;
                            let mut guard = lock(&conn.stream);
                            if conn.generation.load(Ordering::SeqCst) == seen {
                                *guard = None;
                            }
                        }
                        Ok(n) => {
                            core.net_rx(&buf[..n]);
                        }
                        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                        Err(_) => reader = None,
                    }
                }
            })?);
        }

        {
            let (core, shutdown) = (core.clone(), shutdown.clone());
            let (server, period, mut backoff) = (config.server_addr, config.periods.push, config.backoff);
            threads.push(thread::Builder::new().name("net-tx".into()).spawn(move || {
                let c = &core.counters;
                let mut retry_at = Instant::now();
                let mut due = Instant::now() + period;
                while sleep_until(due, &shutdown) {
                    due += period;
                    let mut guard = lock(&conn.stream);
                    if guard.is_none() {
                        if Instant::now() < retry_at {
                            GatewayCounters::bump(&c.pushes_dropped, 1);
                            continue;
                        }
                        match TcpStream::connect_timeout(&server, Duration::from_secs(1)) {
                            Ok(s) => {
                                let _ = s.set_nodelay(true);
                                let _ = s.set_write_timeout(Some(NET_WRITE_TIMEOUT));
                                *guard = Some(s);
                                conn.generation.fetch_add(1, Ordering::SeqCst);
                                backoff.reset();
                                GatewayCounters::bump(&c.reconnects, 1);
                                tracing::info!(%server, "uplink connected");
                            }
                            Err(e) => {
                                let delay = backoff.next_delay();
                                retry_at = Instant::now() + delay;
                                GatewayCounters::bump(&c.pushes_dropped, 1);
                                tracing::debug!(%e, ?delay, "uplink connect failed");
                                continue;
                            }
                        }
                    }
                    let stream = guard.as_mut().expect("connected above");
                    match stream.write_all(&core.net_tx_bytes()) {
                        Ok(()) => GatewayCounters::bump(&c.pushes_sent, 1),
                        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                            GatewayCounters::bump(&c.pushes_dropped, 1);
                        }
                        Err(e) => {
                            tracing::warn!(%e, "uplink lost");
                            *guard = None;
                            retry_at = Instant::now() + backoff.next_delay();
                            GatewayCounters::bump(&c.pushes_dropped, 1);
                        }
                    }
                }
            })?);
        }

        Ok(GatewayHandle { core, shutdown, threads })
    }
}
