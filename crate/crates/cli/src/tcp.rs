//! The stack over real sockets: a simulated coordinator serial port exposed as
//! a TCP listener, the threaded gateway, and the tokio server.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use greenhouse_core::gateway::threaded::{self, ThreadedConfig};
use greenhouse_core::gateway::{Backoff, CounterSnapshot};
use greenhouse_core::link::SerialLink;
use greenhouse_core::plant::Greenhouse;
use greenhouse_core::protocol::Frame;
use greenhouse_core::sensor_net::{Diagnostics, SensorNetwork};
use greenhouse_core::ActuatorBank;
use greenhouse_server::client::AppClient;
use greenhouse_server::engine::{EngineError, ServerConfig, ServerCore};
use greenhouse_server::net::{NetConfig, NetError, ServerMetrics};

use crate::scenario::{Action, ScenarioConfig};
use crate::sim::TrajectoryRow;

#[derive(Debug, thiserror::Error)]
pub enum TcpError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("server: {0}")]
    Engine(#[from] EngineError),
    #[error("server: {0}")]
    Net(#[from] NetError),
    #[error("plant: {0}")]
    Plant(String),
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Default)]
struct Shared {
    rows: Vec<TrajectoryRow>,
    bank: ActuatorBank,
    clock: Duration,
    diagnostics: Diagnostics,
    finished: bool,
}

/// Plant and sensor network running in real time behind a TCP "serial port".
/// One client (the gateway) at a time; a new connection replaces the old one.
pub struct SerialSim {
    pub addr: SocketAddr,
    pub link: SerialLink,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl SerialSim {
    pub fn spawn(cfg: &ScenarioConfig, listen: SocketAddr, duration: Option<Duration>) -> Result<Self, TcpError> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let link = SerialLink::new(cfg.serial_link());
        let mut network = SensorNetwork::new(cfg.network_config(), link.clone());
        let mut plant = Greenhouse::new(cfg.initial_state(), cfg.plant.clone(), cfg.ambient.clone(), cfg.plant_seed())
            .map_err(|e| TcpError::Plant(e.to_string()))?;
        let shared = Arc::new(Mutex::new(Shared::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let tick = cfg.tick();
        let plant_dt = Duration::from_secs_f64(cfg.plant_dt_s);
        let soil_events: Vec<(Duration, usize, f64)> = cfg
            .events
            .iter()
            .filter_map(|e| match e.action {
                Action::Soil { location, moisture } => Some((Duration::from_secs_f64(e.at_s), location, moisture)),
                _ => None,
            })
            .collect();

        let thread = {
            let (link, shared, stop) = (link.clone(), shared.clone(), stop.clone());
            thread::Builder::new().name("serial-sim".into()).spawn(move || {
                let start = Instant::now();
                let mut clock = Duration::ZERO;
                let mut next_plant = plant_dt;
                let mut next_soil = 0;
                let mut client: Option<TcpStream> = None;
                let mut buf = [0u8; 2048];
                while !stop.load(Ordering::Relaxed) && duration.map_or(true, |d| clock + tick <= d) {
                    clock += tick;
                    if let Some(wait) = (start + clock).checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                    if let Ok((s, peer)) = listener.accept() {
                        tracing::info!(%peer, "serial client connected");
                        if s.set_nonblocking(true).is_ok() {
                            let _ = s.set_nodelay(true);
                            client = Some(s);
                        }
                    }
                    if let Some(c) = client.as_mut() {
                        loop {
                            match c.read(&mut buf) {
                                Ok(0) => {
                                    tracing::info!("serial client closed");
                                    client = None;
                                    break;
                                }
                                Ok(n) => link.downlink.send(clock, &buf[..n]),
                                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                                Err(e) => {
                                    tracing::warn!(%e, "serial read failed");
                                    client = None;
                                    break;
                                }
                            }
                        }
                    }
                    while let Some(&(at, location, moisture)) = soil_events.get(next_soil) {
                        if at > clock {
                            break;
                        }
                        plant.state.soil[location] = moisture;
                        next_soil += 1;
                    }
                    if let Err(e) = network.network_tick(tick, &plant.state) {
                        tracing::error!(%e, "network tick failed");
                        break;
                    }
                    let out = link.uplink.recv_ready(clock);
                    if let (Some(c), false) = (client.as_mut(), out.is_empty()) {
                        let written = c.set_nonblocking(false).and_then(|_| c.write_all(&out)).and_then(|_| c.set_nonblocking(true));
                        if let Err(e) = written {
                            tracing::warn!(%e, "serial write failed");
                            client = None;
                        }
                    }
                    let mut row = None;
                    if clock >= next_plant {
                        let bank = network.primary_bank();
                        if let Err(e) = plant.step(&bank, plant_dt.as_secs_f64()) {
                            tracing::error!(%e, "plant step failed");
                            break;
                        }
                        let agg = plant.aggregate();
                        row = Some(TrajectoryRow {
                            time_s: clock.as_secs_f64(),
                            temperature: agg.temperature,
                            humidity: agg.humidity,
                            light: agg.light,
                            soil_dry: agg.soil_dry.iter().filter(|&&d| d).count(),
                            gears: bank,
                            automatic: false,
                        });
                        next_plant += plant_dt;
                    }
                    let mut s = lock(&shared);
                    s.clock = clock;
                    s.bank = network.primary_bank();
                    s.diagnostics = network.diagnostics();
                    s.rows.extend(row);
                }
                lock(&shared).finished = true;
            })?
        };
        Ok(Self { addr, link, shared, stop, thread: Some(thread) })
    }

    pub fn bank(&self) -> ActuatorBank {
        lock(&self.shared).bank
    }

    pub fn clock(&self) -> Duration {
        lock(&self.shared).clock
    }

    pub fn diagnostics(&self) -> Diagnostics {
        lock(&self.shared).diagnostics
    }

    pub fn is_finished(&self) -> bool {
        lock(&self.shared).finished
    }

    /// Stops the simulation thread and returns the trajectory so far.
    pub fn stop(mut self) -> Vec<TrajectoryRow> {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        std::mem::take(&mut lock(&self.shared).rows)
    }
}

impl Drop for SerialSim {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Debug)]
pub struct TcpRun {
    pub rows: Vec<TrajectoryRow>,
    pub metrics: ServerMetrics,
    pub gateway: CounterSnapshot,
    pub network: Diagnostics,
}

fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}

pub fn server_config(cfg: &ScenarioConfig, data_dir: &Path) -> ServerConfig {
    ServerConfig {
        data_dir: data_dir.to_path_buf(),
        auto_period_ms: cfg.server.auto_period_ms,
        push_period_ms: cfg.gateway.push.as_millis() as u64,
        snapshot_every: cfg.server.snapshot_every,
    }
}

/// Runs the full stack on loopback sockets in real time until the scenario
/// duration passes or `stop` is raised. Uplink fault events are not
/// supported here and are skipped with a warning.
pub fn run_all_tcp(cfg: &ScenarioConfig, data_dir: &Path, stop: Arc<AtomicBool>) -> Result<TcpRun, TcpError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let (mut core, _) = ServerCore::open(server_config(cfg, data_dir))?;
    if !core.has_users() {
        core.add_user(&cfg.account.username, &cfg.account.password, greenhouse_server::net::now_ms())?;
    }
    let net = NetConfig {
        gateway_addr: loopback(cfg.ports.gateway),
        app_addr: loopback(cfg.ports.app),
        ws_addr: loopback(cfg.ports.ws),
        ..NetConfig::default()
    };
    let server = rt.block_on(greenhouse_server::start(core, net))?;
    let sim = SerialSim::spawn(cfg, loopback(cfg.ports.serial), Some(cfg.duration()))?;
    let gateway = threaded::spawn(ThreadedConfig {
        serial_addr: sim.addr,
        server_addr: server.gateway_addr,
        periods: cfg.gateway.clone(),
        backoff: Backoff::default(),
    })?;

    let started = Instant::now();
    let mut client: Option<AppClient> = None;
    let mut events = cfg.events.iter().peekable();
    while !stop.load(Ordering::Relaxed) && !sim.is_finished() {
        while let Some(ev) = events.peek() {
            if Duration::from_secs_f64(ev.at_s) > started.elapsed() {
                break;
            }
            let ev = events.next().expect("peeked");
            let frame = match &ev.action {
                Action::Setpoints { temperature, humidity, light_lux } => {
                    Some(Frame::AppAutoInstruction(Action::setpoint_frame(*temperature, *humidity, *light_lux)))
                }
                Action::Manual { gears } => match Action::manual_bank(gears, sim.bank()) {
                    Ok(bank) => Some(Frame::AppManualInstruction(bank)),
                    Err(e) => {
                        tracing::warn!(at_s = ev.at_s, %e, "manual event skipped");
                        None
                    }
                },
                Action::UplinkStall { .. } | Action::UplinkDown { .. } => {
                    tracing::warn!(at_s = ev.at_s, "uplink fault events are only simulated with --net inproc");
                    None
                }
                Action::Soil { .. } => None,
            };
            let Some(frame) = frame else { continue };
            if client.is_none() {
                client = Some(AppClient::login(server.app_addr, &cfg.account.username, &cfg.account.password)?);
            }
            if let Some(c) = client.as_mut() {
                c.send_frame(&frame)?;
            }
        }
        thread::sleep(Duration::from_millis(20));
    }

    let gateway_counters = gateway.core.counters.snapshot();
    gateway.shutdown();
    drop(client);
    let metrics = server.metrics();
    rt.block_on(server.shutdown())?;
    let network = sim.diagnostics();
    let mut rows = sim.stop();
    // The mode column follows the scripted timeline.
    let mut automatic = false;
    let mut timeline = cfg.events.iter().peekable();
    for row in &mut rows {
        while let Some(ev) = timeline.peek() {
            if ev.at_s > row.time_s {
                break;
            }
            match ev.action {
                Action::Setpoints { .. } => automatic = true,
                Action::Manual { .. } => automatic = false,
                _ => {}
            }
            timeline.next();
        }
        row.automatic = automatic;
    }
    Ok(TcpRun { rows, metrics, gateway: gateway_counters, network })
}
