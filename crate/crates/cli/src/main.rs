use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use greenhouse_cli::export::{self, ExportOptions, RunSummary, RUN_SUMMARY_FILE};
use greenhouse_cli::framecmd;
use greenhouse_cli::scenario::{ScenarioConfig, ScenarioError};
use greenhouse_cli::sim::{write_trajectory, Simulation};
use greenhouse_cli::tcp::{self, SerialSim};
use greenhouse_core::gateway::threaded::{self, ThreadedConfig};
use greenhouse_core::gateway::Backoff;
use greenhouse_core::protocol::Layer;
use greenhouse_server::auth::USERS_FILE;
use greenhouse_server::engine::ServerCore;
use greenhouse_server::history::RecordClass;
use greenhouse_server::net::{now_ms, NetConfig};
use greenhouse_server::store::{LOG_FILE, SNAPSHOT_FILE};

/// Household greenhouse monitoring stack: simulated plant and sensor network,
/// gateway, management server, and protocol tools.
#[derive(Parser)]
#[command(name = "greenhouse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run plant, sensor network, gateway and server together.
    RunAll(RunAllArgs),
    /// Run the management server until interrupted.
    RunServer(RunServerArgs),
    /// Run the gateway against a serial endpoint and a server.
    RunGateway(RunGatewayArgs),
    /// Run the plant and sensor network behind a TCP serial endpoint.
    RunSim(RunSimArgs),
    /// Encode, decode and check protocol frames.
    #[command(subcommand)]
    Frame(FrameCommand),
    /// Export the server's history log as CSV, one file per record class.
    ExportHistory(ExportArgs),
    /// Summarize a server data directory.
    Status(StatusArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NetMode {
    /// In-memory links, simulated time, deterministic.
    Inproc,
    /// Loopback sockets in real time.
    Tcp,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's duration, in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = match &self.scenario {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.duration {
            cfg.duration_s = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunAllArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "inproc")]
    net: NetMode,
    /// Trajectory CSV output.
    #[arg(long, default_value = "trajectory.csv")]
    out: PathBuf,
    /// Server data directory. Any log from a previous run there is replaced.
    #[arg(long, default_value = "greenhouse-data")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct RunServerArgs {
    #[arg(long, default_value = "greenhouse-data")]
    data_dir: PathBuf,
    /// Periods and ports are taken from this scenario unless given below.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: std::net::IpAddr,
    #[arg(long)]
    gateway_port: Option<u16>,
    #[arg(long)]
    app_port: Option<u16>,
    #[arg(long)]
    ws_port: Option<u16>,
    #[arg(long)]
    auto_period_ms: Option<u64>,
    /// Expected gateway push period; readings older than three periods are stale.
    #[arg(long)]
    push_period_ms: Option<u64>,
    /// Create or reset this account before serving (needs --password).
    #[arg(long, requires = "password")]
    user: Option<String>,
    #[arg(long, requires = "user")]
    password: Option<String>,
}

#[derive(Args)]
struct RunGatewayArgs {
    /// Coordinator serial endpoint (as exposed by `run-sim`).
    #[arg(long, default_value = "127.0.0.1:8070")]
    serial: SocketAddr,
    /// Server gateway port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    server: SocketAddr,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    serial_tx_ms: Option<u64>,
    #[arg(long)]
    alarm_ms: Option<u64>,
    #[arg(long)]
    push_ms: Option<u64>,
}

#[derive(Args)]
struct RunSimArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Listen address; defaults to the scenario's serial port on loopback.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Trajectory CSV written on exit.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerArg {
    Sensor,
    Network,
    Application,
}

impl From<LayerArg> for Layer {
    fn from(l: LayerArg) -> Self {
        match l {
            LayerArg::Sensor => Layer::Sensor,
            LayerArg::Network => Layer::Network,
            LayerArg::Application => Layer::Application,
        }
    }
}

#[derive(Subcommand)]
enum FrameCommand {
    /// Decode hex and print the frame, or the error kind.
    Decode {
        hex: Vec<String>,
        /// Decode as this layer; the network layer by default.
        #[arg(long, value_enum)]
        layer: Option<LayerArg>,
    },
    /// Encode key=value fields as a frame of one protocol table.
    Encode {
        /// Fields, e.g. `led=1`, `addr=01 query=temperature arg=10`, `cool=4`.
        fields: Vec<String>,
        #[command(flatten)]
        table: TableFlags,
    },
    /// Decode, re-encode and compare.
    Roundtrip {
        hex: Vec<String>,
        #[arg(long, value_enum)]
        layer: Option<LayerArg>,
    },
    /// Check a golden-vector file (`layer | hex | expected` per line).
    Verify { file: PathBuf },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TableFlags {
    /// Sensor-layer instruction.
    #[arg(long)]
    table3: bool,
    /// Sensor-layer data or status.
    #[arg(long)]
    table4: bool,
    /// Network-layer readings of all locations.
    #[arg(long)]
    table5: bool,
    /// Network-layer actuator status.
    #[arg(long)]
    table6: bool,
    /// Network-layer instruction.
    #[arg(long)]
    table7: bool,
    /// Application-layer data.
    #[arg(long)]
    table8: bool,
    /// Application-layer automatic setpoints (light in lux).
    #[arg(long)]
    table9: bool,
    /// Application-layer manual gears.
    #[arg(long)]
    table10: bool,
}

impl TableFlags {
    fn table(&self) -> u8 {
        let flags = [self.table3, self.table4, self.table5, self.table6, self.table7, self.table8, self.table9, self.table10];
        flags.iter().position(|&f| f).map_or(0, |i| i as u8 + 3)
    }
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value = "greenhouse-data")]
    data_dir: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Record class to export (repeatable); all classes by default.
    #[arg(long, value_parser = parse_class)]
    class: Vec<RecordClass>,
    #[arg(long, default_value_t = 0)]
    from_ms: u64,
    #[arg(long, default_value_t = u64::MAX)]
    to_ms: u64,
    /// Also write `<class>_buckets.csv` with this many averaged time buckets.
    #[arg(long)]
    buckets: Option<usize>,
}

fn parse_class(s: &str) -> Result<RecordClass, String> {
    RecordClass::parse(s).ok_or_else(|| {
        let names: Vec<&str> = RecordClass::ALL.iter().map(|c| c.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Args)]
struct StatusArgs {
    #[arg(long, default_value = "greenhouse-data")]
    data_dir: PathBuf,
}

/// Exit code for configuration and input errors.
const EXIT_CONFIG: u8 = 2;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("greenhouse: {msg}");
    ExitCode::from(code)
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    std::thread::spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_io().build() else { return };
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            eprintln!("greenhouse: interrupted, draining");
            f.store(true, Ordering::SeqCst);
        }
    });
    flag
}

fn fresh_data_dir(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for name in [LOG_FILE, SNAPSHOT_FILE, USERS_FILE, RUN_SUMMARY_FILE] {
        match std::fs::remove_file(dir.join(name)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
    }
    Ok(())
}

fn write_csv_file(path: &Path, rows: &[greenhouse_cli::sim::TrajectoryRow]) -> Result<(), String> {
    let file = std::fs::File::create(path).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    write_trajectory(rows, std::io::BufWriter::new(file)).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_summary(dir: &Path, summary: &RunSummary) {
    let path = dir.join(RUN_SUMMARY_FILE);
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    if let Err(e) = std::fs::write(&path, text) {
        tracing::warn!(%e, path = %path.display(), "cannot write run summary");
    }
}

fn run_all(args: RunAllArgs) -> ExitCode {
    let cfg = match args.scenario.load() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = fresh_data_dir(&args.data_dir) {
        return fail(EXIT_CONFIG, format!("data dir {}: {e}", args.data_dir.display()));
    }
    let stop = interrupt_flag();
    let (rows, summary) = match args.net {
        NetMode::Inproc => {
            let mut sim = match Simulation::new(&cfg, &args.data_dir) {
                Ok(s) => s,
                Err(e) => return fail(1, e),
            };
            let s = match sim.run(&stop) {
                Ok(s) => s,
                Err(e) => return fail(1, e),
            };
            let summary = RunSummary {
                net: "inproc".into(),
                seed: cfg.seed,
                duration_s: cfg.duration_s,
                rows: s.rows,
                broadcasts: Some(s.broadcasts),
                gateway: s.gateway,
                network: s.network,
                server: None,
            };
            (sim.rows().to_vec(), summary)
        }
        NetMode::Tcp => match tcp::run_all_tcp(&cfg, &args.data_dir, stop) {
            Ok(run) => {
                let summary = RunSummary {
                    net: "tcp".into(),
                    seed: cfg.seed,
                    duration_s: cfg.duration_s,
                    rows: run.rows.len(),
                    broadcasts: None,
                    gateway: run.gateway,
                    network: run.network,
                    server: Some(run.metrics),
                };
                (run.rows, summary)
            }
            Err(e) => return fail(1, e),
        },
    };
    if let Err(e) = write_csv_file(&args.out, &rows) {
        return fail(1, e);
    }
    write_summary(&args.data_dir, &summary);
    println!(
        "wrote {} rows to {}; history in {}",
        rows.len(),
        args.out.display(),
        args.data_dir.join(LOG_FILE).display()
    );
    ExitCode::SUCCESS
}

fn run_server(args: RunServerArgs) -> ExitCode {
    let cfg = match &args.scenario {
        Some(p) => match ScenarioConfig::load(p) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => ScenarioConfig::default(),
    };
    let mut server_cfg = tcp::server_config(&cfg, &args.data_dir);
    if let Some(p) = args.auto_period_ms {
        server_cfg.auto_period_ms = p;
    }
    if let Some(p) = args.push_period_ms {
        server_cfg.push_period_ms = p;
    }
    let (mut core, recovery) = match ServerCore::open(server_cfg) {
        Ok(c) => c,
        Err(e) => return fail(1, e),
    };
    tracing::info!(records = recovery.log.records, bad_crc = recovery.log.bad_crc, torn = recovery.log.torn_bytes, "history recovered");
    if let (Some(user), Some(password)) = (&args.user, &args.password) {
        if let Err(e) = core.add_user(user, password, now_ms()) {
            return fail(1, e);
        }
    }
    if !core.has_users() {
        eprintln!("greenhouse: no accounts yet; app clients cannot log in until one is added with --user/--password");
    }
    let addr = |port: Option<u16>, default: u16| SocketAddr::new(args.bind, port.unwrap_or(default));
    let net = NetConfig {
        gateway_addr: addr(args.gateway_port, cfg.ports.gateway),
        app_addr: addr(args.app_port, cfg.ports.app),
        ws_addr: addr(args.ws_port, cfg.ports.ws),
        ..NetConfig::default()
    };
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(1, e),
    };
    rt.block_on(async move {
        let handle = match greenhouse_server::start(core, net).await {
            Ok(h) => h,
            Err(e) => return fail(1, e),
        };
        println!("gateway {} app {} websocket {}", handle.gateway_addr, handle.app_addr, handle.ws_addr);
        loop {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => break,
                _ = tokio::time::sleep(Duration::from_millis(200)) => {
                    if handle.is_finished() {
                        break;
                    }
                }
            }
        }
        eprintln!("greenhouse: shutting down");
        match handle.shutdown().await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(1, e),
        }
    })
}

fn run_gateway(args: RunGatewayArgs) -> ExitCode {
    let mut periods = match &args.scenario {
        Some(p) => match ScenarioConfig::load(p) {
            Ok(c) => c.gateway,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => Default::default(),
    };
    if let Some(ms) = args.serial_tx_ms {
        periods.serial_tx = Duration::from_millis(ms);
    }
    if let Some(ms) = args.alarm_ms {
        periods.alarm = Duration::from_millis(ms);
    }
    if let Some(ms) = args.push_ms {
        periods.push = Duration::from_millis(ms);
    }
    let stop = interrupt_flag();
    let config = ThreadedConfig { serial_addr: args.serial, server_addr: args.server, periods, backoff: Backoff::default() };
    let handle = match threaded::spawn(config) {
        Ok(h) => h,
        Err(e) => return fail(1, format!("cannot open serial endpoint {}: {e}", args.serial)),
    };
    while !stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(100));
    }
    let counters = handle.core.counters.snapshot();
    handle.shutdown();
    println!("{counters:?}");
    ExitCode::SUCCESS
}

fn run_sim(args: RunSimArgs) -> ExitCode {
    let cfg = match args.scenario.load() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let listen = args.listen.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], cfg.ports.serial)));
    let duration = args.scenario.duration.map(|_| cfg.duration());
    let stop = interrupt_flag();
    let sim = match SerialSim::spawn(&cfg, listen, duration) {
        Ok(s) => s,
        Err(e) => return fail(1, e),
    };
    println!("serial endpoint {}", sim.addr);
    while !stop.load(Ordering::Relaxed) && !sim.is_finished() {
        std::thread::sleep(Duration::from_millis(100));
    }
    let diagnostics = sim.diagnostics();
    let rows = sim.stop();
    println!("{diagnostics:?}");
    if let Some(out) = &args.out {
        if let Err(e) = write_csv_file(out, &rows) {
            return fail(1, e);
        }
    }
    ExitCode::SUCCESS
}

fn frame(cmd: FrameCommand) -> ExitCode {
    let print = |r: Result<String, String>| match r {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(text) => {
            println!("{text}");
            ExitCode::FAILURE
        }
    };
    match cmd {
        FrameCommand::Decode { hex, layer } => print(framecmd::decode(&hex.concat(), layer.map(Into::into))),
        FrameCommand::Roundtrip { hex, layer } => print(framecmd::roundtrip(&hex.concat(), layer.map(Into::into))),
        FrameCommand::Encode { fields, table } => print(framecmd::encode(table.table(), &fields)),
        FrameCommand::Verify { file } => {
            let text = match std::fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("cannot read {}: {e}", file.display())),
            };
            match framecmd::verify(&text) {
                Ok((report, ok)) => {
                    println!("{report}");
                    if ok {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
    }
}

fn export_history(args: ExportArgs) -> ExitCode {
    let classes = if args.class.is_empty() { RecordClass::ALL.to_vec() } else { args.class };
    let opts = ExportOptions {
        data_dir: args.data_dir,
        out_dir: args.out_dir,
        classes,
        from_ms: args.from_ms,
        to_ms: args.to_ms,
        buckets: args.buckets,
    };
    match export::export_history(&opts) {
        Ok(report) => {
            if report.scan.bad_crc > 0 {
                eprintln!("warning: skipped {} record(s) with a bad CRC", report.scan.bad_crc);
            }
            if report.scan.torn_bytes > 0 {
                eprintln!("warning: ignored {} byte(s) of a torn final record", report.scan.torn_bytes);
            }
            for (path, rows) in report.files {
                println!("{} ({rows} rows)", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ export::ExportError::Unreadable { .. }) => fail(EXIT_CONFIG, e),
        Err(e) => fail(1, e),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("GREENHOUSE_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::RunAll(a) => run_all(a),
        Command::RunServer(a) => run_server(a),
        Command::RunGateway(a) => run_gateway(a),
        Command::RunSim(a) => run_sim(a),
        Command::Frame(c) => frame(c),
        Command::ExportHistory(a) => export_history(a),
        Command::Status(a) => match export::status(&a.data_dir) {
            Ok(text) => {
                println!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_CONFIG, e),
        },
    }
}
