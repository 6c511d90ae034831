//! `export-history` and `status`: read-only views of a server data directory.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use greenhouse_core::gateway::CounterSnapshot;
use greenhouse_core::protocol::LOCATIONS;
use greenhouse_core::sensor_net::Diagnostics;
use greenhouse_core::Actuator;
use greenhouse_server::history::{downsample, query_history, ControlMode, HistoryRecord, Payload, RecordClass};
use greenhouse_server::net::ServerMetrics;
use greenhouse_server::store::{read_log, LogScan, LOG_FILE, SNAPSHOT_FILE};
use serde::{Deserialize, Serialize};

/// Written next to the log by `run-all` so `status` can show component counters.
pub const RUN_SUMMARY_FILE: &str = "run-summary.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub net: String,
    pub seed: u64,
    pub duration_s: f64,
    pub rows: usize,
    pub broadcasts: Option<usize>,
    pub gateway: CounterSnapshot,
    pub network: Diagnostics,
    pub server: Option<ServerMetrics>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("cannot read history log {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub classes: Vec<RecordClass>,
    pub from_ms: u64,
    pub to_ms: u64,
    /// Also write `<class>_buckets.csv` with this many time buckets.
    pub buckets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportReport {
    pub scan: LogScan,
    pub files: Vec<(PathBuf, usize)>,
}

pub fn load_log(data_dir: &Path) -> Result<(Vec<HistoryRecord>, LogScan), ExportError> {
    let path = data_dir.join(LOG_FILE);
    read_log(&path).map_err(|e| ExportError::Unreadable { path, reason: e.to_string() })
}

fn gear_names() -> impl Iterator<Item = String> {
    Actuator::ALL.into_iter().map(|a| a.name().to_ascii_lowercase())
}

fn numbered(prefix: &str) -> impl Iterator<Item = String> + '_ {
    (1..=LOCATIONS).map(move |i| format!("{prefix}_{i}"))
}

pub fn header(class: RecordClass) -> Vec<String> {
    let mut h: Vec<String> = vec!["seq".into(), "timestamp_ms".into()];
    match class {
        RecordClass::Reading => {
            h.extend(["temperature", "humidity", "light", "soil_dry"].map(String::from));
            h.extend(numbered("temperature"));
            h.extend(numbered("humidity"));
            h.extend(numbered("light"));
            h.extend(numbered("soil_dry"));
        }
        RecordClass::Status => h.extend(gear_names()),
        RecordClass::Instruction => {
            h.push("source".into());
            h.extend(gear_names());
        }
        RecordClass::ModeChange => h.extend(["mode", "temperature", "humidity", "light_lux", "gears"].map(String::from)),
        RecordClass::SessionEvent => h.extend(["event", "user", "peer"].map(String::from)),
        RecordClass::Error => h.extend(["error", "raw"].map(String::from)),
    }
    h
}

fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn row(record: &HistoryRecord) -> Vec<String> {
    let mut r = vec![record.seq.to_string(), record.timestamp_ms.to_string()];
    let gears = |g: &greenhouse_core::ActuatorBank| g.gears().map(|x| x.to_string());
    match &record.payload {
        Payload::Reading { readings } => {
            r.extend(record.series().into_iter().map(|(_, v)| format!("{v:.3}")));
            r.extend(readings.temperature.iter().map(i8::to_string));
            r.extend(readings.humidity.iter().map(u8::to_string));
            r.extend(readings.light.iter().map(u16::to_string));
            r.extend(readings.soil_dry.iter().map(|&d| u8::from(d).to_string()));
        }
        Payload::Status { gears: g } => r.extend(gears(g)),
        Payload::Instruction { gears: g, source } => {
            r.push(label(source));
            r.extend(gears(g));
        }
        Payload::ModeChange { mode } => match mode {
            ControlMode::Automatic { setpoints } => r.extend([
                "automatic".into(),
                setpoints.temperature.to_string(),
                setpoints.humidity.to_string(),
                setpoints.light_lux().to_string(),
                String::new(),
            ]),
            ControlMode::Manual { gears: g } => r.extend([
                "manual".into(),
                String::new(),
                String::new(),
                String::new(),
                g.map(|g| g.gears().map(|x| x.to_string()).join(" ")).unwrap_or_default(),
            ]),
        },
        Payload::SessionEvent { event, user, peer } => {
            r.extend([label(event), user.clone().unwrap_or_default(), peer.clone().unwrap_or_default()]);
        }
        Payload::Error { error, raw } => r.extend([error.clone(), raw.clone()]),
    }
    r
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<usize, ExportError> {
    let werr = |e: &dyn std::fmt::Display| ExportError::Write { path: path.into(), reason: e.to_string() };
    let file = File::create(path).map_err(|e| werr(&e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| werr(&e))?;
    let mut n = 0;
    for r in rows {
        w.write_record(&r).map_err(|e| werr(&e))?;
        n += 1;
    }
    w.flush().map_err(|e| werr(&e))?;
    Ok(n)
}

pub fn export_history(opts: &ExportOptions) -> Result<ExportReport, ExportError> {
    let (records, scan) = load_log(&opts.data_dir)?;
    std::fs::create_dir_all(&opts.out_dir)
        .map_err(|e| ExportError::Write { path: opts.out_dir.clone(), reason: e.to_string() })?;
    let mut files = Vec::new();
    for &class in &opts.classes {
        let selected = query_history(&records, class, opts.from_ms, opts.to_ms);
        let path = opts.out_dir.join(format!("{}.csv", class.name()));
        let n = write_csv(&path, &header(class), selected.iter().map(row))?;
        files.push((path, n));

        let Some(buckets) = opts.buckets else { continue };
        if !matches!(class, RecordClass::Reading | RecordClass::Status | RecordClass::Instruction) {
            continue;
        }
        let names: Vec<String> = match class {
            RecordClass::Reading => ["temperature", "humidity", "light", "soil_dry"].map(String::from).to_vec(),
            _ => Actuator::ALL.iter().map(|a| a.name().to_string()).collect(),
        };
        let from = opts.from_ms.max(selected.first().map_or(0, |r| r.timestamp_ms));
        let to = opts.to_ms.min(selected.last().map_or(0, |r| r.timestamp_ms));
        let series = if selected.is_empty() { Vec::new() } else { downsample(&selected, from, to, buckets) };
        let mut h: Vec<String> = vec!["start_ms".into(), "end_ms".into(), "count".into()];
        h.extend(names.iter().map(|n| n.to_ascii_lowercase()));
        let rows = series.iter().map(|b| {
            let mut r = vec![b.start_ms.to_string(), b.end_ms.to_string(), b.count.to_string()];
            r.extend(names.iter().map(|n| b.means.get(n).map(|v| format!("{v:.3}")).unwrap_or_default()));
            r
        });
        let path = opts.out_dir.join(format!("{}_buckets.csv", class.name()));
        let n = write_csv(&path, &h, rows)?;
        files.push((path, n));
    }
    Ok(ExportReport { scan, files })
}

/// Human-readable summary of a data directory.
pub fn status(data_dir: &Path) -> Result<String, ExportError> {
    let (records, scan) = load_log(data_dir)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "log: {} ({} records, {} bad CRC, {} duplicate, {} torn bytes)",
        data_dir.join(LOG_FILE).display(),
        scan.records,
        scan.bad_crc,
        scan.duplicates,
        scan.torn_bytes
    );
    let snapshot = std::fs::read(data_dir.join(SNAPSHOT_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
        .and_then(|v| v.get("seq").and_then(|s| s.as_u64()));
    let _ = writeln!(out, "snapshot: {}", snapshot.map_or("none".to_string(), |s| format!("up to seq {s}")));
    let counts: Vec<String> = RecordClass::ALL
        .iter()
        .map(|&c| format!("{}={}", c.name(), records.iter().filter(|r| r.class() == c).count()))
        .collect();
    let _ = writeln!(out, "records: {}", counts.join(" "));

    let mode = records.iter().rev().find_map(|r| match &r.payload {
        Payload::ModeChange { mode } => Some(*mode),
        _ => None,
    });
    let mode = match mode.unwrap_or_default() {
        ControlMode::Automatic { setpoints } => format!(
            "automatic (temperature {} C, humidity {} %, light {} lx)",
            setpoints.temperature,
            setpoints.humidity,
            setpoints.light_lux()
        ),
        ControlMode::Manual { .. } => "manual".to_string(),
    };
    let _ = writeln!(out, "mode: {mode}");
    for (class, what) in [(RecordClass::Reading, "reading"), (RecordClass::Status, "status"), (RecordClass::Instruction, "instruction")] {
        if let Some(r) = records.iter().rev().find(|r| r.class() == class) {
            let shown = match &r.payload {
                Payload::Reading { readings } => format!(
                    "temperature {:.1} C, humidity {:.1} %, light {:.0} lx, soil dry {}/{}",
                    readings.mean_temperature(),
                    readings.mean_humidity(),
                    readings.mean_light(),
                    readings.soil_dry.iter().filter(|&&d| d).count(),
                    LOCATIONS
                ),
                Payload::Status { gears } | Payload::Instruction { gears, .. } => gears.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(out, "last {what} @ {} ms: {shown}", r.timestamp_ms);
        }
    }
    if let Some(r) = records.iter().rev().find(|r| r.class() == RecordClass::Error) {
        if let Payload::Error { error, raw } = &r.payload {
            let _ = writeln!(out, "last error @ {} ms: {error} {raw}", r.timestamp_ms);
        }
    }
    if let Some(summary) = std::fs::read(data_dir.join(RUN_SUMMARY_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<RunSummary>(&b).ok())
    {
        let g = summary.gateway;
        let n = summary.network;
        let _ = writeln!(
            out,
            "last run: --net {} seed {} for {} s, {} trajectory rows",
            summary.net, summary.seed, summary.duration_s, summary.rows
        );
        let _ = writeln!(
            out,
            "gateway: serial in {} out {} decode errors {}, pushes sent {} dropped {}, instructions in {} superseded {}, alarm frames {}, reconnects {}",
            g.serial_frames_in,
            g.serial_frames_out,
            g.serial_decode_errors,
            g.pushes_sent,
            g.pushes_dropped,
            g.net_frames_in,
            g.instructions_superseded,
            g.alarm_frames,
            g.reconnects
        );
        let _ = writeln!(
            out,
            "network: emitted {} delivered {} dropped {}, instructions received {} applied {} ignored {}, clamped {}, invalid address {}, decode errors {}",
            n.frames_emitted,
            n.frames_delivered,
            n.frames_dropped,
            n.instructions_received,
            n.instructions_applied,
            n.instructions_ignored,
            n.clamp_events,
            n.invalid_address,
            n.decode_errors
        );
        if let Some(m) = summary.server {
            let _ = writeln!(
                out,
                "server: gateway frames {} errors {}, broadcasts {}, session drops {}, persist latency mean {} us max {} us",
                m.gateway_frames,
                m.gateway_errors,
                m.broadcasts,
                m.session_drops,
                m.mean_persist_latency_us(),
                m.persist_latency_max_us
            );
        }
    }
    Ok(out.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use greenhouse_core::protocol::LocationReadings;
    use greenhouse_core::ActuatorBank;
    use greenhouse_server::store::Store;

    #[test]
    fn headers_match_rows() {
        let samples = [
            Payload::Reading { readings: LocationReadings::default() },
            Payload::Status { gears: ActuatorBank::OFF },
            Payload::Instruction { gears: ActuatorBank::OFF, source: greenhouse_server::history::InstructionSource::Manual },
            Payload::ModeChange { mode: ControlMode::default() },
            Payload::SessionEvent {
                event: greenhouse_server::history::SessionEventKind::LoginFailed,
                user: Some("u".into()),
                peer: None,
            },
            Payload::Error { error: "BadEnd".into(), raw: "A5".into() },
        ];
        for payload in samples {
            let record = HistoryRecord { seq: 1, timestamp_ms: 5, payload };
            assert_eq!(header(record.class()).len(), row(&record).len(), "{:?}", record.class());
        }
    }

    #[test]
    fn empty_log_gives_header_only() {
        let data = tempfile::tempdir().unwrap();
        std::fs::write(data.path().join(LOG_FILE), b"").unwrap();
        let out = tempfile::tempdir().unwrap();
        let opts = ExportOptions {
            data_dir: data.path().into(),
            out_dir: out.path().into(),
            classes: vec![RecordClass::Reading],
            from_ms: 0,
            to_ms: u64::MAX,
            buckets: Some(4),
        };
        let report = export_history(&opts).unwrap();
        assert_eq!(report.files.iter().map(|f| f.1).collect::<Vec<_>>(), vec![0, 0]);
        let text = std::fs::read_to_string(out.path().join("reading.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("seq,timestamp_ms,temperature,"));
    }

    #[test]
    fn missing_log_is_unreadable() {
        let data = tempfile::tempdir().unwrap();
        assert!(matches!(load_log(data.path()), Err(ExportError::Unreadable { .. })));
    }

    #[test]
    fn status_reports_mode_and_counts() {
        let data = tempfile::tempdir().unwrap();
        {
            let (mut store, _) = Store::open(data.path()).unwrap();
            store.append(10, Payload::Status { gears: ActuatorBank::OFF.with(Actuator::Cooling, 4) }).unwrap();
            store.sync().unwrap();
        }
        let text = status(data.path()).unwrap();
        assert!(text.contains("status=1"), "{text}");
        assert!(text.contains("mode: manual"));
        assert!(text.contains("cooling=4"));
    }
}
