//! Append-only record log plus a periodic state snapshot.
//!
//! Log format, repeated until end of file:
//!
//! ```text
//! u32 LE  payload length
//! u32 LE  CRC32 of the payload
//! [u8]    payload: one HistoryRecord as JSON
//! ```
//!
//! On open, a record whose header or payload runs past the end of the file is
//! a torn tail and is truncated away. A complete record with a bad CRC (or a
//! payload that does not parse) is skipped with a warning. Records whose
//! sequence number does not exceed the previous one are dropped as duplicates.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::history::{HistoryRecord, Payload, RecordClass};

pub const LOG_FILE: &str = "records.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const HEADER_LEN: usize = 8;
/// Larger lengths are treated as a corrupted header.
const MAX_RECORD_LEN: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("encoding error: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("store crashed by fault injection")]
    Crashed,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogScan {
    pub records: usize,
    /// Bytes past the last complete record.
    pub torn_bytes: usize,
    pub bad_crc: usize,
    pub duplicates: usize,
    /// Offset just past the last complete record.
    pub valid_len: u64,
}

pub fn encode_record(record: &HistoryRecord) -> Result<Vec<u8>, StoreError> {
    let payload = serde_json::to_vec(record)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses a log image. Never fails; damage is reported in the [`LogScan`].
pub fn scan_log(bytes: &[u8]) -> (Vec<HistoryRecord>, LogScan) {
    let mut records: Vec<HistoryRecord> = Vec::new();
    let mut scan = LogScan::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < HEADER_LEN {
            break;
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes"));
        if len > MAX_RECORD_LEN || rest.len() < HEADER_LEN + len {
            break;
        }
        let payload = &rest[HEADER_LEN..HEADER_LEN + len];
        pos += HEADER_LEN + len;
        scan.valid_len = pos as u64;
        if crc32fast::hash(payload) != crc {
            scan.bad_crc += 1;
            tracing::warn!(offset = pos - HEADER_LEN - len, "skipping record with bad CRC");
            continue;
        }
        match serde_json::from_slice::<HistoryRecord>(payload) {
            Ok(r) if records.last().is_some_and(|last| r.seq <= last.seq) => scan.duplicates += 1,
            Ok(r) => records.push(r),
            Err(e) => {
                scan.bad_crc += 1;
                tracing::warn!(%e, "skipping undecodable record");
            }
        }
    }
    scan.records = records.len();
    scan.torn_bytes = bytes.len() - scan.valid_len as usize;
    (records, scan)
}

/// Reads a log without modifying it.
pub fn read_log(path: &Path) -> Result<(Vec<HistoryRecord>, LogScan), StoreError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    Ok(scan_log(&bytes))
}

/// Fault injection for crash tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// The next append writes only this many bytes of its record, then fails.
    MidRecord(usize),
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    records: Vec<HistoryRecord>,
    next_seq: u64,
    last_ts: HashMap<RecordClass, u64>,
    crash: Option<CrashPoint>,
    crashed: bool,
}

impl Store {
    /// Opens (creating if needed) the store in `dir`, truncating a torn tail.
    pub fn open(dir: &Path) -> Result<(Self, LogScan), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io_err(&path))?;
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes).map_err(io_err(&path))?;
        let (records, scan) = scan_log(&bytes);
        if scan.torn_bytes > 0 {
            tracing::warn!(bytes = scan.torn_bytes, "truncating torn log tail");
            log.set_len(scan.valid_len).map_err(io_err(&path))?;
            log.sync_data().map_err(io_err(&path))?;
        }
        let mut last_ts = HashMap::new();
        for r in &records {
            let e = last_ts.entry(r.class()).or_insert(0);
            *e = (*e).max(r.timestamp_ms);
        }
        let next_seq = records.last().map_or(1, |r| r.seq + 1);
        let store = Self { dir: dir.to_path_buf(), log, records, next_seq, last_ts, crash: None, crashed: false };
        Ok((store, scan))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn inject_crash(&mut self, point: CrashPoint) {
        self.crash = Some(point);
    }

    /// Appends one record. Timestamps are made monotone per class.
    pub fn append(&mut self, timestamp_ms: u64, payload: Payload) -> Result<&HistoryRecord, StoreError> {
        if self.crashed {
            return Err(StoreError::Crashed);
        }
        let last = self.last_ts.entry(payload.class()).or_insert(0);
        let timestamp_ms = timestamp_ms.max(*last);
        let record = HistoryRecord { seq: self.next_seq, timestamp_ms, payload };
        let bytes = encode_record(&record)?;
        let path = self.dir.join(LOG_FILE);
        if let Some(CrashPoint::MidRecord(n)) = self.crash.take() {
            self.crashed = true;
            self.log.write_all(&bytes[..n.min(bytes.len() - 1)]).map_err(io_err(&path))?;
            return Err(StoreError::Crashed);
        }
        self.log.write_all(&bytes).map_err(io_err(&path))?;
        *last = timestamp_ms;
        self.next_seq += 1;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn sync(&self) -> Result<(), StoreError> {
        self.log.sync_data().map_err(io_err(&self.dir.join(LOG_FILE)))
    }

    /// Writes `state` atomically (temp file + rename) tagged with the last sequence number.
    pub fn write_snapshot<T: Serialize>(&self, state: &T) -> Result<(), StoreError> {
        let body = serde_json::json!({ "seq": self.next_seq - 1, "state": state });
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let dest = self.dir.join(SNAPSHOT_FILE);
        fs::write(&tmp, serde_json::to_vec_pretty(&body)?).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
        Ok(())
    }

    /// Last snapshot and the sequence number it covers, if one exists and parses.
    pub fn read_snapshot<T: DeserializeOwned>(&self) -> Option<(u64, T)> {
        let bytes = fs::read(self.dir.join(SNAPSHOT_FILE)).ok()?;
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
        let seq = value.get("seq")?.as_u64()?;
        let state = serde_json::from_value(value.get_mut("state")?.take()).ok()?;
        Some((seq, state))
    }
}
