//! History records and the queries behind the history curves.

use std::collections::BTreeMap;

use greenhouse_core::protocol::{LocationReadings, SetpointFrame};
use greenhouse_core::{Actuator, ActuatorBank};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordClass {
    Reading,
    Status,
    Instruction,
    ModeChange,
    SessionEvent,
    Error,
}

impl RecordClass {
    pub const ALL: [RecordClass; 6] = [
        RecordClass::Reading,
        RecordClass::Status,
        RecordClass::Instruction,
        RecordClass::ModeChange,
        RecordClass::SessionEvent,
        RecordClass::Error,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            RecordClass::Reading => "reading",
            RecordClass::Status => "status",
            RecordClass::Instruction => "instruction",
            RecordClass::ModeChange => "mode-change",
            RecordClass::SessionEvent => "session-event",
            RecordClass::Error => "error",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionSource {
    Manual,
    Automatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ControlMode {
    Manual { gears: Option<ActuatorBank> },
    Automatic { setpoints: SetpointFrame },
}

impl Default for ControlMode {
    fn default() -> Self {
        ControlMode::Manual { gears: None }
    }
}

impl ControlMode {
    pub fn is_automatic(&self) -> bool {
        matches!(self, ControlMode::Automatic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionEventKind {
    GatewayConnected,
    GatewayDisconnected,
    AppConnected,
    AppDisconnected,
    LoginSucceeded,
    LoginFailed,
    RateLimited,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    Reading { readings: LocationReadings },
    Status { gears: ActuatorBank },
    Instruction { gears: ActuatorBank, source: InstructionSource },
    ModeChange { mode: ControlMode },
    SessionEvent { event: SessionEventKind, user: Option<String>, peer: Option<String> },
    Error { error: String, raw: String },
}

impl Payload {
    pub const fn class(&self) -> RecordClass {
        match self {
            Payload::Reading { .. } => RecordClass::Reading,
            Payload::Status { .. } => RecordClass::Status,
            Payload::Instruction { .. } => RecordClass::Instruction,
            Payload::ModeChange { .. } => RecordClass::ModeChange,
            Payload::SessionEvent { .. } => RecordClass::SessionEvent,
            Payload::Error { .. } => RecordClass::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub payload: Payload,
}

impl HistoryRecord {
    pub const fn class(&self) -> RecordClass {
        self.payload.class()
    }

    /// Numeric series carried by the record, used for curves and CSV export.
    pub fn series(&self) -> Vec<(&'static str, f64)> {
        match &self.payload {
            Payload::Reading { readings } => vec![
                ("temperature", readings.mean_temperature()),
                ("humidity", readings.mean_humidity()),
                ("light", readings.mean_light()),
                ("soil_dry", readings.dry_fraction()),
            ],
            Payload::Status { gears } | Payload::Instruction { gears, .. } => {
                Actuator::ALL.iter().map(|&a| (a.name(), f64::from(gears.get(a)))).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Records of `class` with `from <= timestamp <= to`, in timestamp order.
/// A reversed range yields nothing.
pub fn query_history(records: &[HistoryRecord], class: RecordClass, from_ms: u64, to_ms: u64) -> Vec<HistoryRecord> {
    if from_ms > to_ms {
        return Vec::new();
    }
    let mut out: Vec<HistoryRecord> = records
        .iter()
        .filter(|r| r.class() == class && (from_ms..=to_ms).contains(&r.timestamp_ms))
        .cloned()
        .collect();
    out.sort_by_key(|r| (r.timestamp_ms, r.seq));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub start_ms: u64,
    pub end_ms: u64,
    pub count: usize,
    pub means: BTreeMap<String, f64>,
}

/// Splits `[from, to]` into `buckets` equal time slices and averages every
/// series inside each slice. Empty slices are kept with `count == 0`.
pub fn downsample(records: &[HistoryRecord], from_ms: u64, to_ms: u64, buckets: usize) -> Vec<Bucket> {
    if from_ms > to_ms || buckets == 0 {
        return Vec::new();
    }
    let span = (to_ms - from_ms + 1) as f64;
    let edge = |i: usize| from_ms + (span * i as f64 / buckets as f64).round() as u64;
    let mut sums: Vec<(usize, BTreeMap<&'static str, f64>)> = vec![(0, BTreeMap::new()); buckets];
    for r in records.iter().filter(|r| (from_ms..=to_ms).contains(&r.timestamp_ms)) {
        let i = (((r.timestamp_ms - from_ms) as f64 * buckets as f64 / span) as usize).min(buckets - 1);
        sums[i].0 += 1;
        for (name, v) in r.series() {
            *sums[i].1.entry(name).or_default() += v;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (count, s))| Bucket {
            start_ms: edge(i),
            end_ms: edge(i + 1).saturating_sub(1).max(edge(i)),
            count,
            means: s.into_iter().map(|(k, v)| (k.to_string(), v / count as f64)).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(seq: u64, t: u64, temp: i8) -> HistoryRecord {
        let readings = LocationReadings { temperature: [temp; 6], ..Default::default() };
        HistoryRecord { seq, timestamp_ms: t, payload: Payload::Reading { readings } }
    }

    fn ten() -> Vec<HistoryRecord> {
        (0..10).map(|i| reading(i, i * 1000, 10 + i as i8)).collect()
    }

    #[test]
    fn range_returns_records_in_order() {
        let mut recs = ten();
        recs.reverse();
        let out = query_history(&recs, RecordClass::Reading, 0, 9000);
        assert_eq!(out.len(), 10);
        assert!(out.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
    }

    #[test]
    fn reversed_range_is_empty() {
        assert!(query_history(&ten(), RecordClass::Reading, 9000, 0).is_empty());
    }

    #[test]
    fn other_classes_are_filtered() {
        assert!(query_history(&ten(), RecordClass::Status, 0, 9000).is_empty());
    }

    #[test]
    fn five_buckets_over_ten_uniform_readings() {
        let out = downsample(&ten(), 0, 9000, 5);
        let means: Vec<f64> = out.iter().map(|b| b.means["temperature"]).collect();
        // pairs (10,11), (12,13), ... averaged by hand
        assert_eq!(means, vec![10.5, 12.5, 14.5, 16.5, 18.5]);
        assert!(out.iter().all(|b| b.count == 2));
    }

    #[test]
    fn class_names_round_trip() {
        for c in RecordClass::ALL {
            assert_eq!(RecordClass::parse(c.name()), Some(c));
        }
    }
}
