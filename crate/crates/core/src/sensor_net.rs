//! Simulated ZigBee star network: six detecting terminals, two executive
//! terminals and the coordinator that bridges the radio side to the serial link.

use std::fmt;
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::ActuatorBank;
use crate::link::SerialLink;
use crate::plant::EnvState;
use crate::protocol::{
    encode_frame, Codec, Command, Frame, FrameScanner, Layer, Quantity, Reading, SensorData, SensorInstruction,
    LOCATIONS, MAX_ADDRESS, MAX_DETECTING_ADDRESS, MIN_ADDRESS, PRIMARY_EXECUTIVE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Coordinator,
    Detecting,
    Executive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub address: u8,
    pub role: Role,
}

impl NodeId {
    pub const fn detecting(address: u8) -> Self {
        Self { address, role: Role::Detecting }
    }

    pub const fn executive(address: u8) -> Self {
        Self { address, role: Role::Executive }
    }

    /// Role implied by an address, or `None` outside `0x01..=0x08`.
    pub fn from_address(address: u8) -> Option<Self> {
        match address {
            MIN_ADDRESS..=MAX_DETECTING_ADDRESS => Some(Self::detecting(address)),
            PRIMARY_EXECUTIVE..=MAX_ADDRESS => Some(Self::executive(address)),
            _ => None,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}@{:02X}", self.role, self.address)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    #[serde(with = "crate::link::millis")]
    pub sampling_period: Duration,
    /// Terminals stay silent until this much time has passed (network join).
    #[serde(with = "crate::link::millis")]
    pub startup_delay: Duration,
    /// Probability that a terminal → coordinator radio frame is lost.
    pub radio_loss: f64,
    pub soil_threshold: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            sampling_period: Duration::from_secs(2),
            startup_delay: Duration::ZERO,
            radio_loss: 0.0,
            soil_threshold: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Frames produced by terminals (samples, query answers, status echoes).
    pub frames_emitted: u64,
    /// Frames that reached the coordinator and were forwarded to serial.
    pub frames_delivered: u64,
    /// Frames lost on the radio.
    pub frames_dropped: u64,
    pub instructions_received: u64,
    pub instructions_applied: u64,
    /// Instructions that reached an executive terminal not addressed by them.
    pub instructions_ignored: u64,
    pub invalid_address: u64,
    pub clamp_events: u64,
    pub decode_errors: u64,
    /// Decoded frames that are not instructions.
    pub unexpected_frames: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TickError {
    #[error("TickError: dt must be positive")]
    ZeroStep,
}

/// Sensor-layer readings of one detecting terminal, `address` in `1..=6`.
/// Values are rounded half away from zero and clamped to the wire ranges.
pub fn detecting_terminal_sample(node: NodeId, env: &EnvState, soil_threshold: f64) -> Option<[SensorData; 4]> {
    if node.role != Role::Detecting || !(MIN_ADDRESS..=MAX_DETECTING_ADDRESS).contains(&node.address) {
        return None;
    }
    let i = usize::from(node.address - 1);
    Some(Quantity::ALL.map(|q| SensorData::reading(node.address, read(q, env, i, soil_threshold))))
}

fn read(quantity: Quantity, env: &EnvState, i: usize, soil_threshold: f64) -> Reading {
    match quantity {
        Quantity::Temperature => Reading::Temperature(env.temperature[i].round().clamp(-10.0, 40.0) as i8),
        Quantity::Humidity => Reading::Humidity(env.humidity[i].round().clamp(0.0, 100.0) as u8),
        Quantity::Light => Reading::Light(env.light[i].round().clamp(0.0, 30_000.0) as u16),
        Quantity::Soil => Reading::Soil { dry: env.soil[i] < soil_threshold },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutiveOutcome {
    pub bank: ActuatorBank,
    /// Status echo carrying the gear actually applied.
    pub status: SensorData,
    pub clamped: bool,
}

/// Applies a set instruction addressed to `node`. Instructions for other
/// addresses and queries yield `None`. Out-of-range gears are clamped.
pub fn executive_terminal_apply(node: NodeId, frame: &Frame, bank: &ActuatorBank) -> Option<ExecutiveOutcome> {
    let Frame::SensorInstruction(SensorInstruction { address, command: Command::Set { actuator, gear } }) = frame
    else {
        return None;
    };
    if node.role != Role::Executive || *address != node.address {
        return None;
    }
    let mut bank = *bank;
    let clamped = bank.set_clamped(*actuator, *gear);
    let applied = bank.get(*actuator);
    Some(ExecutiveOutcome { bank, status: SensorData::status(node.address, *actuator, applied), clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Query forwarded to one detecting terminal.
    Query(NodeId),
    /// Set instruction broadcast to every executive terminal.
    Executives,
    /// Address outside `0x01..=0x08`, or a query addressed to an executive.
    Invalid,
    /// Not an instruction; the coordinator only routes instructions downstream.
    Unexpected,
}

/// Routing decision of the coordinator for one frame read from serial.
pub fn coordinator_route(frame: &Frame) -> Route {
    let Frame::SensorInstruction(ins) = frame else {
        return Route::Unexpected;
    };
    match (NodeId::from_address(ins.address), ins.command) {
        (None, _) => Route::Invalid,
        (Some(node), Command::Query { .. }) if node.role == Role::Detecting => Route::Query(node),
        (Some(_), Command::Query { .. }) => Route::Invalid,
        (Some(_), Command::Set { .. }) => Route::Executives,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickReport {
    pub samples_forwarded: usize,
    pub instructions_applied: usize,
    pub status_frames: usize,
}

/// The radio network plus coordinator, driven by [`SensorNetwork::network_tick`].
#[derive(Debug)]
pub struct SensorNetwork {
    config: NetworkConfig,
    link: SerialLink,
    clock: Duration,
    next_sample: Duration,
    executives: [(NodeId, ActuatorBank); 2],
    scanner: FrameScanner,
    diagnostics: Diagnostics,
    rng: ChaCha8Rng,
}

impl SensorNetwork {
    pub fn new(config: NetworkConfig, link: SerialLink) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            next_sample: config.sampling_period.max(config.startup_delay),
            config,
            link,
            clock: Duration::ZERO,
            executives: [
                (NodeId::executive(PRIMARY_EXECUTIVE), ActuatorBank::OFF),
                (NodeId::executive(MAX_ADDRESS), ActuatorBank::OFF),
            ],
            scanner: FrameScanner::new(Codec::for_layer(Layer::Sensor)),
            diagnostics: Diagnostics::default(),
            rng,
        }
    }

    pub fn clock(&self) -> Duration {
        self.clock
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn link(&self) -> &SerialLink {
        &self.link
    }

    /// Gears held by the executive terminal that drives the greenhouse.
    pub fn primary_bank(&self) -> ActuatorBank {
        self.executives[0].1
    }

    pub fn bank(&self, address: u8) -> Option<ActuatorBank> {
        self.executives.iter().find(|(n, _)| n.address == address).map(|(_, b)| *b)
    }

    /// Terminal → coordinator hop: subject to radio loss, then forwarded to serial.
    fn radio_up(&mut self, data: SensorData) -> bool {
        self.diagnostics.frames_emitted += 1;
        if self.config.radio_loss > 0.0 && self.rng.gen_bool(self.config.radio_loss.min(1.0)) {
            self.diagnostics.frames_dropped += 1;
            return false;
        }
        self.diagnostics.frames_delivered += 1;
        let bytes = encode_frame(&Frame::SensorData(data)).expect("terminal frames are in range");
        self.link.uplink.send(self.clock, &bytes);
        true
    }

    /// Coordinator handling of one instruction frame from serial.
    pub fn coordinator_on_serial(&mut self, frame: &Frame, env: &EnvState, report: &mut TickReport) {
        match coordinator_route(frame) {
            Route::Unexpected => self.diagnostics.unexpected_frames += 1,
            Route::Invalid => {
                self.diagnostics.instructions_received += 1;
                self.diagnostics.invalid_address += 1;
                tracing::debug!(%frame, "dropping instruction with invalid address");
            }
            Route::Query(node) => {
                self.diagnostics.instructions_received += 1;
                let Frame::SensorInstruction(SensorInstruction { command: Command::Query { quantity, .. }, .. }) =
                    frame
                else {
                    unreachable!("routed as query");
                };
                let reading = read(*quantity, env, usize::from(node.address - 1), self.config.soil_threshold);
                if self.radio_up(SensorData::reading(node.address, reading)) {
                    report.samples_forwarded += 1;
                }
            }
            Route::Executives => {
                self.diagnostics.instructions_received += 1;
                let mut handled = false;
                for k in 0..self.executives.len() {
                    let (node, bank) = self.executives[k];
                    let Some(outcome) = executive_terminal_apply(node, frame, &bank) else {
                        continue;
                    };
                    handled = true;
                    self.executives[k].1 = outcome.bank;
                    self.diagnostics.instructions_applied += 1;
                    report.instructions_applied += 1;
                    if outcome.clamped {
                        self.diagnostics.clamp_events += 1;
                    }
                    if self.radio_up(outcome.status) {
                        report.status_frames += 1;
                    }
                }
                if !handled {
                    self.diagnostics.instructions_ignored += 1;
                }
            }
        }
    }

    /// Advances the network clock by `dt`: serial input is routed first, then
    /// every detecting terminal samples if a sampling instant has been reached.
    pub fn network_tick(&mut self, dt: Duration, env: &EnvState) -> Result<TickReport, TickError> {
        if dt.is_zero() {
            return Err(TickError::ZeroStep);
        }
        self.clock += dt;
        let mut report = TickReport::default();

        let bytes = self.link.downlink.recv_ready(self.clock);
        if !bytes.is_empty() {
            let out = self.scanner.push(&bytes);
            self.diagnostics.decode_errors += out.errors.len() as u64;
            for err in &out.errors {
                tracing::debug!(%err, "coordinator decode error");
            }
            for frame in &out.frames {
                self.coordinator_on_serial(frame, env, &mut report);
            }
        }

        if self.clock >= self.next_sample {
            for address in MIN_ADDRESS..=MAX_DETECTING_ADDRESS {
                let samples = detecting_terminal_sample(NodeId::detecting(address), env, self.config.soil_threshold)
                    .expect("address in detecting range");
                for s in samples {
                    if self.radio_up(s) {
                        report.samples_forwarded += 1;
                    }
                }
            }
            let period = self.config.sampling_period.max(Duration::from_millis(1));
            while self.next_sample <= self.clock {
                self.next_sample += period;
            }
        }
        Ok(report)
    }

    /// Frames one full sampling round produces.
    pub const FRAMES_PER_ROUND: usize = LOCATIONS * 4;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::Actuator;
    use crate::link::LinkConfig;
    use crate::protocol::{frame_stream_scan, parse_hex, Report};

    const SEC: Duration = Duration::from_secs(1);

    fn env() -> EnvState {
        EnvState::uniform(20.4, 55.6, 8000.0, 0.5)
    }

    fn net(latency_ms: u64) -> SensorNetwork {
        let link = LinkConfig { latency: Duration::from_millis(latency_ms), ..LinkConfig::default() };
        SensorNetwork::new(NetworkConfig::default(), SerialLink::new(link))
    }

    fn uplink_frames(net: &SensorNetwork, now: Duration) -> Vec<Frame> {
        let out = frame_stream_scan(&net.link().uplink.recv_ready(now));
        assert!(out.errors.is_empty());
        out.frames
    }

    #[test]
    fn sampling_emits_one_round_per_period() {
        let mut n = net(0);
        assert_eq!(n.network_tick(SEC, &env()).unwrap().samples_forwarded, 0);
        assert_eq!(n.network_tick(SEC, &env()).unwrap().samples_forwarded, 24);
        let frames = uplink_frames(&n, n.clock());
        assert_eq!(frames.len(), SensorNetwork::FRAMES_PER_ROUND);
        assert!(frames.contains(&Frame::SensorData(SensorData::reading(3, Reading::Temperature(20)))));
        assert!(frames.contains(&Frame::SensorData(SensorData::reading(6, Reading::Humidity(56)))));
        assert!(frames.contains(&Frame::SensorData(SensorData::reading(1, Reading::Light(8000)))));
        assert!(frames.contains(&Frame::SensorData(SensorData::reading(2, Reading::Soil { dry: false }))));
    }

    #[test]
    fn led_instruction_echoes_status() {
        let mut n = net(100);
        n.link().downlink.send(Duration::ZERO, &parse_hex("A5 06 07 30 01 0D").unwrap());
        let r = n.network_tick(Duration::from_millis(100), &env()).unwrap();
        assert_eq!(r.status_frames, 1);
        assert_eq!(n.primary_bank().get(Actuator::Led), 1);
        // arrives within one tick plus two link latencies
        let frames = uplink_frames(&n, Duration::from_millis(200));
        assert_eq!(frames, vec![Frame::SensorData(SensorData::status(7, Actuator::Led, 1))]);
    }

    #[test]
    fn out_of_range_gear_is_clamped() {
        let frame = Frame::SensorInstruction(SensorInstruction::set(7, Actuator::Heating, 9));
        let out = executive_terminal_apply(NodeId::executive(7), &frame, &ActuatorBank::OFF).unwrap();
        assert!(out.clamped);
        assert_eq!(out.bank.get(Actuator::Heating), 5);
        assert_eq!(out.status.report, Report::Status { actuator: Actuator::Heating, gear: 5 });
    }

    #[test]
    fn secondary_executive_is_isolated() {
        let mut n = net(0);
        let frame = Frame::SensorInstruction(SensorInstruction::set(8, Actuator::Drip, 1));
        n.coordinator_on_serial(&frame, &env(), &mut TickReport::default());
        assert_eq!(n.bank(8).unwrap().get(Actuator::Drip), 1);
        assert_eq!(n.primary_bank(), ActuatorBank::OFF);
    }

    #[test]
    fn invalid_address_is_dropped_and_counted() {
        let mut n = net(0);
        let frame = Frame::SensorInstruction(SensorInstruction::set(0x99, Actuator::Led, 1));
        n.coordinator_on_serial(&frame, &env(), &mut TickReport::default());
        assert_eq!(n.diagnostics().invalid_address, 1);
        assert_eq!(n.primary_bank(), ActuatorBank::OFF);
        assert_eq!(n.diagnostics().frames_emitted, 0);
    }

    #[test]
    fn query_answers_from_addressed_terminal() {
        let mut n = net(0);
        n.link().downlink.send(Duration::ZERO, &parse_hex("A5 06 01 20 10 0D").unwrap());
        n.network_tick(Duration::from_millis(100), &env()).unwrap();
        let frames = uplink_frames(&n, n.clock());
        assert_eq!(frames, vec![Frame::SensorData(SensorData::reading(1, Reading::Temperature(20)))]);
    }

    #[test]
    fn radio_loss_conserves_frames() {
        let cfg = NetworkConfig { radio_loss: 0.3, seed: 11, ..NetworkConfig::default() };
        let mut n = SensorNetwork::new(cfg, SerialLink::new(LinkConfig::instant()));
        for _ in 0..100 {
            n.network_tick(SEC, &env()).unwrap();
        }
        let d = n.diagnostics();
        assert_eq!(d.frames_emitted, 50 * 24);
        assert_eq!(d.frames_emitted, d.frames_delivered + d.frames_dropped);
        assert!(d.frames_dropped > 0);
    }

    #[test]
    fn startup_delay_holds_samples() {
        let cfg = NetworkConfig { startup_delay: Duration::from_secs(5), ..NetworkConfig::default() };
        let mut n = SensorNetwork::new(cfg, SerialLink::new(LinkConfig::instant()));
        for _ in 0..4 {
            assert_eq!(n.network_tick(SEC, &env()).unwrap().samples_forwarded, 0);
        }
        assert_eq!(n.network_tick(SEC, &env()).unwrap().samples_forwarded, 24);
    }

    #[test]
    fn zero_step_is_rejected() {
        assert_eq!(net(0).network_tick(Duration::ZERO, &env()), Err(TickError::ZeroStep));
    }
}
