//! Byte-level emulators for the test-rig devices.
//!
//! The lander control unit (LCU) speaks a line protocol over a serial
//! channel; the optode is a deterministic signal (or a recording); the
//! acoustic modem exposes an AT-style instant-message command set.
//!
//! LCU protocol, all lines CR/LF terminated:
//!
//! | request        | response                                   |
//! |----------------|--------------------------------------------|
//! | `$STATUS`      | `!STATUS,OK,<battery %, 1 decimal>,<interval s>` |
//! | `$GETO2`       | `!O2,<umol/l, 3 decimals>,umol/l`          |
//! | `$SAMPLE,<n>`  | `!ACK,SAMPLE,<n>`                          |
//! | other          | `!ERR,UNKNOWN_CMD`                         |
//!
//! Modem: `AT*SENDIM,<dest>,<len>` followed by `len` raw bytes answers
//! `OK`, `ERROR,TOO_LONG`, `ERROR,BAD_ADDR` or `ERROR,SYNTAX`. Received
//! frames surface as `RECVIM,<src>,<len>` followed by the raw payload.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{ByteChannel, ChannelError};
use crate::medium::{Frame, BROADCAST, MAX_PAYLOAD, NS_PER_S};

pub const BATTERY_DRAIN_PER_SAMPLE_PCT: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptodeModel {
    pub baseline_umol_per_l: f64,
    #[serde(default)]
    pub amplitude_umol_per_l: f64,
    #[serde(default = "default_period")]
    pub period_s: f64,
    #[serde(default)]
    pub noise_std_umol_per_l: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_period() -> f64 {
    86_400.0
}

impl OptodeModel {
    pub fn constant(value: f64) -> Self {
        Self { baseline_umol_per_l: value, amplitude_umol_per_l: 0.0, period_s: default_period(), noise_std_umol_per_l: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return Err("optode period_s must be > 0".into());
        }
        if !(self.noise_std_umol_per_l.is_finite() && self.noise_std_umol_per_l >= 0.0) {
            return Err("optode noise_std_umol_per_l must be >= 0".into());
        }
        Ok(())
    }
}

/// Oxygen concentration at `t_ns`: `baseline + amplitude * sin(2 pi t / period)`
/// plus zero-mean Gaussian noise drawn from a generator keyed on `(seed, t_ns)`.
pub fn optode_sample(model: &OptodeModel, t_ns: i64) -> f64 {
    let t_s = t_ns as f64 / NS_PER_S as f64;
    let signal = model.baseline_umol_per_l + model.amplitude_umol_per_l * (2.0 * PI * t_s / model.period_s).sin();
    if model.noise_std_umol_per_l == 0.0 {
        return signal;
    }
    let key = model.seed.rotate_left(17) ^ (t_ns as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let noise = Normal::new(0.0, model.noise_std_umol_per_l).expect("validated std");
    signal + noise.sample(&mut rng)
}

/// Step-hold playback of recorded `(t_ns, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSeries {
    points: Vec<(i64, f64)>,
}

impl RecordedSeries {
    pub fn new(mut points: Vec<(i64, f64)>) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        points.sort_by_key(|p| p.0);
        Some(Self { points })
    }

    /// Value of the latest point at or before `t_ns`, or the first point
    /// when `t_ns` precedes the recording.
    pub fn sample(&self, t_ns: i64) -> f64 {
        let idx = self.points.partition_point(|p| p.0 <= t_ns);
        self.points[idx.saturating_sub(1)].1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptodeSource {
    Model(OptodeModel),
    Recorded(RecordedSeries),
}

impl OptodeSource {
    pub fn sample(&self, t_ns: i64) -> f64 {
        match self {
            OptodeSource::Model(m) => optode_sample(m, t_ns),
            OptodeSource::Recorded(r) => r.sample(t_ns),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcuState {
    pub battery_pct: f64,
    pub sampling_interval_s: u32,
    pub samples_taken: u64,
    pub optode: OptodeSource,
}

impl LcuState {
    pub fn new(battery_pct: f64, sampling_interval_s: u32, optode: OptodeSource) -> Self {
        Self { battery_pct, sampling_interval_s: sampling_interval_s.max(1), samples_taken: 0, optode }
    }

    /// Answers one protocol line. `line` may carry its CR/LF terminator; the
    /// response always does.
    pub fn handle_line(&mut self, line: &str, t_ns: i64) -> String {
        let cmd = line.trim_end_matches(['\r', '\n']);
        let body = match cmd {
            "$STATUS" => format!("!STATUS,OK,{:.1},{}", self.battery_pct, self.sampling_interval_s),
            "$GETO2" => {
                let value = self.optode.sample(t_ns);
                self.samples_taken += 1;
                self.battery_pct = (self.battery_pct - BATTERY_DRAIN_PER_SAMPLE_PCT).max(0.0);
                format!("!O2,{value:.3},umol/l")
            }
            _ => match cmd.strip_prefix("$SAMPLE,") {
                Some(arg) => match arg.parse::<u32>() {
                    Ok(n) if n >= 1 => {
                        self.sampling_interval_s = n;
                        format!("!ACK,SAMPLE,{n}")
                    }
                    _ => "!ERR,BAD_ARG".to_string(),
                },
                None => "!ERR,UNKNOWN_CMD".to_string(),
            },
        };
        body + "\r\n"
    }
}

pub fn lcu_handle_line(state: &mut LcuState, line: &str, t_ns: i64) -> String {
    state.handle_line(line, t_ns)
}

/// Accumulates stream bytes and yields complete `\n`-terminated lines.
#[derive(Debug, Default, Clone)]
pub struct LineBuffer {
    buf: Vec<u8>,
}

impl LineBuffer {
    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete line including its terminator.
    pub fn next_line(&mut self) -> Option<String> {
        let pos = self.buf.iter().position(|&b| b == b'\n')?;
        let line: Vec<u8> = self.buf.drain(..=pos).collect();
        Some(String::from_utf8_lossy(&line).into_owned())
    }

    fn take_exact(&mut self, n: usize) -> Option<Vec<u8>> {
        (self.buf.len() >= n).then(|| self.buf.drain(..n).collect())
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

/// LCU emulator attached to the device end of a channel.
pub struct LcuDevice {
    pub state: LcuState,
    channel: ByteChannel,
    lines: LineBuffer,
}

impl LcuDevice {
    pub fn new(state: LcuState, channel: ByteChannel) -> Self {
        Self { state, channel, lines: LineBuffer::default() }
    }

    /// Reads whatever arrived and answers every complete line.
    pub fn poll(&mut self, t_ns: i64) -> Result<usize, ChannelError> {
        self.lines.push(&self.channel.read_all()?);
        let mut handled = 0;
        while let Some(line) = self.lines.next_line() {
            let response = self.state.handle_line(&line, t_ns);
            self.channel.write(response.as_bytes())?;
            handled += 1;
        }
        Ok(handled)
    }
}

/// One request/response exchange as seen on the host side of the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("device sent no response to `{0}`")]
    NoResponse(String),
    #[error("unexpected response `{0}`")]
    BadResponse(String),
}

/// Host-side driver paired with an in-process LCU emulator.
///
/// The host and device channels may be the two ends of a virtual pair or
/// the same loopback endpoint; the transcript is identical either way.
pub struct LcuLink {
    host: ByteChannel,
    device: Option<LcuDevice>,
    lines: LineBuffer,
    transcript: Vec<Exchange>,
}

/// Read attempts granted to a hardware peer before a request times out.
const HARDWARE_READ_ATTEMPTS: usize = 200;
const HARDWARE_READ_BACKOFF: std::time::Duration = std::time::Duration::from_millis(10);

impl LcuLink {
    pub fn new(host: ByteChannel, device: LcuDevice) -> Self {
        Self { host, device: Some(device), lines: LineBuffer::default(), transcript: Vec::new() }
    }

    /// Link to physical hardware on the far end of `host`.
    pub fn hardware(host: ByteChannel) -> Self {
        Self { host, device: None, lines: LineBuffer::default(), transcript: Vec::new() }
    }

    pub fn device(&self) -> Option<&LcuDevice> {
        self.device.as_ref()
    }

    pub fn device_mut(&mut self) -> Option<&mut LcuDevice> {
        self.device.as_mut()
    }

    pub fn transcript(&self) -> &[Exchange] {
        &self.transcript
    }

    /// Sends `command` (without terminator) and returns the response line
    /// without its terminator.
    pub fn transact(&mut self, command: &str, t_ns: i64) -> Result<String, LinkError> {
        let sent = format!("{command}\r\n").into_bytes();
        self.host.write(&sent)?;
        let mut received = Vec::new();
        let line = match &mut self.device {
            Some(device) => {
                device.poll(t_ns)?;
                received = self.host.read_all()?;
                self.lines.push(&received);
                self.lines.next_line()
            }
            None => {
                let mut line = None;
                for _ in 0..HARDWARE_READ_ATTEMPTS {
                    let chunk = self.host.read_all()?;
                    received.extend_from_slice(&chunk);
                    self.lines.push(&chunk);
                    line = self.lines.next_line();
                    if line.is_some() {
                        break;
                    }
                    std::thread::sleep(HARDWARE_READ_BACKOFF);
                }
                line
            }
        };
        let line = line.ok_or_else(|| LinkError::NoResponse(command.to_string()))?;
        self.transcript.push(Exchange { sent, received });
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }

    pub fn read_o2(&mut self, t_ns: i64) -> Result<f64, LinkError> {
        let line = self.transact("$GETO2", t_ns)?;
        parse_o2_response(&line).ok_or(LinkError::BadResponse(line))
    }

    /// Returns `(battery_pct, interval_s)`.
    pub fn status(&mut self, t_ns: i64) -> Result<(f64, u32), LinkError> {
        let line = self.transact("$STATUS", t_ns)?;
        parse_status_response(&line).ok_or(LinkError::BadResponse(line))
    }

    pub fn set_interval(&mut self, interval_s: u32, t_ns: i64) -> Result<(), LinkError> {
        let line = self.transact(&format!("$SAMPLE,{interval_s}"), t_ns)?;
        if line == format!("!ACK,SAMPLE,{interval_s}") {
            Ok(())
        } else {
            Err(LinkError::BadResponse(line))
        }
    }
}

pub fn parse_o2_response(line: &str) -> Option<f64> {
    let rest = line.trim_end_matches(['\r', '\n']).strip_prefix("!O2,")?;
    let value = rest.strip_suffix(",umol/l")?;
    value.parse().ok()
}

pub fn parse_status_response(line: &str) -> Option<(f64, u32)> {
    let rest = line.trim_end_matches(['\r', '\n']).strip_prefix("!STATUS,OK,")?;
    let (battery, interval) = rest.split_once(',')?;
    Some((battery.parse().ok()?, interval.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModemState {
    pub local_addr: u8,
    pub pending_tx: VecDeque<Frame>,
}

impl ModemState {
    pub fn new(local_addr: u8) -> Self {
        Self { local_addr, pending_tx: VecDeque::new() }
    }

    /// Handles one `AT*SENDIM` command whose header is `line` and whose raw
    /// payload is `trailing`.
    pub fn handle_line(&mut self, line: &str, trailing: &[u8]) -> String {
        let response = match parse_sendim(line) {
            None => "ERROR,SYNTAX",
            Some((_, len)) if len as usize > MAX_PAYLOAD => "ERROR,TOO_LONG",
            Some((dest, _)) if dest == 0 || dest == self.local_addr => "ERROR,BAD_ADDR",
            Some((_, len)) if len as usize != trailing.len() => "ERROR,SYNTAX",
            Some((dest, _)) => {
                let frame = Frame::new(self.local_addr, dest, trailing.to_vec()).expect("length checked");
                self.pending_tx.push_back(frame);
                "OK"
            }
        };
        format!("{response}\r\n")
    }
}

pub fn modem_handle_line(state: &mut ModemState, line: &str, trailing: &[u8]) -> String {
    state.handle_line(line, trailing)
}

/// Parses `AT*SENDIM,<dest>,<len>` into `(dest, len)`.
fn parse_sendim(line: &str) -> Option<(u8, u8)> {
    let rest = line.trim_end_matches(['\r', '\n']).strip_prefix("AT*SENDIM,")?;
    let (dest, len) = rest.split_once(',')?;
    Some((dest.parse().ok()?, len.parse().ok()?))
}

pub fn recvim_bytes(frame: &Frame) -> Vec<u8> {
    let mut out = format!("RECVIM,{},{}\r\n", frame.src, frame.len()).into_bytes();
    out.extend_from_slice(frame.payload());
    out
}

pub fn sendim_bytes(dest: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("AT*SENDIM,{dest},{}\r\n", payload.len()).into_bytes();
    out.extend_from_slice(payload);
    out
}

/// Modem emulator on the device end of a channel.
pub struct ModemDevice {
    pub state: ModemState,
    channel: ByteChannel,
    input: LineBuffer,
    awaiting: Option<(String, usize)>,
}

impl ModemDevice {
    pub fn new(local_addr: u8, channel: ByteChannel) -> Self {
        Self { state: ModemState::new(local_addr), channel, input: LineBuffer::default(), awaiting: None }
    }

    pub fn local_addr(&self) -> u8 {
        self.state.local_addr
    }

    /// Consumes host commands and answers them; queued frames collect in
    /// `state.pending_tx`.
    pub fn poll(&mut self) -> Result<(), ChannelError> {
        self.input.push(&self.channel.read_all()?);
        loop {
            if let Some((header, len)) = self.awaiting.take() {
                match self.input.take_exact(len) {
                    Some(payload) => {
                        let response = self.state.handle_line(&header, &payload);
                        self.channel.write(response.as_bytes())?;
                    }
                    None => {
                        self.awaiting = Some((header, len));
                        return Ok(());
                    }
                }
            }
            let Some(line) = self.input.next_line() else {
                return Ok(());
            };
            match parse_sendim(&line) {
                Some((_, len)) => self.awaiting = Some((line, len as usize)),
                None => self.channel.write(b"ERROR,SYNTAX\r\n")?,
            }
        }
    }

    pub fn take_pending(&mut self) -> Option<Frame> {
        self.state.pending_tx.pop_front()
    }

    /// Surfaces a frame received from the medium to the host.
    pub fn deliver(&mut self, frame: &Frame) -> Result<(), ChannelError> {
        if frame.dest != self.state.local_addr && frame.dest != BROADCAST {
            return Ok(());
        }
        self.channel.write(&recvim_bytes(frame))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModemEvent {
    Ok,
    Error(String),
    Received { src: u8, payload: Vec<u8> },
}

/// Host-side parser for the modem's response stream.
#[derive(Default)]
pub struct ModemClient {
    input: LineBuffer,
    awaiting: Option<(u8, usize)>,
}

impl ModemClient {
    pub fn send(&self, channel: &ByteChannel, dest: u8, payload: &[u8]) -> Result<(), ChannelError> {
        channel.write(&sendim_bytes(dest, payload))
    }

    pub fn poll(&mut self, channel: &ByteChannel) -> Result<Vec<ModemEvent>, ChannelError> {
        self.input.push(&channel.read_all()?);
        let mut events = Vec::new();
        loop {
            if let Some((src, len)) = self.awaiting.take() {
                match self.input.take_exact(len) {
                    Some(payload) => events.push(ModemEvent::Received { src, payload }),
                    None => {
                        self.awaiting = Some((src, len));
                        return Ok(events);
                    }
                }
            }
            let Some(line) = self.input.next_line() else {
                return Ok(events);
            };
            let line = line.trim_end_matches(['\r', '\n']);
            if line == "OK" {
                events.push(ModemEvent::Ok);
            } else if let Some(kind) = line.strip_prefix("ERROR,") {
                events.push(ModemEvent::Error(kind.to_string()));
            } else if let Some(rest) = line.strip_prefix("RECVIM,") {
                let parsed = rest.split_once(',').and_then(|(s, l)| Some((s.parse().ok()?, l.parse().ok()?)));
                match parsed {
                    Some((src, len)) => self.awaiting = Some((src, len)),
                    None => events.push(ModemEvent::Error(format!("unparsable `{line}`"))),
                }
            } else {
                events.push(ModemEvent::Error(format!("unexpected `{line}`")));
            }
        }
    }
}
