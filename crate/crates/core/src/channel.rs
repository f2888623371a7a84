//! Full-duplex byte channels: an in-memory virtual pair (the stand-in for a
//! pseudo-terminal pair), a loopback, or a real serial device file.
//!
//! Which backing a connection gets is decided by [`open_channel`] from a
//! [`ChannelConfig`] and the process environment: `DTP_EMULATED=1` forces
//! the virtual backing regardless of the configured mode.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMULATED_ENV: &str = "DTP_EMULATED";

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("virtual pair `{0}` already in use")]
    NameInUse(String),
    #[error("device `{address}` unavailable: {source}")]
    DeviceUnavailable { address: String, source: io::Error },
    #[error("channel address must not be empty")]
    EmptyAddress,
    #[error("channel closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Virtual,
    Loopback,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    #[serde(default)]
    pub address: String,
    #[serde(default)]
    pub baud_hint: Option<u32>,
}

impl ChannelConfig {
    pub fn virtual_pair(name: impl Into<String>) -> Self {
        Self { mode: ChannelMode::Virtual, address: name.into(), baud_hint: None }
    }

    pub fn loopback() -> Self {
        Self { mode: ChannelMode::Loopback, address: String::new(), baud_hint: None }
    }

    pub fn real(path: impl Into<String>) -> Self {
        Self { mode: ChannelMode::Real, address: path.into(), baud_hint: None }
    }

    /// Mode after applying the `DTP_EMULATED` override.
    pub fn effective_mode(&self, env: &HashMap<String, String>) -> ChannelMode {
        match env.get(EMULATED_ENV).map(String::as_str) {
            Some("1") => ChannelMode::Virtual,
            _ => self.mode,
        }
    }
}

#[derive(Default)]
struct Pipe {
    buf: VecDeque<u8>,
    closed: bool,
}

type SharedPipe = Arc<Mutex<Pipe>>;

#[derive(Clone)]
enum Backing {
    Pipe { rx: SharedPipe, tx: SharedPipe },
    Real(Arc<Mutex<File>>),
}

/// One endpoint of a byte stream. Clones share the same endpoint.
///
/// Reads never block on in-memory backings: they return whatever is
/// buffered, up to `max` bytes, possibly nothing.
#[derive(Clone)]
pub struct ByteChannel {
    backing: Backing,
}

impl ByteChannel {
    pub fn loopback() -> Self {
        let pipe = SharedPipe::default();
        Self { backing: Backing::Pipe { rx: pipe.clone(), tx: pipe } }
    }

    pub fn write(&self, bytes: &[u8]) -> Result<(), ChannelError> {
        match &self.backing {
            Backing::Pipe { tx, .. } => {
                let mut pipe = tx.lock().unwrap();
                if pipe.closed {
                    return Err(ChannelError::Closed);
                }
                pipe.buf.extend(bytes);
                Ok(())
            }
            Backing::Real(file) => Ok(file.lock().unwrap().write_all(bytes)?),
        }
    }

    pub fn read(&self, max: usize) -> Result<Vec<u8>, ChannelError> {
        match &self.backing {
            Backing::Pipe { rx, .. } => {
                let mut pipe = rx.lock().unwrap();
                let n = max.min(pipe.buf.len());
                Ok(pipe.buf.drain(..n).collect())
            }
            Backing::Real(file) => {
                let mut buf = vec![0u8; max];
                let n = file.lock().unwrap().read(&mut buf)?;
                buf.truncate(n);
                Ok(buf)
            }
        }
    }

    pub fn read_all(&self) -> Result<Vec<u8>, ChannelError> {
        self.read(usize::MAX)
    }

    /// Closes the outgoing direction; the peer still drains buffered bytes.
    pub fn close(&self) {
        if let Backing::Pipe { tx, .. } = &self.backing {
            tx.lock().unwrap().closed = true;
        }
    }

    /// True once the peer closed and nothing is left to read.
    pub fn is_drained(&self) -> bool {
        match &self.backing {
            Backing::Pipe { rx, .. } => {
                let pipe = rx.lock().unwrap();
                pipe.closed && pipe.buf.is_empty()
            }
            Backing::Real(_) => false,
        }
    }

    pub fn available(&self) -> usize {
        match &self.backing {
            Backing::Pipe { rx, .. } => rx.lock().unwrap().buf.len(),
            Backing::Real(_) => 0,
        }
    }
}

fn connected_pair() -> (ByteChannel, ByteChannel) {
    let a_to_b = SharedPipe::default();
    let b_to_a = SharedPipe::default();
    (
        ByteChannel { backing: Backing::Pipe { rx: b_to_a.clone(), tx: a_to_b.clone() } },
        ByteChannel { backing: Backing::Pipe { rx: a_to_b, tx: b_to_a } },
    )
}

struct PairSlot {
    host: Option<ByteChannel>,
    device: Option<ByteChannel>,
}

/// Named virtual pairs, the in-process equivalent of socat-created PTY links.
///
/// Each pair has a host end (the application side) and a device end (where
/// an emulator attaches).
#[derive(Clone, Default)]
pub struct PairRegistry {
    pairs: Arc<Mutex<BTreeMap<String, PairSlot>>>,
}

impl PairRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates a pair and hands out both ends as `(host, device)`.
    pub fn create_virtual_pair(&self, name: &str) -> Result<(ByteChannel, ByteChannel), ChannelError> {
        let mut pairs = self.pairs.lock().unwrap();
        if pairs.contains_key(name) {
            return Err(ChannelError::NameInUse(name.to_string()));
        }
        let (host, device) = connected_pair();
        pairs.insert(name.to_string(), PairSlot { host: None, device: None });
        Ok((host, device))
    }

    fn take_host(&self, name: &str) -> Result<ByteChannel, ChannelError> {
        let mut pairs = self.pairs.lock().unwrap();
        match pairs.get_mut(name) {
            Some(slot) => slot.host.take().ok_or_else(|| ChannelError::NameInUse(name.to_string())),
            None => {
                let (host, device) = connected_pair();
                pairs.insert(name.to_string(), PairSlot { host: None, device: Some(device) });
                Ok(host)
            }
        }
    }

    /// Claims the device end of a pair, creating the pair if needed.
    pub fn claim_device(&self, name: &str) -> Result<ByteChannel, ChannelError> {
        let mut pairs = self.pairs.lock().unwrap();
        match pairs.get_mut(name) {
            Some(slot) => slot.device.take().ok_or_else(|| ChannelError::NameInUse(name.to_string())),
            None => {
                let (host, device) = connected_pair();
                pairs.insert(name.to_string(), PairSlot { host: Some(host), device: None });
                Ok(device)
            }
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.pairs.lock().unwrap().contains_key(name)
    }
}

/// Opens the host end of a connection according to `config` and `env`.
pub fn open_channel(
    config: &ChannelConfig,
    env: &HashMap<String, String>,
    pairs: &PairRegistry,
) -> Result<ByteChannel, ChannelError> {
    match config.effective_mode(env) {
        ChannelMode::Loopback => Ok(ByteChannel::loopback()),
        ChannelMode::Virtual => {
            if config.address.is_empty() {
                return Err(ChannelError::EmptyAddress);
            }
            pairs.take_host(&config.address)
        }
        ChannelMode::Real => {
            if config.address.is_empty() {
                return Err(ChannelError::EmptyAddress);
            }
            let file = OpenOptions::new()
                .read(true)
                .write(true)
                .open(&config.address)
                .map_err(|source| ChannelError::DeviceUnavailable { address: config.address.clone(), source })?;
            Ok(ByteChannel { backing: Backing::Real(Arc::new(Mutex::new(file))) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn pair_carries_bytes_both_ways() {
        let reg = PairRegistry::new();
        let (a, b) = reg.create_virtual_pair("lcu").unwrap();
        a.write(b"abc").unwrap();
        assert_eq!(b.read(16).unwrap(), b"abc");
        b.write(b"xy").unwrap();
        assert_eq!(a.read_all().unwrap(), b"xy");
        assert!(a.read_all().unwrap().is_empty());
    }

    #[test]
    fn pair_is_fifo_stream() {
        let reg = PairRegistry::new();
        let (a, b) = reg.create_virtual_pair("p").unwrap();
        a.write(&[0x01]).unwrap();
        a.write(&[0x02]).unwrap();
        assert_eq!(b.read(1).unwrap(), [0x01]);
        assert_eq!(b.read(8).unwrap(), [0x02]);
    }

    #[test]
    fn duplicate_pair_name() {
        let reg = PairRegistry::new();
        reg.create_virtual_pair("p").unwrap();
        assert!(matches!(reg.create_virtual_pair("p"), Err(ChannelError::NameInUse(n)) if n == "p"));
    }

    #[test]
    fn env_override_selects_virtual() {
        let reg = PairRegistry::new();
        let cfg = ChannelConfig::real("/dev/ttyUSB7");
        let host = open_channel(&cfg, &env(&[(EMULATED_ENV, "1")]), &reg).unwrap();
        let device = reg.claim_device("/dev/ttyUSB7").unwrap();
        host.write(b"$STATUS\r\n").unwrap();
        assert_eq!(device.read_all().unwrap(), b"$STATUS\r\n");
    }

    #[test]
    fn env_zero_keeps_configured_mode() {
        let reg = PairRegistry::new();
        let cfg = ChannelConfig::real("/dev/absent");
        let err = open_channel(&cfg, &env(&[(EMULATED_ENV, "0")]), &reg).err().unwrap();
        assert!(matches!(err, ChannelError::DeviceUnavailable { address, .. } if address == "/dev/absent"));
        assert!(!reg.contains("/dev/absent"));
    }

    #[test]
    fn loopback_reads_own_writes() {
        let ch = open_channel(&ChannelConfig::loopback(), &HashMap::new(), &PairRegistry::new()).unwrap();
        ch.write(b"ping").unwrap();
        assert_eq!(ch.read_all().unwrap(), b"ping");
    }

    #[test]
    fn host_end_claimed_once() {
        let reg = PairRegistry::new();
        let cfg = ChannelConfig::virtual_pair("modem");
        let _host = open_channel(&cfg, &HashMap::new(), &reg).unwrap();
        assert!(matches!(open_channel(&cfg, &HashMap::new(), &reg), Err(ChannelError::NameInUse(_))));
        let _dev = reg.claim_device("modem").unwrap();
        assert!(matches!(reg.claim_device("modem"), Err(ChannelError::NameInUse(_))));
    }

    #[test]
    fn device_first_then_host() {
        let reg = PairRegistry::new();
        let dev = reg.claim_device("x").unwrap();
        let host = open_channel(&ChannelConfig::virtual_pair("x"), &HashMap::new(), &reg).unwrap();
        dev.write(b"hi").unwrap();
        assert_eq!(host.read_all().unwrap(), b"hi");
    }

    #[test]
    fn virtual_requires_address() {
        let err = open_channel(&ChannelConfig::virtual_pair(""), &HashMap::new(), &PairRegistry::new());
        assert!(matches!(err, Err(ChannelError::EmptyAddress)));
    }

    #[test]
    fn close_lets_peer_drain() {
        let (a, b) = PairRegistry::new().create_virtual_pair("c").unwrap();
        a.write(b"z").unwrap();
        a.close();
        assert!(matches!(a.write(b"y"), Err(ChannelError::Closed)));
        assert!(!b.is_drained());
        assert_eq!(b.read_all().unwrap(), b"z");
        assert!(b.is_drained());
    }

    #[test]
    fn real_device_file_round_trip() {
        // a regular file stands in for a serial device node
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tty");
        std::fs::write(&path, b"").unwrap();
        let ch = open_channel(&ChannelConfig::real(path.to_str().unwrap()), &HashMap::new(), &PairRegistry::new())
            .unwrap();
        ch.write(b"abc").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"abc");
    }
}
