//! The digital shadow: an append-only log of published envelopes, and replay
//! of such logs in place of live devices.
//!
//! File layout: the 9-byte magic `DTSHADOW1`, then records framed exactly
//! like the bus stream transport ([`crate::bus::frame_envelope`]).

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bus::{frame_envelope, split_frame, Envelope, FrameError};

pub const MAGIC: &[u8; 9] = b"DTSHADOW1";

#[derive(Debug, Error)]
pub enum ShadowError {
    #[error("record at t_ns {t_ns} precedes last recorded t_ns {last}")]
    TimeRegression { t_ns: i64, last: i64 },
    #[error("corrupt shadow log at offset {0}")]
    CorruptLog(usize),
    #[error("replay speed must be > 0")]
    BadSpeed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Alias: shadow records carry exactly the envelope fields.
pub type ShadowRecord = Envelope;

/// Appends records to any byte sink, starting with the magic header.
pub struct ShadowWriter<W: Write> {
    sink: W,
    last_t_ns: Option<i64>,
    count: usize,
}

impl<W: Write> ShadowWriter<W> {
    pub fn new(mut sink: W) -> Result<Self, ShadowError> {
        sink.write_all(MAGIC)?;
        Ok(Self { sink, last_t_ns: None, count: 0 })
    }

    /// Appends one record and returns the number of records in the log.
    pub fn record(&mut self, envelope: &Envelope) -> Result<usize, ShadowError> {
        if let Some(last) = self.last_t_ns {
            if envelope.t_ns < last {
                return Err(ShadowError::TimeRegression { t_ns: envelope.t_ns, last });
            }
        }
        self.sink.write_all(&frame_envelope(envelope)?)?;
        self.last_t_ns = Some(envelope.t_ns);
        self.count += 1;
        Ok(self.count)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn flush(&mut self) -> Result<(), ShadowError> {
        Ok(self.sink.flush()?)
    }

    pub fn get_ref(&self) -> &W {
        &self.sink
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}

pub type FileShadowWriter = ShadowWriter<BufWriter<File>>;

/// Creates (or truncates) a log file.
pub fn create_log(path: impl AsRef<Path>) -> Result<FileShadowWriter, ShadowError> {
    ShadowWriter::new(BufWriter::new(File::create(path)?))
}

/// Opens an existing log for appending, validating it and resuming the
/// time-ordering check from its last record.
pub fn open_log_for_append(path: impl AsRef<Path>) -> Result<FileShadowWriter, ShadowError> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let records = parse_log(&bytes)?;
    file.seek(SeekFrom::End(0))?;
    Ok(ShadowWriter {
        sink: BufWriter::new(file),
        last_t_ns: records.last().map(|r| r.t_ns),
        count: records.len(),
    })
}

/// Parses a complete log. A bad header fails at offset 0; a record that
/// cannot be decoded, including a truncated tail, fails at its start offset.
pub fn parse_log(bytes: &[u8]) -> Result<Vec<ShadowRecord>, ShadowError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ShadowError::CorruptLog(0));
    }
    let mut offset = MAGIC.len();
    let mut records = Vec::new();
    let mut last: Option<i64> = None;
    while offset < bytes.len() {
        match split_frame(&bytes[offset..]) {
            Ok(Some((record, used))) => {
                if last.is_some_and(|l| record.t_ns < l) {
                    return Err(ShadowError::CorruptLog(offset));
                }
                last = Some(record.t_ns);
                records.push(record);
                offset += used;
            }
            Ok(None) | Err(_) => return Err(ShadowError::CorruptLog(offset)),
        }
    }
    Ok(records)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<ShadowRecord>, ShadowError> {
    parse_log(&std::fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    /// Virtual-time scale factor; 2.0 replays twice as fast as recorded.
    Factor(f64),
    /// No pacing; gaps collapse to zero.
    AsFastAsPossible,
}

impl ReplaySpeed {
    pub fn parse(text: &str) -> Option<Self> {
        if text == "max" {
            return Some(ReplaySpeed::AsFastAsPossible);
        }
        let f: f64 = text.parse().ok()?;
        (f.is_finite() && f > 0.0).then_some(ReplaySpeed::Factor(f))
    }
}

/// Where replay waits between records.
pub trait Pacer {
    /// Blocks (or not) until virtual time `t_ns` is reached.
    fn wait_until(&mut self, t_ns: i64);
}

/// Advances virtual time without sleeping.
#[derive(Debug, Default)]
pub struct VirtualPacer {
    pub now_ns: i64,
}

impl Pacer for VirtualPacer {
    fn wait_until(&mut self, t_ns: i64) {
        self.now_ns = self.now_ns.max(t_ns);
    }
}

/// Sleeps on the wall clock so replay follows the requested speed.
pub struct WallPacer {
    origin: Instant,
    origin_ns: i64,
}

impl WallPacer {
    pub fn starting_at(origin_ns: i64) -> Self {
        Self { origin: Instant::now(), origin_ns }
    }
}

impl Pacer for WallPacer {
    fn wait_until(&mut self, t_ns: i64) {
        let due = Duration::from_nanos((t_ns - self.origin_ns).max(0) as u64);
        let elapsed = self.origin.elapsed();
        if due > elapsed {
            std::thread::sleep(due - elapsed);
        }
    }
}

/// Republishes `records` in order. Each record is handed to `sink` with its
/// virtual publish time `t0 + (t - first.t) / speed`; the envelope keeps its
/// original `t_ns`. In as-fast-as-possible mode every publish time is `t0`.
pub fn replay<F, E>(
    records: &[ShadowRecord],
    speed: ReplaySpeed,
    t0_ns: i64,
    pacer: &mut dyn Pacer,
    mut sink: F,
) -> Result<usize, ReplayError<E>>
where
    F: FnMut(i64, &ShadowRecord) -> Result<(), E>,
{
    if let ReplaySpeed::Factor(f) = speed {
        if !(f.is_finite() && f > 0.0) {
            return Err(ReplayError::Shadow(ShadowError::BadSpeed));
        }
    }
    let Some(first) = records.first() else {
        return Ok(0);
    };
    for record in records {
        let at = match speed {
            ReplaySpeed::AsFastAsPossible => t0_ns,
            ReplaySpeed::Factor(f) => t0_ns + ((record.t_ns - first.t_ns) as f64 / f).round() as i64,
        };
        if !matches!(speed, ReplaySpeed::AsFastAsPossible) {
            pacer.wait_until(at);
        }
        sink(at, record).map_err(ReplayError::Sink)?;
    }
    Ok(records.len())
}

#[derive(Debug, Error)]
pub enum ReplayError<E> {
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error("replay sink failed: {0}")]
    Sink(E),
}

/// Loads a log file and replays it; see [`replay`].
pub fn replay_file<F, E>(
    path: impl AsRef<Path>,
    speed: ReplaySpeed,
    pacer: &mut dyn Pacer,
    sink: F,
) -> Result<usize, ReplayError<E>>
where
    F: FnMut(i64, &ShadowRecord) -> Result<(), E>,
{
    let records = read_log(path)?;
    let t0 = records.first().map_or(0, |r| r.t_ns);
    replay(&records, speed, t0, pacer, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn rec(t_ns: i64, seq: u64) -> Envelope {
        Envelope {
            topic: "bigo-1/o2".into(),
            publisher_id: "bigo-1".into(),
            seq,
            t_ns,
            schema_id: 1,
            payload: vec![seq as u8, 0xEE],
        }
    }

    #[test]
    fn empty_log_is_magic_only() {
        let w = ShadowWriter::new(Vec::new()).unwrap();
        assert_eq!(w.get_ref().as_slice(), MAGIC);
        assert!(parse_log(&w.into_inner()).unwrap().is_empty());
    }

    #[test]
    fn append_and_reopen_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.shadow");
        let mut w = create_log(&path).unwrap();
        assert_eq!(w.record(&rec(5, 0)).unwrap(), 1);
        w.flush().unwrap();
        drop(w);
        assert_eq!(read_log(&path).unwrap(), vec![rec(5, 0)]);

        let mut w = open_log_for_append(&path).unwrap();
        assert!(matches!(w.record(&rec(4, 1)), Err(ShadowError::TimeRegression { t_ns: 4, last: 5 })));
        assert_eq!(w.record(&rec(5, 1)).unwrap(), 2);
        w.flush().unwrap();
        assert_eq!(read_log(&path).unwrap().len(), 2);
    }

    #[test]
    fn time_regression() {
        let mut w = ShadowWriter::new(Vec::new()).unwrap();
        w.record(&rec(5, 0)).unwrap();
        assert!(matches!(w.record(&rec(3, 1)), Err(ShadowError::TimeRegression { t_ns: 3, last: 5 })));
        assert_eq!(w.count(), 1);
    }

    #[test]
    fn corrupt_logs() {
        assert!(matches!(parse_log(b"DTSHADOW2"), Err(ShadowError::CorruptLog(0))));
        assert!(matches!(parse_log(b"DTS"), Err(ShadowError::CorruptLog(0))));
        let mut w = ShadowWriter::new(Vec::new()).unwrap();
        w.record(&rec(1, 0)).unwrap();
        w.record(&rec(2, 1)).unwrap();
        let bytes = w.into_inner();
        let first_len = frame_envelope(&rec(1, 0)).unwrap().len();
        let cut = &bytes[..bytes.len() - 2];
        assert!(matches!(parse_log(cut), Err(ShadowError::CorruptLog(o)) if o == MAGIC.len() + first_len));
    }

    #[test]
    fn replay_preserves_order_and_payloads() {
        let records = vec![rec(0, 0), rec(3, 1), rec(9, 2)];
        let mut out = Vec::new();
        let n = replay(&records, ReplaySpeed::Factor(3.0), 100, &mut VirtualPacer::default(), |at, r| {
            out.push((at, r.clone()));
            Ok::<_, Infallible>(())
        })
        .unwrap();
        assert_eq!(n, 3);
        assert_eq!(out.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(), records);
        assert_eq!(out.iter().map(|(at, _)| *at).collect::<Vec<_>>(), [100, 101, 103]);
    }

    #[test]
    fn replay_speed_scales_gaps() {
        let records = vec![rec(0, 0), rec(10_000_000_000, 1)];
        let mut at = Vec::new();
        let mut pacer = VirtualPacer::default();
        replay(&records, ReplaySpeed::Factor(2.0), 0, &mut pacer, |t, _| {
            at.push(t);
            Ok::<_, Infallible>(())
        })
        .unwrap();
        assert_eq!(at[1] - at[0], 5_000_000_000);
        assert_eq!(pacer.now_ns, 5_000_000_000);
    }

    #[test]
    fn as_fast_as_possible_keeps_original_timestamps() {
        let records = vec![rec(0, 0), rec(7_000_000_000, 1)];
        let mut seen = Vec::new();
        let start = Instant::now();
        replay(&records, ReplaySpeed::AsFastAsPossible, 42, &mut WallPacer::starting_at(0), |at, r| {
            seen.push((at, r.t_ns));
            Ok::<_, Infallible>(())
        })
        .unwrap();
        assert!(start.elapsed() < Duration::from_secs(1));
        assert_eq!(seen, [(42, 0), (42, 7_000_000_000)]);
    }

    #[test]
    fn speed_parsing() {
        assert_eq!(ReplaySpeed::parse("max"), Some(ReplaySpeed::AsFastAsPossible));
        assert_eq!(ReplaySpeed::parse("2.5"), Some(ReplaySpeed::Factor(2.5)));
        assert_eq!(ReplaySpeed::parse("0"), None);
        assert_eq!(ReplaySpeed::parse("-1"), None);
        assert_eq!(ReplaySpeed::parse("fast"), None);
    }
}
