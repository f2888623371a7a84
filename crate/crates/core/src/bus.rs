//! Topic-based publish/subscribe bus.
//!
//! Delivery into subscription queues is synchronous; consumers pull. The bus
//! keeps no history: a subscriber only sees envelopes published after it
//! subscribed. Envelopes cross process boundaries through a length-prefixed
//! stream framing ([`frame_envelope`] / [`unframe_envelope`]).

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex, Weak};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("topic must not be empty")]
    EmptyTopic,
    #[error("sequence gap for {publisher_id} on {topic}: expected {expected}, got {got}")]
    SequenceGap { topic: String, publisher_id: String, expected: u64, got: u64 },
    #[error("subscriber {subscriber_id} already active on {topic}")]
    DuplicateSubscriber { topic: String, subscriber_id: String },
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame truncated")]
    Truncated,
    #[error("declared length {declared} does not match {actual} available bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid UTF-8 in frame text field")]
    InvalidUtf8,
    #[error("field too long to frame: {0}")]
    TooLong(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub topic: String,
    pub publisher_id: String,
    pub seq: u64,
    pub t_ns: i64,
    pub schema_id: u8,
    pub payload: Vec<u8>,
}

type Queue = Arc<Mutex<VecDeque<Envelope>>>;

#[derive(Default)]
struct BusState {
    // topic -> subscriber_id -> queue
    subscriptions: BTreeMap<String, BTreeMap<String, Queue>>,
    // (publisher_id, topic) -> last accepted seq
    last_seq: BTreeMap<(String, String), u64>,
}

/// Shared handle to a bus; clones refer to the same bus.
#[derive(Clone, Default)]
pub struct Bus {
    state: Arc<Mutex<BusState>>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `envelope` to every active subscription on its topic and
    /// returns how many subscriptions received it.
    pub fn publish(&self, envelope: Envelope) -> Result<usize, BusError> {
        if envelope.topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let mut state = self.state.lock().unwrap();
        let key = (envelope.publisher_id.clone(), envelope.topic.clone());
        let expected = state.last_seq.get(&key).map_or(0, |s| s + 1);
        if envelope.seq != expected {
            return Err(BusError::SequenceGap {
                topic: envelope.topic,
                publisher_id: envelope.publisher_id,
                expected,
                got: envelope.seq,
            });
        }
        state.last_seq.insert(key, envelope.seq);
        let Some(subs) = state.subscriptions.get(&envelope.topic) else {
            return Ok(0);
        };
        for queue in subs.values() {
            queue.lock().unwrap().push_back(envelope.clone());
        }
        Ok(subs.len())
    }

    pub fn subscribe(&self, topic: &str, subscriber_id: &str) -> Result<Subscription, BusError> {
        let mut state = self.state.lock().unwrap();
        let subs = state.subscriptions.entry(topic.to_string()).or_default();
        if subs.contains_key(subscriber_id) {
            return Err(BusError::DuplicateSubscriber {
                topic: topic.to_string(),
                subscriber_id: subscriber_id.to_string(),
            });
        }
        let queue = Queue::default();
        subs.insert(subscriber_id.to_string(), queue.clone());
        Ok(Subscription {
            topic: topic.to_string(),
            subscriber_id: subscriber_id.to_string(),
            queue,
            bus: Arc::downgrade(&self.state),
        })
    }

    /// Sequence number the next envelope from `publisher_id` on `topic` must carry.
    pub fn next_seq(&self, publisher_id: &str, topic: &str) -> u64 {
        let state = self.state.lock().unwrap();
        state
            .last_seq
            .get(&(publisher_id.to_string(), topic.to_string()))
            .map_or(0, |s| s + 1)
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.state.lock().unwrap().subscriptions.get(topic).map_or(0, BTreeMap::len)
    }
}

/// Pull-based delivery queue. Dropping it unsubscribes.
pub struct Subscription {
    topic: String,
    subscriber_id: String,
    queue: Queue,
    bus: Weak<Mutex<BusState>>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn subscriber_id(&self) -> &str {
        &self.subscriber_id
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.lock().unwrap().pop_front()
    }

    pub fn drain(&self) -> Vec<Envelope> {
        self.queue.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(state) = self.bus.upgrade() {
            let mut state = state.lock().unwrap();
            if let Some(subs) = state.subscriptions.get_mut(&self.topic) {
                subs.remove(&self.subscriber_id);
                if subs.is_empty() {
                    state.subscriptions.remove(&self.topic);
                }
            }
        }
    }
}

/// Stamps consecutive sequence numbers for one publisher.
pub struct Publisher {
    bus: Bus,
    publisher_id: String,
}

impl Publisher {
    pub fn new(bus: &Bus, publisher_id: impl Into<String>) -> Self {
        Self { bus: bus.clone(), publisher_id: publisher_id.into() }
    }

    pub fn id(&self) -> &str {
        &self.publisher_id
    }

    /// Builds the next envelope for `topic` and publishes it; returns the
    /// envelope as delivered.
    pub fn publish(&self, topic: &str, t_ns: i64, schema_id: u8, payload: Vec<u8>) -> Result<Envelope, BusError> {
        let envelope = Envelope {
            topic: topic.to_string(),
            publisher_id: self.publisher_id.clone(),
            seq: self.bus.next_seq(&self.publisher_id, topic),
            t_ns,
            schema_id,
            payload,
        };
        self.bus.publish(envelope.clone())?;
        Ok(envelope)
    }
}

const LEN_PREFIX: usize = 4;

fn put_text(out: &mut Vec<u8>, s: &str, what: &'static str) -> Result<(), FrameError> {
    let len = u16::try_from(s.len()).map_err(|_| FrameError::TooLong(what))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Encodes an envelope for a byte stream.
///
/// Layout: `u32` body length, then `u16` topic length + topic, `u16`
/// publisher length + publisher, `u64` seq, `i64` t_ns, `u8` schema id,
/// `u32` payload length + payload. All integers little-endian; the leading
/// length counts the body only, not itself.
pub fn frame_envelope(envelope: &Envelope) -> Result<Vec<u8>, FrameError> {
    let mut body = Vec::with_capacity(27 + envelope.topic.len() + envelope.publisher_id.len() + envelope.payload.len());
    put_text(&mut body, &envelope.topic, "topic")?;
    put_text(&mut body, &envelope.publisher_id, "publisher_id")?;
    body.extend_from_slice(&envelope.seq.to_le_bytes());
    body.extend_from_slice(&envelope.t_ns.to_le_bytes());
    body.push(envelope.schema_id);
    let payload_len = u32::try_from(envelope.payload.len()).map_err(|_| FrameError::TooLong("payload"))?;
    body.extend_from_slice(&payload_len.to_le_bytes());
    body.extend_from_slice(&envelope.payload);

    let body_len = u32::try_from(body.len()).map_err(|_| FrameError::TooLong("frame"))?;
    let mut out = Vec::with_capacity(LEN_PREFIX + body.len());
    out.extend_from_slice(&body_len.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.data.len() - self.pos < n {
            return Err(FrameError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], FrameError> {
        let mut b = [0u8; N];
        b.copy_from_slice(self.take(N)?);
        Ok(b)
    }

    fn text(&mut self) -> Result<String, FrameError> {
        let len = u16::from_le_bytes(self.fixed()?) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FrameError::InvalidUtf8)
    }
}

fn parse_body(body: &[u8]) -> Result<Envelope, FrameError> {
    let mut c = Cursor { data: body, pos: 0 };
    let topic = c.text()?;
    let publisher_id = c.text()?;
    let seq = u64::from_le_bytes(c.fixed()?);
    let t_ns = i64::from_le_bytes(c.fixed()?);
    let schema_id = c.fixed::<1>()?[0];
    let payload_len = u32::from_le_bytes(c.fixed()?) as usize;
    let payload = c.take(payload_len)?.to_vec();
    if c.pos != body.len() {
        return Err(FrameError::LengthMismatch { declared: body.len(), actual: c.pos });
    }
    Ok(Envelope { topic, publisher_id, seq, t_ns, schema_id, payload })
}

/// Decodes exactly one framed envelope occupying all of `bytes`.
pub fn unframe_envelope(bytes: &[u8]) -> Result<Envelope, FrameError> {
    if bytes.len() < LEN_PREFIX {
        return Err(FrameError::Truncated);
    }
    let declared = u32::from_le_bytes(bytes[..LEN_PREFIX].try_into().unwrap()) as usize;
    let actual = bytes.len() - LEN_PREFIX;
    if declared != actual {
        return Err(FrameError::LengthMismatch { declared, actual });
    }
    parse_body(&bytes[LEN_PREFIX..])
}

/// Splits one frame off the front of `bytes`, returning the envelope and the
/// number of bytes consumed. `Ok(None)` means the buffer holds only a partial frame.
pub fn split_frame(bytes: &[u8]) -> Result<Option<(Envelope, usize)>, FrameError> {
    if bytes.len() < LEN_PREFIX {
        return Ok(None);
    }
    let declared = u32::from_le_bytes(bytes[..LEN_PREFIX].try_into().unwrap()) as usize;
    let end = LEN_PREFIX + declared;
    if bytes.len() < end {
        return Ok(None);
    }
    Ok(Some((parse_body(&bytes[LEN_PREFIX..end])?, end)))
}

pub fn write_envelope<W: Write>(w: &mut W, envelope: &Envelope) -> Result<(), FrameError> {
    w.write_all(&frame_envelope(envelope)?)?;
    Ok(())
}

/// Reads one envelope from a stream. Returns `Ok(None)` on a clean end of
/// stream at a frame boundary and `Truncated` if the stream ends mid-frame.
pub fn read_envelope<R: Read>(r: &mut R) -> Result<Option<Envelope>, FrameError> {
    let mut prefix = [0u8; LEN_PREFIX];
    let mut filled = 0;
    while filled < LEN_PREFIX {
        match r.read(&mut prefix[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(FrameError::Truncated),
            n => filled += n,
        }
    }
    let declared = u32::from_le_bytes(prefix) as usize;
    let mut body = vec![0u8; declared];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    parse_body(&body).map(Some)
}

/// Forwards every envelope queued on `subscription` to a TCP peer.
pub fn forward_to_stream(subscription: &Subscription, stream: &mut TcpStream) -> Result<usize, FrameError> {
    let mut sent = 0;
    while let Some(env) = subscription.try_recv() {
        write_envelope(stream, &env)?;
        sent += 1;
    }
    stream.flush()?;
    Ok(sent)
}

/// Publishes every envelope read from `stream` into `bus` until the peer
/// closes the connection. Returns the number of envelopes ingested.
pub fn ingest_stream<R: Read>(bus: &Bus, stream: &mut R) -> Result<usize, IngestError> {
    let mut count = 0;
    while let Some(env) = read_envelope(stream)? {
        bus.publish(env)?;
        count += 1;
    }
    Ok(count)
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(topic: &str, publisher: &str, seq: u64) -> Envelope {
        Envelope {
            topic: topic.into(),
            publisher_id: publisher.into(),
            seq,
            t_ns: seq as i64 * 10,
            schema_id: 1,
            payload: vec![seq as u8],
        }
    }

    #[test]
    fn publish_without_subscribers() {
        let bus = Bus::new();
        assert_eq!(bus.publish(env("o2", "p", 0)), Ok(0));
    }

    #[test]
    fn fan_out_to_two_subscribers() {
        let bus = Bus::new();
        let a = bus.subscribe("o2", "a").unwrap();
        let b = bus.subscribe("o2", "b").unwrap();
        let other = bus.subscribe("status", "c").unwrap();
        assert_eq!(bus.publish(env("o2", "p", 0)), Ok(2));
        assert_eq!((a.len(), b.len(), other.len()), (1, 1, 0));
    }

    #[test]
    fn sequence_gap_is_rejected() {
        let bus = Bus::new();
        bus.publish(env("o2", "p", 0)).unwrap();
        let err = bus.publish(env("o2", "p", 2)).unwrap_err();
        assert_eq!(
            err,
            BusError::SequenceGap { topic: "o2".into(), publisher_id: "p".into(), expected: 1, got: 2 }
        );
        // independent counter per topic and per publisher
        bus.publish(env("o2", "q", 0)).unwrap();
        bus.publish(env("status", "p", 0)).unwrap();
        bus.publish(env("o2", "p", 1)).unwrap();
    }

    #[test]
    fn first_seq_must_be_zero() {
        let bus = Bus::new();
        assert!(matches!(bus.publish(env("o2", "p", 1)), Err(BusError::SequenceGap { expected: 0, .. })));
    }

    #[test]
    fn empty_topic_rejected() {
        assert_eq!(Bus::new().publish(env("", "p", 0)), Err(BusError::EmptyTopic));
    }

    #[test]
    fn no_retention_before_subscribe() {
        let bus = Bus::new();
        bus.publish(env("o2", "p", 0)).unwrap();
        let s = bus.subscribe("o2", "late").unwrap();
        assert!(s.is_empty());
        bus.publish(env("o2", "p", 1)).unwrap();
        assert_eq!(s.drain(), vec![env("o2", "p", 1)]);
    }

    #[test]
    fn duplicate_subscriber_and_drop_unsubscribes() {
        let bus = Bus::new();
        let s = bus.subscribe("o2", "a").unwrap();
        assert!(matches!(bus.subscribe("o2", "a"), Err(BusError::DuplicateSubscriber { .. })));
        drop(s);
        assert_eq!(bus.subscriber_count("o2"), 0);
        let _again = bus.subscribe("o2", "a").unwrap();
    }

    #[test]
    fn publisher_stamps_sequence() {
        let bus = Bus::new();
        let sub = bus.subscribe("t", "s").unwrap();
        let p = Publisher::new(&bus, "node");
        p.publish("t", 5, 1, vec![]).unwrap();
        p.publish("t", 6, 1, vec![]).unwrap();
        let seqs: Vec<_> = sub.drain().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [0, 1]);
    }

    #[test]
    fn frame_round_trip_minimal() {
        let e = Envelope { topic: "t".into(), publisher_id: "p".into(), seq: 0, t_ns: 0, schema_id: 1, payload: vec![] };
        let bytes = frame_envelope(&e).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 1 + 2 + 1 + 8 + 8 + 1 + 4);
        assert_eq!(&bytes[..4], &(bytes.len() as u32 - 4).to_le_bytes());
        assert_eq!(unframe_envelope(&bytes).unwrap(), e);
    }

    #[test]
    fn unframe_errors() {
        assert!(matches!(unframe_envelope(&[1, 2, 3]), Err(FrameError::Truncated)));
        let mut bytes = frame_envelope(&env("t", "p", 0)).unwrap();
        bytes.push(0);
        assert!(matches!(unframe_envelope(&bytes), Err(FrameError::LengthMismatch { .. })));
        // declared length matches but inner payload length overruns
        let mut bytes = frame_envelope(&env("t", "p", 0)).unwrap();
        let n = bytes.len();
        bytes[n - 5] = 9;
        assert!(matches!(unframe_envelope(&bytes), Err(FrameError::Truncated)));
    }

    #[test]
    fn stream_read_detects_partial_frame() {
        let bytes = frame_envelope(&env("t", "p", 0)).unwrap();
        let mut partial = &bytes[..bytes.len() - 1];
        assert!(matches!(read_envelope(&mut partial), Err(FrameError::Truncated)));
        let mut empty: &[u8] = &[];
        assert!(read_envelope(&mut empty).unwrap().is_none());
        assert_eq!(split_frame(&bytes[..3]).unwrap(), None);
    }

    #[test]
    fn tcp_bridge_between_buses() {
        use std::net::TcpListener;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();

        let remote = Bus::new();
        let remote_sub = remote.subscribe("o2", "collector").unwrap();
        let server = {
            let remote = remote.clone();
            std::thread::spawn(move || {
                let (mut conn, _) = listener.accept().unwrap();
                ingest_stream(&remote, &mut conn).unwrap()
            })
        };

        let local = Bus::new();
        let uplink = local.subscribe("o2", "bridge").unwrap();
        let publisher = Publisher::new(&local, "lander");
        for i in 0..5 {
            publisher.publish("o2", i, 1, vec![i as u8; 3]).unwrap();
        }
        let mut stream = TcpStream::connect(addr).unwrap();
        assert_eq!(forward_to_stream(&uplink, &mut stream).unwrap(), 5);
        drop(stream);
        assert_eq!(server.join().unwrap(), 5);
        let got = remote_sub.drain();
        assert_eq!(got.len(), 5);
        assert!(got.iter().enumerate().all(|(i, e)| e.seq == i as u64 && e.publisher_id == "lander"));
    }
}
