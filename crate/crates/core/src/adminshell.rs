//! Administration Shell model: per-twin status, time series and command
//! tickets, plus the central registry twins register with.
//!
//! Everything here is transport-agnostic; the HTTP binding lives in the
//! `dtp-shell` crate. The simulator and the shells share state only through
//! the handles defined here: an operator queue the event loop drains, a
//! ticket book, status snapshots and the twins' shadow buffers.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msgschema::decode_binary;
use crate::scenarios::appmsg::{Command, EventCode};
use crate::schemas::{builtin_registry, plot_value};
use crate::shadow::parse_log;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShellError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("unknown ticket `{0}`")]
    UnknownTicket(String),
    #[error("unknown twin `{0}`")]
    UnknownTwin(String),
    #[error("shadow unreadable: {0}")]
    Shadow(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwinRegistration {
    pub twin_id: String,
    pub display_name: String,
    pub base_url: String,
    #[serde(default)]
    pub registered_at_ns: i64,
}

/// Twins known to the central shell, in first-registration order.
#[derive(Clone, Default)]
pub struct CentralRegistry {
    twins: Arc<Mutex<Vec<TwinRegistration>>>,
}

impl CentralRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or updates a twin; returns its position in the listing.
    pub fn register(&self, mut registration: TwinRegistration, now_ns: i64) -> Result<usize, ShellError> {
        for (name, value) in [
            ("twin_id", &registration.twin_id),
            ("display_name", &registration.display_name),
            ("base_url", &registration.base_url),
        ] {
            if value.trim().is_empty() {
                return Err(ShellError::BadRequest(format!("{name} must not be empty")));
            }
        }
        let mut twins = self.twins.lock().unwrap();
        if let Some(pos) = twins.iter().position(|t| t.twin_id == registration.twin_id) {
            let existing = &mut twins[pos];
            existing.base_url = registration.base_url;
            existing.display_name = registration.display_name;
            return Ok(pos);
        }
        registration.registered_at_ns = now_ns;
        twins.push(registration);
        Ok(twins.len() - 1)
    }

    pub fn list(&self) -> Vec<TwinRegistration> {
        self.twins.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwinMode {
    Emulated,
    Real,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinStatus {
    pub twin_id: String,
    pub mode: TwinMode,
    pub battery_pct: f64,
    pub sampling_interval_s: u32,
    pub last_contact_t_ns: Option<i64>,
    /// Simulation time of this snapshot.
    pub now_ns: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TicketState {
    Pending,
    Acked,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTicket {
    pub ticket_id: String,
    pub twin_id: String,
    pub command: Command,
    pub state: TicketState,
    pub submitted_at_ns: i64,
    pub resolved_at_ns: Option<i64>,
    pub cmd_id: Option<u8>,
    pub transmissions: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Tickets in creation order; ids are `t-0001`, `t-0002`, ...
#[derive(Clone, Default)]
pub struct TicketBook {
    inner: Arc<Mutex<BTreeMap<String, CommandTicket>>>,
}

impl TicketBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, twin_id: &str, command: Command, now_ns: i64) -> String {
        let mut book = self.inner.lock().unwrap();
        let ticket_id = format!("t-{:04}", book.len() + 1);
        book.insert(
            ticket_id.clone(),
            CommandTicket {
                ticket_id: ticket_id.clone(),
                twin_id: twin_id.to_string(),
                command,
                state: TicketState::Pending,
                submitted_at_ns: now_ns,
                resolved_at_ns: None,
                cmd_id: None,
                transmissions: 0,
                reason: None,
            },
        );
        ticket_id
    }

    pub fn get(&self, ticket_id: &str) -> Result<CommandTicket, ShellError> {
        self.inner.lock().unwrap().get(ticket_id).cloned().ok_or_else(|| ShellError::UnknownTicket(ticket_id.into()))
    }

    pub(crate) fn update(&self, ticket_id: &str, f: impl FnOnce(&mut CommandTicket)) {
        if let Some(t) = self.inner.lock().unwrap().get_mut(ticket_id) {
            f(t);
        }
    }

    /// Moves a pending ticket to a terminal state. Terminal tickets never change.
    pub(crate) fn resolve(&self, ticket_id: &str, state: TicketState, at_ns: i64, reason: Option<String>) {
        self.update(ticket_id, |t| {
            if t.state == TicketState::Pending && state != TicketState::Pending {
                t.state = state;
                t.resolved_at_ns = Some(at_ns);
                t.reason = reason;
            }
        });
    }

    pub fn all(&self) -> Vec<CommandTicket> {
        self.inner.lock().unwrap().values().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorInput {
    Command { ticket_id: String, twin_id: String, command: Command },
    Event { code: EventCode, new_sampling_interval_s: u16 },
}

/// Thread-safe queue from the shells to the vessel's event loop.
#[derive(Clone, Default)]
pub struct OperatorQueue {
    inner: Arc<Mutex<VecDeque<OperatorInput>>>,
}

impl OperatorQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, input: OperatorInput) {
        self.inner.lock().unwrap().push_back(input);
    }

    pub fn drain(&self) -> Vec<OperatorInput> {
        self.inner.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Latest simulation time, published by the event loop.
#[derive(Clone, Default)]
pub struct SimClock {
    now_ns: Arc<AtomicI64>,
}

impl SimClock {
    pub fn now_ns(&self) -> i64 {
        self.now_ns.load(Ordering::Acquire)
    }

    pub(crate) fn set(&self, t_ns: i64) {
        self.now_ns.store(t_ns, Ordering::Release);
    }
}

/// Status snapshots keyed by twin id, replaced wholesale by the event loop.
#[derive(Clone, Default)]
pub struct StatusBoard {
    inner: Arc<RwLock<BTreeMap<String, TwinStatus>>>,
}

impl StatusBoard {
    pub fn get(&self, twin_id: &str) -> Option<TwinStatus> {
        self.inner.read().unwrap().get(twin_id).cloned()
    }

    pub(crate) fn publish(&self, statuses: BTreeMap<String, TwinStatus>) {
        *self.inner.write().unwrap() = statuses;
    }
}

/// Growable byte buffer shared between a log writer and its readers.
#[derive(Clone, Default)]
pub struct SharedBuf {
    inner: Arc<Mutex<Vec<u8>>>,
}

impl SharedBuf {
    pub fn snapshot(&self) -> Vec<u8> {
        self.inner.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t_ns: i64,
    pub value: f64,
}

/// Decodes the points of `topic` from shadow log bytes, keeps those within
/// `[from_ns, to_ns]` in log order, and truncates to `limit`.
pub fn timeseries_from_shadow(
    log: &[u8],
    topic: &str,
    from_ns: i64,
    to_ns: i64,
    limit: usize,
) -> Result<Vec<TimePoint>, ShellError> {
    if from_ns > to_ns {
        return Err(ShellError::BadRequest("from_ns must not exceed to_ns".into()));
    }
    if limit == 0 {
        return Err(ShellError::BadRequest("limit must be >= 1".into()));
    }
    let records = parse_log(log).map_err(|e| ShellError::Shadow(e.to_string()))?;
    if !records.iter().any(|r| r.topic == topic) {
        return Err(ShellError::UnknownTopic(topic.to_string()));
    }
    let registry = builtin_registry();
    let mut points = Vec::new();
    for r in records.iter().filter(|r| r.topic == topic && (from_ns..=to_ns).contains(&r.t_ns)) {
        let Some(schema) = registry.get(r.schema_id) else { continue };
        let Ok(value) = decode_binary(schema, &r.payload) else { continue };
        if let Some(v) = plot_value(schema, &value) {
            points.push(TimePoint { t_ns: r.t_ns, value: v });
            if points.len() == limit {
                break;
            }
        }
    }
    Ok(points)
}

/// Per-twin Administration Shell.
#[derive(Clone)]
pub struct TwinShell {
    pub twin_id: String,
    pub display_name: String,
    pub(crate) status: StatusBoard,
    pub(crate) shadow: SharedBuf,
    pub(crate) tickets: TicketBook,
    pub(crate) operator: OperatorQueue,
    pub(crate) clock: SimClock,
}

impl TwinShell {
    pub fn get_status(&self) -> Result<TwinStatus, ShellError> {
        self.status.get(&self.twin_id).ok_or_else(|| ShellError::UnknownTwin(self.twin_id.clone()))
    }

    pub fn query_timeseries(&self, topic: &str, from_ns: i64, to_ns: i64, limit: usize) -> Result<Vec<TimePoint>, ShellError> {
        timeseries_from_shadow(&self.shadow.snapshot(), topic, from_ns, to_ns, limit)
    }

    pub fn submit_command(&self, command: Command) -> Result<CommandTicket, ShellError> {
        if let Command::SetSamplingInterval { interval_s: 0 } = command {
            return Err(ShellError::BadRequest("interval_s must be within 1..=65535".into()));
        }
        let ticket_id = self.tickets.create(&self.twin_id, command, self.clock.now_ns());
        self.operator.push(OperatorInput::Command { ticket_id: ticket_id.clone(), twin_id: self.twin_id.clone(), command });
        self.tickets.get(&ticket_id)
    }

    /// Looks up a ticket issued by this twin's shell.
    pub fn poll_command(&self, ticket_id: &str) -> Result<CommandTicket, ShellError> {
        let ticket = self.tickets.get(ticket_id)?;
        if ticket.twin_id != self.twin_id {
            return Err(ShellError::UnknownTicket(ticket_id.into()));
        }
        Ok(ticket)
    }

    pub fn inject_event(&self, event_code: u8, new_sampling_interval_s: u16) -> Result<(), ShellError> {
        inject_event(&self.operator, event_code, new_sampling_interval_s)
    }

    pub fn shadow_bytes(&self) -> Vec<u8> {
        self.shadow.snapshot()
    }
}

pub fn inject_event(queue: &OperatorQueue, event_code: u8, new_sampling_interval_s: u16) -> Result<(), ShellError> {
    let code = EventCode::from_code(event_code)
        .ok_or_else(|| ShellError::BadRequest(format!("unknown event code {event_code}")))?;
    if new_sampling_interval_s == 0 {
        return Err(ShellError::BadRequest("new_sampling_interval_s must be >= 1".into()));
    }
    queue.push(OperatorInput::Event { code, new_sampling_interval_s });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Envelope;
    use crate::schemas::{O2Sample, O2_SAMPLE_ID};
    use crate::shadow::ShadowWriter;

    fn reg(id: &str, url: &str) -> TwinRegistration {
        TwinRegistration { twin_id: id.into(), display_name: id.to_uppercase(), base_url: url.into(), registered_at_ns: 0 }
    }

    #[test]
    fn register_and_upsert() {
        let central = CentralRegistry::new();
        assert_eq!(central.register(reg("bigo-1", "http://a"), 5), Ok(0));
        assert_eq!(central.register(reg("bigo-2", "http://b"), 6), Ok(1));
        assert_eq!(central.register(reg("bigo-1", "http://c"), 7), Ok(0));
        let list = central.list();
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].base_url, "http://c");
        assert_eq!(list[0].registered_at_ns, 5);
        assert!(matches!(central.register(reg("", "http://x"), 0), Err(ShellError::BadRequest(_))));
    }

    #[test]
    fn tickets_only_leave_pending_once() {
        let book = TicketBook::new();
        let id = book.create("bigo-1", Command::ReportStatus, 10);
        assert_eq!(id, "t-0001");
        book.resolve(&id, TicketState::Acked, 20, None);
        book.resolve(&id, TicketState::Failed, 30, Some("late".into()));
        let t = book.get(&id).unwrap();
        assert_eq!((t.state, t.resolved_at_ns), (TicketState::Acked, Some(20)));
        assert_eq!(book.get("t-9"), Err(ShellError::UnknownTicket("t-9".into())));
    }

    fn o2_log(points: &[(i64, f64)]) -> Vec<u8> {
        let mut w = ShadowWriter::new(Vec::new()).unwrap();
        for (i, (t, v)) in points.iter().enumerate() {
            let payload = O2Sample { t_ns: *t, o2_umol_per_l: *v, seq: i as u32 }.encode();
            let e = Envelope { topic: "o2".into(), publisher_id: "x".into(), seq: i as u64, t_ns: *t, schema_id: O2_SAMPLE_ID, payload };
            w.record(&e).unwrap();
        }
        w.into_inner()
    }

    #[test]
    fn timeseries_window_and_limit() {
        let log = o2_log(&[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0), (5, 5.0), (6, 6.0)]);
        let first3 = timeseries_from_shadow(&log, "o2", i64::MIN, i64::MAX, 3).unwrap();
        assert_eq!(first3.iter().map(|p| p.t_ns).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(timeseries_from_shadow(&log, "o2", 10, 20, 5).unwrap().is_empty());
        let mid = timeseries_from_shadow(&log, "o2", 2, 4, 100).unwrap();
        assert_eq!(mid.iter().map(|p| p.value).collect::<Vec<_>>(), [2.0, 3.0, 4.0]);
        assert_eq!(timeseries_from_shadow(&log, "co2", 0, 1, 1), Err(ShellError::UnknownTopic("co2".into())));
        assert!(matches!(timeseries_from_shadow(&log, "o2", 5, 1, 1), Err(ShellError::BadRequest(_))));
        assert!(matches!(timeseries_from_shadow(&log, "o2", 0, 1, 0), Err(ShellError::BadRequest(_))));
    }

    #[test]
    fn inject_event_validates_code() {
        let q = OperatorQueue::new();
        inject_event(&q, 1, 300).unwrap();
        assert_eq!(inject_event(&q, 99, 300), Err(ShellError::BadRequest("unknown event code 99".into())));
        assert_eq!(q.drain(), vec![OperatorInput::Event { code: EventCode::StormPredicted, new_sampling_interval_s: 300 }]);
    }
}
