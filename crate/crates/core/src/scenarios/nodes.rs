use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::appmsg::{AckCode, AppMessage, Command, EventCode};
use super::config::PlatformSpec;
use super::report::TimelineEvent;
use super::SimError;
use crate::adminshell::{SharedBuf, TicketBook, TicketState, TwinMode};
use crate::bus::{Bus, Envelope, Publisher};
use crate::channel::{ByteChannel, PairRegistry};
use crate::emulators::{LcuLink, ModemClient, ModemDevice, ModemEvent};
use crate::medium::{Frame, BROADCAST, NS_PER_S};
use crate::schemas::{encode_twin_status, O2Sample, O2_SAMPLE_ID, TWIN_STATUS_ID};
use crate::shadow::ShadowWriter;

/// In-memory log bytes, optionally mirrored to a file as they are written.
pub(crate) struct LogSink {
    buf: SharedBuf,
    mirror: Option<BufWriter<File>>,
}

impl Write for LogSink {
    fn write(&mut self, bytes: &[u8]) -> io::Result<usize> {
        self.buf.write_all(bytes)?;
        if let Some(m) = &mut self.mirror {
            m.write_all(bytes)?;
        }
        Ok(bytes.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        match &mut self.mirror {
            Some(m) => m.flush(),
            None => Ok(()),
        }
    }
}

/// A node's local bus with every publish recorded to its shadow log.
pub(crate) struct NodeLog {
    pub file_name: String,
    bus: Bus,
    publisher: Publisher,
    writer: ShadowWriter<LogSink>,
    buf: SharedBuf,
}

impl NodeLog {
    pub fn new(file_name: String, publisher_id: &str, mirror_dir: Option<&Path>) -> Result<Self, SimError> {
        let buf = SharedBuf::default();
        let mirror = match mirror_dir {
            Some(dir) => Some(BufWriter::new(File::create(dir.join(&file_name))?)),
            None => None,
        };
        let writer = ShadowWriter::new(LogSink { buf: buf.clone(), mirror })?;
        let bus = Bus::new();
        let publisher = Publisher::new(&bus, publisher_id);
        Ok(Self { file_name, bus, publisher, writer, buf })
    }

    pub fn publish(&mut self, topic: &str, t_ns: i64, schema_id: u8, payload: Vec<u8>) -> Result<Envelope, SimError> {
        let envelope = self.publisher.publish(topic, t_ns, schema_id, payload)?;
        self.writer.record(&envelope)?;
        Ok(envelope)
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn buffer(&self) -> &SharedBuf {
        &self.buf
    }

    pub fn flush(&mut self) -> Result<(), SimError> {
        Ok(self.writer.flush()?)
    }
}

/// Host driver and emulated modem joined by a virtual pair.
pub(crate) struct ModemPort {
    host: ByteChannel,
    device: ModemDevice,
    client: ModemClient,
}

impl ModemPort {
    pub fn new(pairs: &PairRegistry, name: &str, addr: u8) -> Result<Self, SimError> {
        let (host, device) = pairs.create_virtual_pair(name)?;
        Ok(Self { host, device: ModemDevice::new(addr, device), client: ModemClient::default() })
    }

    /// Hands `payload` to the modem and returns the frame it queued.
    pub fn send(&mut self, dest: u8, payload: &[u8]) -> Result<Frame, SimError> {
        self.client.send(&self.host, dest, payload)?;
        self.device.poll()?;
        match self.client.poll(&self.host)?.as_slice() {
            [ModemEvent::Ok] => {}
            other => return Err(SimError::Modem(format!("unexpected modem response {other:?}"))),
        }
        self.device.take_pending().ok_or_else(|| SimError::Modem("modem queued no frame".into()))
    }

    /// Surfaces a frame from the medium; returns `(src, payload)` pairs the host read.
    pub fn receive(&mut self, frame: &Frame) -> Result<Vec<(u8, Vec<u8>)>, SimError> {
        self.device.deliver(frame)?;
        Ok(self
            .client
            .poll(&self.host)?
            .into_iter()
            .filter_map(|e| match e {
                ModemEvent::Received { src, payload } => Some((src, payload)),
                _ => None,
            })
            .collect())
    }
}

pub(crate) enum Action {
    Send { dest: u8, msg: AppMessage },
    Sample { platform: usize, at_ns: i64, generation: u64 },
    AckTimeout { at_ns: i64, cmd_id: u8, attempt: u16 },
    Note(TimelineEvent),
}

#[derive(Debug, Default, Clone)]
pub(crate) struct PlatformCounters {
    pub samples: u64,
    pub data_uplinks: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub frames_dropped: u64,
    pub decode_failures: u64,
    pub duplicate_commands: u64,
}

fn secs_to_ns(s: f64) -> i64 {
    (s * NS_PER_S as f64).round() as i64
}

fn clamp_u16(v: u32) -> u16 {
    v.min(u16::MAX as u32) as u16
}

pub(crate) struct PlatformNode {
    pub index: usize,
    pub spec: PlatformSpec,
    pub lcu: LcuLink,
    pub modem: ModemPort,
    pub log: NodeLog,
    pub interval_s: u32,
    pub battery_pct: f64,
    pub counters: PlatformCounters,
    generation: u64,
    sample_seq: u32,
    below_threshold: bool,
    acks: BTreeMap<u8, AppMessage>,
}

impl PlatformNode {
    pub fn new(index: usize, spec: PlatformSpec, lcu: LcuLink, modem: ModemPort, log: NodeLog) -> Self {
        Self {
            index,
            interval_s: spec.sampling_interval_s,
            battery_pct: spec.battery_pct,
            spec,
            lcu,
            modem,
            log,
            counters: PlatformCounters::default(),
            generation: 0,
            sample_seq: 0,
            below_threshold: false,
            acks: BTreeMap::new(),
        }
    }

    pub fn first_sample(&self) -> Action {
        Action::Sample { platform: self.index, at_ns: self.interval_s as i64 * NS_PER_S, generation: self.generation }
    }

    fn topic(&self, leaf: &str) -> String {
        format!("{}/{leaf}", self.spec.platform_id)
    }

    pub fn current_battery(&self) -> f64 {
        self.lcu.device().map_or(self.battery_pct, |d| d.state.battery_pct)
    }

    /// Due sampling timer; stale generations are ignored.
    pub fn on_timer(&mut self, now: i64, generation: u64, vessel: u8, detect: bool) -> Result<Vec<Action>, SimError> {
        if generation != self.generation {
            return Ok(Vec::new());
        }
        let mut out = self.sample(now, vessel, detect)?;
        if self.generation == generation {
            out.push(Action::Sample {
                platform: self.index,
                at_ns: now + self.interval_s as i64 * NS_PER_S,
                generation,
            });
        }
        Ok(out)
    }

    fn sample(&mut self, now: i64, vessel: u8, detect: bool) -> Result<Vec<Action>, SimError> {
        let o2 = self.lcu.read_o2(now)?;
        self.counters.samples += 1;
        let body = O2Sample { t_ns: now, o2_umol_per_l: o2, seq: self.sample_seq }.encode();
        self.sample_seq = self.sample_seq.wrapping_add(1);
        self.log.publish(&self.topic("o2"), now, O2_SAMPLE_ID, body.clone())?;
        let mut out = vec![Action::Send { dest: vessel, msg: AppMessage::Data { schema_id: O2_SAMPLE_ID, body } }];
        if detect {
            if o2 < self.spec.o2_threshold_umol_per_l {
                if !self.below_threshold {
                    self.below_threshold = true;
                    let halved = clamp_u16((self.interval_s / 2).max(1));
                    out.push(Action::Note(TimelineEvent::LowOxygenDetected {
                        platform_id: self.spec.platform_id.clone(),
                        o2_umol_per_l: o2,
                    }));
                    out.extend(self.apply_interval(halved as u32, now, "low_oxygen_detected")?);
                    let copies = self.spec.retry_count as u16 + 1;
                    out.push(Action::Note(TimelineEvent::EventBroadcast {
                        node: self.spec.platform_id.clone(),
                        code: EventCode::LowOxygenDetected,
                        new_sampling_interval_s: halved,
                        copies,
                    }));
                    let event = AppMessage::Event { code: EventCode::LowOxygenDetected, new_sampling_interval_s: halved };
                    out.extend((0..copies).map(|_| Action::Send { dest: BROADCAST, msg: event.clone() }));
                }
            } else {
                self.below_threshold = false;
            }
        }
        Ok(out)
    }

    fn apply_interval(&mut self, interval_s: u32, now: i64, cause: &str) -> Result<Vec<Action>, SimError> {
        if interval_s == self.interval_s {
            return Ok(Vec::new());
        }
        self.lcu.set_interval(interval_s, now)?;
        let from = self.interval_s;
        self.interval_s = interval_s;
        self.generation += 1;
        let (battery, interval) = self.lcu.status(now)?;
        self.battery_pct = battery;
        self.log.publish(&self.topic("status"), now, TWIN_STATUS_ID, encode_twin_status(battery, interval))?;
        Ok(vec![
            Action::Note(TimelineEvent::IntervalChanged {
                platform_id: self.spec.platform_id.clone(),
                from,
                to: interval_s,
                cause: cause.to_string(),
            }),
            Action::Sample { platform: self.index, at_ns: now + interval_s as i64 * NS_PER_S, generation: self.generation },
        ])
    }

    pub fn on_message(
        &mut self,
        src: u8,
        msg: AppMessage,
        now: i64,
        vessel: u8,
        detect: bool,
    ) -> Result<Vec<Action>, SimError> {
        let mut out = Vec::new();
        match msg {
            AppMessage::Command { cmd_id, command } => {
                if let Some(ack) = self.acks.get(&cmd_id) {
                    self.counters.duplicate_commands += 1;
                    return Ok(vec![Action::Send { dest: src, msg: ack.clone() }]);
                }
                let status = match command {
                    Command::SetSamplingInterval { interval_s: 0 } => AckCode::Rejected,
                    Command::SetSamplingInterval { interval_s } => {
                        out.extend(self.apply_interval(interval_s as u32, now, "command")?);
                        AckCode::Ok
                    }
                    Command::TriggerMeasurement => {
                        out.extend(self.sample(now, vessel, detect)?);
                        AckCode::Ok
                    }
                    Command::ReportStatus => AckCode::Ok,
                };
                let (battery, interval) = self.lcu.status(now)?;
                self.battery_pct = battery;
                let ack = AppMessage::AckStatus {
                    cmd_id,
                    status,
                    battery_pct_x10: (battery * 10.0).round().clamp(0.0, u16::MAX as f64) as u16,
                    sampling_interval_s: clamp_u16(interval),
                };
                self.acks.insert(cmd_id, ack.clone());
                out.push(Action::Send { dest: src, msg: ack });
            }
            AppMessage::Event { code, new_sampling_interval_s } => {
                out.push(Action::Note(TimelineEvent::EventReceived {
                    node: self.spec.platform_id.clone(),
                    code,
                    from: src,
                }));
                let cause = match code {
                    EventCode::StormPredicted => "storm_predicted",
                    EventCode::LowOxygenDetected => "low_oxygen_detected",
                };
                out.extend(self.apply_interval(new_sampling_interval_s.max(1) as u32, now, cause)?);
            }
            AppMessage::Data { .. } | AppMessage::AckStatus { .. } => {}
        }
        Ok(out)
    }
}

/// The vessel's picture of one platform.
pub(crate) struct TwinRecord {
    pub platform_id: String,
    pub display_name: String,
    pub addr: u8,
    pub mode: TwinMode,
    pub battery_pct: f64,
    pub sampling_interval_s: u32,
    pub last_contact_t_ns: Option<i64>,
    pub shadow: NodeLog,
    pub data_received: u64,
    retry_count: u8,
    ack_timeout_ns: i64,
}

impl TwinRecord {
    pub fn new(spec: &PlatformSpec, mode: TwinMode, shadow: NodeLog) -> Self {
        Self {
            platform_id: spec.platform_id.clone(),
            display_name: spec.display_name.clone().unwrap_or_else(|| spec.platform_id.clone()),
            addr: spec.modem_addr,
            mode,
            battery_pct: spec.battery_pct,
            sampling_interval_s: spec.sampling_interval_s,
            last_contact_t_ns: None,
            shadow,
            data_received: 0,
            retry_count: spec.retry_count,
            ack_timeout_ns: secs_to_ns(spec.ack_timeout_s),
        }
    }
}

struct Pending {
    ticket_id: String,
    twin: usize,
    command: Command,
    attempts: u16,
}

#[derive(Debug, Default, Clone)]
pub(crate) struct VesselCounters {
    pub command_transmissions: u64,
    pub commands_acked: u64,
    pub commands_rejected: u64,
    pub commands_exhausted: u64,
    pub stale_acks: u64,
    pub events_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub frames_dropped: u64,
    pub decode_failures: u64,
}

pub(crate) struct VesselNode {
    pub addr: u8,
    pub modem: ModemPort,
    pub log: NodeLog,
    pub twins: Vec<TwinRecord>,
    pub counters: VesselCounters,
    event_copies: u16,
    pending: BTreeMap<u8, Pending>,
    next_cmd_id: u16,
}

impl VesselNode {
    pub fn new(addr: u8, modem: ModemPort, log: NodeLog, twins: Vec<TwinRecord>, event_retry_count: u8) -> Self {
        Self {
            addr,
            modem,
            log,
            twins,
            counters: VesselCounters::default(),
            event_copies: event_retry_count as u16 + 1,
            pending: BTreeMap::new(),
            next_cmd_id: 0,
        }
    }

    pub fn submit(
        &mut self,
        ticket_id: &str,
        twin_id: &str,
        command: Command,
        now: i64,
        tickets: &TicketBook,
    ) -> Vec<Action> {
        let fail = |reason: &str| {
            tickets.resolve(ticket_id, TicketState::Failed, now, Some(reason.to_string()));
            vec![Action::Note(TimelineEvent::CommandFailed { ticket_id: ticket_id.to_string(), reason: reason.to_string() })]
        };
        let Some(twin) = self.twins.iter().position(|t| t.platform_id == twin_id) else {
            return fail("unknown twin");
        };
        if self.next_cmd_id > u8::MAX as u16 {
            return fail("command id space exhausted");
        }
        let cmd_id = self.next_cmd_id as u8;
        self.next_cmd_id += 1;
        tickets.update(ticket_id, |t| {
            t.cmd_id = Some(cmd_id);
            t.transmissions = 1;
        });
        self.pending.insert(cmd_id, Pending { ticket_id: ticket_id.to_string(), twin, command, attempts: 1 });
        self.transmit_command(cmd_id, now)
    }

    fn transmit_command(&mut self, cmd_id: u8, now: i64) -> Vec<Action> {
        let p = &self.pending[&cmd_id];
        let twin = &self.twins[p.twin];
        self.counters.command_transmissions += 1;
        vec![
            Action::Note(TimelineEvent::CommandSent {
                cmd_id,
                platform_id: twin.platform_id.clone(),
                attempt: p.attempts,
            }),
            Action::Send { dest: twin.addr, msg: AppMessage::Command { cmd_id, command: p.command } },
            Action::AckTimeout { at_ns: now + twin.ack_timeout_ns, cmd_id, attempt: p.attempts },
        ]
    }

    pub fn on_ack_timeout(&mut self, cmd_id: u8, attempt: u16, now: i64, tickets: &TicketBook) -> Vec<Action> {
        let Some(p) = self.pending.get_mut(&cmd_id) else {
            return Vec::new();
        };
        if p.attempts != attempt {
            return Vec::new();
        }
        let twin = &self.twins[p.twin];
        if p.attempts <= twin.retry_count as u16 {
            p.attempts += 1;
            let attempts = p.attempts as u32;
            tickets.update(&p.ticket_id, |t| t.transmissions = attempts);
            return self.transmit_command(cmd_id, now);
        }
        let p = self.pending.remove(&cmd_id).expect("pending entry present");
        self.counters.commands_exhausted += 1;
        tickets.resolve(&p.ticket_id, TicketState::Failed, now, Some("no acknowledgement after all retries".into()));
        vec![Action::Note(TimelineEvent::CommandExhausted {
            cmd_id,
            platform_id: self.twins[p.twin].platform_id.clone(),
            transmissions: p.attempts,
        })]
    }

    pub fn broadcast_event(&mut self, code: EventCode, new_sampling_interval_s: u16) -> Vec<Action> {
        let event = AppMessage::Event { code, new_sampling_interval_s };
        let mut out = vec![Action::Note(TimelineEvent::EventBroadcast {
            node: "vessel".into(),
            code,
            new_sampling_interval_s,
            copies: self.event_copies,
        })];
        out.extend((0..self.event_copies).map(|_| Action::Send { dest: BROADCAST, msg: event.clone() }));
        out
    }

    pub fn on_message(&mut self, src: u8, msg: AppMessage, now: i64, tickets: &TicketBook) -> Result<Vec<Action>, SimError> {
        let Some(index) = self.twins.iter().position(|t| t.addr == src) else {
            return Ok(Vec::new());
        };
        let twin = &mut self.twins[index];
        twin.last_contact_t_ns = Some(now);
        let mut out = Vec::new();
        match msg {
            AppMessage::Data { schema_id, body } => {
                if schema_id == O2_SAMPLE_ID && O2Sample::decode(&body).is_ok() {
                    twin.shadow.publish("o2", now, O2_SAMPLE_ID, body)?;
                    twin.data_received += 1;
                } else {
                    self.counters.decode_failures += 1;
                }
            }
            AppMessage::AckStatus { cmd_id, status, battery_pct_x10, sampling_interval_s } => {
                twin.battery_pct = battery_pct_x10 as f64 / 10.0;
                twin.sampling_interval_s = sampling_interval_s as u32;
                twin.shadow.publish(
                    "status",
                    now,
                    TWIN_STATUS_ID,
                    encode_twin_status(twin.battery_pct, twin.sampling_interval_s),
                )?;
                let platform_id = twin.platform_id.clone();
                match self.pending.get(&cmd_id) {
                    Some(p) if p.twin == index => {
                        let p = self.pending.remove(&cmd_id).expect("pending entry present");
                        match status {
                            AckCode::Ok => {
                                self.counters.commands_acked += 1;
                                tickets.resolve(&p.ticket_id, TicketState::Acked, now, None);
                                out.push(Action::Note(TimelineEvent::CommandAcked { cmd_id, platform_id }));
                            }
                            AckCode::Rejected => {
                                self.counters.commands_rejected += 1;
                                tickets.resolve(&p.ticket_id, TicketState::Failed, now, Some("rejected by platform".into()));
                                out.push(Action::Note(TimelineEvent::CommandRejected { cmd_id, platform_id }));
                            }
                        }
                    }
                    _ => self.counters.stale_acks += 1,
                }
            }
            AppMessage::Event { code, .. } => {
                self.counters.events_received += 1;
                out.push(Action::Note(TimelineEvent::EventReceived { node: "vessel".into(), code, from: src }));
            }
            AppMessage::Command { .. } => {}
        }
        Ok(out)
    }
}
