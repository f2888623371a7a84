//! Platform and vessel state machines driven by a deterministic
//! discrete-event loop.
//!
//! Every platform owns an LCU link (through its configured channel), an
//! emulated modem and a local bus whose publishes are recorded to the
//! platform's shadow log. The vessel keeps one twin record per platform and
//! tracks operator commands until they are acknowledged or exhausted.
//!
//! Samples fire at `k * interval` for `k >= 1` up to and including the
//! configured duration. After the duration, frames already in flight are
//! delivered but nodes transmit nothing further, so per-link conservation
//! holds exactly in the final report.

pub mod appmsg;
pub mod config;
mod nodes;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::path::Path;

use thiserror::Error;

use crate::adminshell::{OperatorInput, OperatorQueue, SimClock, StatusBoard, TicketBook, TwinMode, TwinShell, TwinStatus};
use crate::bus::{Bus, BusError};
use crate::channel::{open_channel, ChannelError, ChannelMode, PairRegistry};
use crate::emulators::{Exchange, LcuDevice, LcuLink, LcuState, LinkError, OptodeSource, RecordedSeries};
use crate::medium::{Frame, Medium, MediumError, ReceiverOutcome, Transmission, NS_PER_S};
use crate::schemas::{encode_app_frame, O2Sample, APP_FRAME_ID};
use crate::shadow::{read_log, replay, ReplaySpeed, ShadowError, ShadowRecord, VirtualPacer};
use crate::sim::EventQueue;

use appmsg::AppMessage;
use config::{ConfigError, OptodeSpec, PlatformSpec, ScenarioKind, SimConfig};
use nodes::{Action, ModemPort, NodeLog, PlatformNode, TwinRecord, VesselNode};
pub use report::{LinkReport, PlatformReport, SimReport, TimelineEntry, TimelineEvent, VesselReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("modem: {0}")]
    Modem(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
enum SimEvent {
    Sample { platform: usize, generation: u64 },
    Arrival { dest: u8, frame: Frame },
    AckTimeout { cmd_id: u8, attempt: u16 },
    ScheduledCommand(usize),
    ScheduledEvent,
}

#[derive(Debug, Clone, Copy)]
enum NodeRef {
    Vessel,
    Platform(usize),
}

/// Collects the `(t_ns, o2)` points of `topic` from recorded oxygen samples.
pub fn recorded_optode(records: &[ShadowRecord], topic: &str) -> Option<RecordedSeries> {
    let mut points = Vec::new();
    let mut pacer = VirtualPacer::default();
    replay(records, ReplaySpeed::AsFastAsPossible, 0, &mut pacer, |_, r| {
        if r.topic == topic {
            if let Ok(s) = O2Sample::decode(&r.payload) {
                points.push((r.t_ns, s.o2_umol_per_l));
            }
        }
        Ok::<(), Infallible>(())
    })
    .expect("as-fast-as-possible replay into an infallible sink");
    RecordedSeries::new(points)
}

fn resolve_optode(spec: &PlatformSpec) -> Result<OptodeSource, SimError> {
    match &spec.optode {
        OptodeSpec::Model(m) => Ok(OptodeSource::Model(m.clone())),
        OptodeSpec::Recorded(r) => Ok(OptodeSource::Recorded(r.clone())),
        OptodeSpec::Replay { shadow, topic } => {
            let records = read_log(shadow)?;
            let topic = topic.clone().unwrap_or_else(|| format!("{}/o2", spec.platform_id));
            recorded_optode(&records, &topic).map(OptodeSource::Recorded).ok_or_else(|| {
                SimError::Config(ConfigError::new(format!(
                    "{}: no samples on topic `{topic}` in {}",
                    spec.platform_id,
                    shadow.display()
                )))
            })
        }
    }
}

pub fn platform_log_name(platform_id: &str) -> String {
    format!("platform-{platform_id}.shadow")
}

pub fn twin_log_name(platform_id: &str) -> String {
    format!("twin-{platform_id}.shadow")
}

pub const VESSEL_LOG_NAME: &str = "vessel.shadow";

/// A configured network of platforms and a vessel on a virtual clock.
pub struct Simulation {
    config: SimConfig,
    now_ns: i64,
    draining: bool,
    queue: EventQueue<SimEvent>,
    medium: Medium,
    platforms: Vec<PlatformNode>,
    vessel: VesselNode,
    by_addr: BTreeMap<u8, NodeRef>,
    links: BTreeMap<(u8, u8), LinkReport>,
    timeline: Vec<TimelineEntry>,
    oversize_messages: u64,
    tickets: TicketBook,
    operator: OperatorQueue,
    clock: SimClock,
    status: StatusBoard,
}

impl Simulation {
    /// Builds the network. `env` selects channel backings; with `mirror_dir`
    /// every shadow log is also written to a file there as it grows.
    pub fn new(config: SimConfig, env: &HashMap<String, String>, mirror_dir: Option<&Path>) -> Result<Self, SimError> {
        config.validate()?;
        let mut medium = Medium::new(config.medium.clone(), config.seed)?;
        let pairs = PairRegistry::new();
        medium.register(config.vessel_addr)?;
        let mut by_addr = BTreeMap::from([(config.vessel_addr, NodeRef::Vessel)]);

        let mut platforms = Vec::with_capacity(config.platforms.len());
        let mut twins = Vec::with_capacity(config.platforms.len());
        for (index, spec) in config.platforms.iter().enumerate() {
            medium.register(spec.modem_addr)?;
            by_addr.insert(spec.modem_addr, NodeRef::Platform(index));
            let state = LcuState::new(spec.battery_pct, spec.sampling_interval_s, resolve_optode(spec)?);
            let channel = spec.lcu_channel();
            let mode = channel.effective_mode(env);
            let host = open_channel(&channel, env, &pairs)?;
            let lcu = match mode {
                ChannelMode::Virtual => LcuLink::new(host, LcuDevice::new(state, pairs.claim_device(&channel.address)?)),
                ChannelMode::Loopback => LcuLink::new(host.clone(), LcuDevice::new(state, host)),
                ChannelMode::Real => LcuLink::hardware(host),
            };
            let twin_mode = if mode == ChannelMode::Real { TwinMode::Mixed } else { TwinMode::Emulated };
            let modem = ModemPort::new(&pairs, &format!("{}-modem", spec.platform_id), spec.modem_addr)?;
            let log = NodeLog::new(platform_log_name(&spec.platform_id), &spec.platform_id, mirror_dir)?;
            let twin_log = NodeLog::new(twin_log_name(&spec.platform_id), &format!("twin-{}", spec.platform_id), mirror_dir)?;
            twins.push(TwinRecord::new(spec, twin_mode, twin_log));
            platforms.push(PlatformNode::new(index, spec.clone(), lcu, modem, log));
        }
        let vessel = VesselNode::new(
            config.vessel_addr,
            ModemPort::new(&pairs, "vessel-modem", config.vessel_addr)?,
            NodeLog::new(VESSEL_LOG_NAME.into(), "vessel", mirror_dir)?,
            twins,
            config.event_retry_count,
        );

        let mut sim = Self {
            now_ns: 0,
            draining: false,
            queue: EventQueue::new(),
            medium,
            platforms,
            vessel,
            by_addr,
            links: BTreeMap::new(),
            timeline: Vec::new(),
            oversize_messages: 0,
            tickets: TicketBook::new(),
            operator: OperatorQueue::new(),
            clock: SimClock::default(),
            status: StatusBoard::default(),
            config,
        };
        let first: Vec<Action> = sim.platforms.iter().map(PlatformNode::first_sample).collect();
        sim.apply(NodeRef::Vessel, first)?;
        match sim.config.scenario.kind {
            ScenarioKind::B => {
                for (i, c) in sim.config.scenario.commands.iter().enumerate() {
                    sim.queue.push(secs_to_ns(c.at_s), SimEvent::ScheduledCommand(i));
                }
            }
            ScenarioKind::C => {
                if let Some(e) = &sim.config.scenario.event {
                    sim.queue.push(secs_to_ns(e.at_s), SimEvent::ScheduledEvent);
                }
            }
            ScenarioKind::A | ScenarioKind::D => {}
        }
        sim.publish_status();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now_ns(&self) -> i64 {
        self.now_ns
    }

    pub fn duration_ns(&self) -> i64 {
        secs_to_ns(self.config.duration_s)
    }

    pub fn operator(&self) -> OperatorQueue {
        self.operator.clone()
    }

    pub fn tickets(&self) -> TicketBook {
        self.tickets.clone()
    }

    pub fn clock(&self) -> SimClock {
        self.clock.clone()
    }

    pub fn status_board(&self) -> StatusBoard {
        self.status.clone()
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    /// One Administration Shell per platform, sharing this simulation's state.
    pub fn twin_shells(&self) -> Vec<TwinShell> {
        self.vessel
            .twins
            .iter()
            .map(|t| TwinShell {
                twin_id: t.platform_id.clone(),
                display_name: t.display_name.clone(),
                status: self.status.clone(),
                shadow: t.shadow.buffer().clone(),
                tickets: self.tickets.clone(),
                operator: self.operator.clone(),
                clock: self.clock.clone(),
            })
            .collect()
    }

    /// The local bus of a platform (by id) or of the vessel (`"vessel"`).
    pub fn bus(&self, node: &str) -> Option<&Bus> {
        if node == "vessel" {
            return Some(self.vessel.log.bus());
        }
        self.platforms.iter().find(|p| p.spec.platform_id == node).map(|p| p.log.bus())
    }

    pub fn lcu_transcript(&self, platform_id: &str) -> Option<&[Exchange]> {
        self.platforms.iter().find(|p| p.spec.platform_id == platform_id).map(|p| p.lcu.transcript())
    }

    /// Runs every event up to and including `t_end_ns`, draining operator
    /// input before each one.
    pub fn step_until(&mut self, t_end_ns: i64) -> Result<(), SimError> {
        loop {
            self.drain_operator()?;
            match self.queue.peek_time() {
                Some(t) if t <= t_end_ns => {
                    let (t, event) = self.queue.pop().expect("peeked");
                    self.now_ns = t;
                    self.clock.set(t);
                    self.handle(event)?;
                }
                _ => break,
            }
        }
        self.now_ns = self.now_ns.max(t_end_ns);
        self.clock.set(self.now_ns);
        self.publish_status();
        Ok(())
    }

    /// Delivers frames still in flight; nodes send nothing further.
    pub fn finish(&mut self) -> Result<(), SimError> {
        self.draining = true;
        while let Some((t, event)) = self.queue.pop() {
            if let SimEvent::Arrival { dest, frame } = event {
                self.now_ns = t;
                self.clock.set(t);
                self.arrive(dest, frame)?;
            }
        }
        self.publish_status();
        self.flush_logs()
    }

    pub fn run(&mut self) -> Result<(), SimError> {
        self.step_until(self.duration_ns())?;
        self.finish()
    }

    pub fn flush_logs(&mut self) -> Result<(), SimError> {
        for p in &mut self.platforms {
            p.log.flush()?;
        }
        for t in &mut self.vessel.twins {
            t.shadow.flush()?;
        }
        self.vessel.log.flush()
    }

    /// Shadow log bytes keyed by file name.
    pub fn logs(&self) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        for p in &self.platforms {
            out.insert(p.log.file_name.clone(), p.log.buffer().snapshot());
        }
        for t in &self.vessel.twins {
            out.insert(t.shadow.file_name.clone(), t.shadow.buffer().snapshot());
        }
        out.insert(self.vessel.log.file_name.clone(), self.vessel.log.buffer().snapshot());
        out
    }

    pub fn transmissions(&self) -> BTreeMap<u8, Vec<Transmission>> {
        self.medium.senders().map(|s| (s, self.medium.transmissions(s).to_vec())).collect()
    }

    pub fn statuses(&self) -> BTreeMap<String, TwinStatus> {
        self.vessel
            .twins
            .iter()
            .map(|t| {
                let status = TwinStatus {
                    twin_id: t.platform_id.clone(),
                    mode: t.mode,
                    battery_pct: t.battery_pct,
                    sampling_interval_s: t.sampling_interval_s,
                    last_contact_t_ns: t.last_contact_t_ns,
                    now_ns: self.now_ns,
                };
                (t.platform_id.clone(), status)
            })
            .collect()
    }

    fn publish_status(&self) {
        self.status.publish(self.statuses());
    }

    pub fn report(&self) -> SimReport {
        let platforms = self
            .platforms
            .iter()
            .map(|p| PlatformReport {
                platform_id: p.spec.platform_id.clone(),
                modem_addr: p.spec.modem_addr,
                samples: p.counters.samples,
                data_uplinks: p.counters.data_uplinks,
                frames_sent: p.counters.frames_sent,
                frames_received: p.counters.frames_received,
                frames_dropped: p.counters.frames_dropped,
                decode_failures: p.counters.decode_failures,
                duplicate_commands: p.counters.duplicate_commands,
                final_sampling_interval_s: p.interval_s,
                final_battery_pct: p.current_battery(),
            })
            .collect();
        let v = &self.vessel.counters;
        let vessel = VesselReport {
            modem_addr: self.vessel.addr,
            data_received: self.vessel.twins.iter().map(|t| (t.platform_id.clone(), t.data_received)).collect(),
            command_transmissions: v.command_transmissions,
            commands_acked: v.commands_acked,
            commands_rejected: v.commands_rejected,
            commands_exhausted: v.commands_exhausted,
            stale_acks: v.stale_acks,
            events_received: v.events_received,
            frames_sent: v.frames_sent,
            frames_received: v.frames_received,
            frames_dropped: v.frames_dropped,
            decode_failures: v.decode_failures,
        };
        SimReport {
            scenario: self.config.scenario.kind,
            seed: self.config.seed,
            duration_s: self.config.duration_s,
            end_ns: self.now_ns,
            platforms,
            vessel,
            links: self.links.values().cloned().collect(),
            commands: self.tickets.all(),
            timeline: self.timeline.clone(),
            oversize_messages: self.oversize_messages,
        }
    }

    fn drain_operator(&mut self) -> Result<(), SimError> {
        for input in self.operator.drain() {
            let actions = match input {
                OperatorInput::Command { ticket_id, twin_id, command } => {
                    self.vessel.submit(&ticket_id, &twin_id, command, self.now_ns, &self.tickets)
                }
                OperatorInput::Event { code, new_sampling_interval_s } => {
                    self.vessel.broadcast_event(code, new_sampling_interval_s)
                }
            };
            self.apply(NodeRef::Vessel, actions)?;
        }
        Ok(())
    }

    fn handle(&mut self, event: SimEvent) -> Result<(), SimError> {
        let now = self.now_ns;
        let vessel_addr = self.config.vessel_addr;
        let detect = self.config.scenario.kind == ScenarioKind::D;
        match event {
            SimEvent::Sample { platform, generation } => {
                let actions = self.platforms[platform].on_timer(now, generation, vessel_addr, detect)?;
                self.apply(NodeRef::Platform(platform), actions)
            }
            SimEvent::Arrival { dest, frame } => self.arrive(dest, frame),
            SimEvent::AckTimeout { cmd_id, attempt } => {
                let actions = self.vessel.on_ack_timeout(cmd_id, attempt, now, &self.tickets);
                self.apply(NodeRef::Vessel, actions)
            }
            SimEvent::ScheduledCommand(i) => {
                let c = self.config.scenario.commands[i].clone();
                let ticket_id = self.tickets.create(&c.platform_id, c.command, now);
                let actions = self.vessel.submit(&ticket_id, &c.platform_id, c.command, now, &self.tickets);
                self.apply(NodeRef::Vessel, actions)
            }
            SimEvent::ScheduledEvent => {
                let e = self.config.scenario.event.clone().expect("scheduled only when configured");
                let actions = self.vessel.broadcast_event(e.code, e.new_sampling_interval_s);
                self.apply(NodeRef::Vessel, actions)
            }
        }
    }

    fn apply(&mut self, origin: NodeRef, actions: Vec<Action>) -> Result<(), SimError> {
        for action in actions {
            match action {
                Action::Note(event) => self.timeline.push(TimelineEntry { t_ns: self.now_ns, event }),
                _ if self.draining => {}
                Action::Send { dest, msg } => self.transmit(origin, dest, &msg)?,
                Action::Sample { platform, at_ns, generation } => {
                    self.queue.push(at_ns, SimEvent::Sample { platform, generation })
                }
                Action::AckTimeout { at_ns, cmd_id, attempt } => {
                    self.queue.push(at_ns, SimEvent::AckTimeout { cmd_id, attempt })
                }
            }
        }
        Ok(())
    }

    fn transmit(&mut self, origin: NodeRef, dest: u8, msg: &AppMessage) -> Result<(), SimError> {
        let Ok(bytes) = msg.encode() else {
            self.oversize_messages += 1;
            return Ok(());
        };
        let now = self.now_ns;
        let frame = match origin {
            NodeRef::Vessel => {
                let v = &mut self.vessel;
                let frame = v.modem.send(dest, &bytes)?;
                v.log.publish("vessel/tx", now, APP_FRAME_ID, encode_app_frame(frame.src, dest, &bytes))?;
                v.counters.frames_sent += 1;
                frame
            }
            NodeRef::Platform(i) => {
                let p = &mut self.platforms[i];
                let frame = p.modem.send(dest, &bytes)?;
                let leaf = if matches!(msg, AppMessage::Data { .. }) { "uplink" } else { "tx" };
                let topic = format!("{}/{leaf}", p.spec.platform_id);
                p.log.publish(&topic, now, APP_FRAME_ID, encode_app_frame(frame.src, dest, &bytes))?;
                p.counters.frames_sent += 1;
                if leaf == "uplink" {
                    p.counters.data_uplinks += 1;
                }
                frame
            }
        };
        let report = self.medium.schedule_send(&frame, now)?;
        let mut dropped = 0;
        for outcome in report.outcomes {
            let to = outcome.dest();
            let link =
                self.links.entry((frame.src, to)).or_insert_with(|| LinkReport { src: frame.src, dest: to, ..Default::default() });
            link.sent += 1;
            match outcome {
                ReceiverOutcome::Delivered { dest, t_deliver_ns } => {
                    link.in_flight += 1;
                    self.queue.push(t_deliver_ns, SimEvent::Arrival { dest, frame: frame.clone() });
                }
                ReceiverOutcome::Dropped { .. } => {
                    link.dropped += 1;
                    dropped += 1;
                }
            }
        }
        match origin {
            NodeRef::Vessel => self.vessel.counters.frames_dropped += dropped,
            NodeRef::Platform(i) => self.platforms[i].counters.frames_dropped += dropped,
        }
        Ok(())
    }

    fn arrive(&mut self, dest: u8, frame: Frame) -> Result<(), SimError> {
        let link = self.links.get_mut(&(frame.src, dest)).expect("arrival on a used link");
        link.in_flight -= 1;
        link.delivered += 1;
        let now = self.now_ns;
        let vessel_addr = self.config.vessel_addr;
        let detect = self.config.scenario.kind == ScenarioKind::D;
        let node = *self.by_addr.get(&dest).expect("medium only delivers to registered nodes");
        match node {
            NodeRef::Vessel => {
                for (src, payload) in self.vessel.modem.receive(&frame)? {
                    let v = &mut self.vessel;
                    v.log.publish("vessel/rx", now, APP_FRAME_ID, encode_app_frame(src, frame.dest, &payload))?;
                    v.counters.frames_received += 1;
                    match AppMessage::decode(&payload) {
                        Ok(msg) => {
                            let actions = v.on_message(src, msg, now, &self.tickets)?;
                            self.apply(NodeRef::Vessel, actions)?;
                        }
                        Err(_) => v.counters.decode_failures += 1,
                    }
                }
            }
            NodeRef::Platform(i) => {
                for (src, payload) in self.platforms[i].modem.receive(&frame)? {
                    let p = &mut self.platforms[i];
                    let topic = format!("{}/rx", p.spec.platform_id);
                    p.log.publish(&topic, now, APP_FRAME_ID, encode_app_frame(src, frame.dest, &payload))?;
                    p.counters.frames_received += 1;
                    match AppMessage::decode(&payload) {
                        Ok(msg) => {
                            let actions = p.on_message(src, msg, now, vessel_addr, detect)?;
                            self.apply(NodeRef::Platform(i), actions)?;
                        }
                        Err(_) => p.counters.decode_failures += 1,
                    }
                }
            }
        }
        Ok(())
    }
}

fn secs_to_ns(s: f64) -> i64 {
    (s * NS_PER_S as f64).round() as i64
}

/// Result of a headless scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub report: SimReport,
    /// Shadow log bytes keyed by file name.
    pub logs: BTreeMap<String, Vec<u8>>,
    /// Medium transmissions per sender address.
    pub transmissions: BTreeMap<u8, Vec<Transmission>>,
}

/// Runs `config` with channel backings selected by `env`.
pub fn run_scenario_with_env(config: SimConfig, env: &HashMap<String, String>) -> Result<ScenarioOutput, SimError> {
    let mut sim = Simulation::new(config, env, None)?;
    sim.run()?;
    Ok(ScenarioOutput { report: sim.report(), logs: sim.logs(), transmissions: sim.transmissions() })
}

/// Runs `config` to its duration on the virtual clock.
pub fn run_scenario(config: SimConfig) -> Result<ScenarioOutput, SimError> {
    let env: HashMap<String, String> = std::env::vars().collect();
    run_scenario_with_env(config, &env)
}
