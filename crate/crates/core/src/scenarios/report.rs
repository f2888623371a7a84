use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::appmsg::EventCode;
use super::config::ScenarioKind;
use crate::adminshell::CommandTicket;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformReport {
    pub platform_id: String,
    pub modem_addr: u8,
    pub samples: u64,
    pub data_uplinks: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    /// Copies of this platform's transmissions lost in the medium.
    pub frames_dropped: u64,
    pub decode_failures: u64,
    pub duplicate_commands: u64,
    pub final_sampling_interval_s: u32,
    pub final_battery_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselReport {
    pub modem_addr: u8,
    pub data_received: BTreeMap<String, u64>,
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

/// Per `(sender, receiver)` frame accounting; broadcast copies count per receiver.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkReport {
    pub src: u8,
    pub dest: u8,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl LinkReport {
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimelineEvent {
    CommandSent { cmd_id: u8, platform_id: String, attempt: u16 },
    CommandAcked { cmd_id: u8, platform_id: String },
    CommandRejected { cmd_id: u8, platform_id: String },
    CommandExhausted { cmd_id: u8, platform_id: String, transmissions: u16 },
    CommandFailed { ticket_id: String, reason: String },
    EventBroadcast { node: String, code: EventCode, new_sampling_interval_s: u16, copies: u16 },
    EventReceived { node: String, code: EventCode, from: u8 },
    IntervalChanged { platform_id: String, from: u32, to: u32, cause: String },
    LowOxygenDetected { platform_id: String, o2_umol_per_l: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub t_ns: i64,
    #[serde(flatten)]
    pub event: TimelineEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub duration_s: f64,
    /// Virtual time after in-flight frames were drained.
    pub end_ns: i64,
    pub platforms: Vec<PlatformReport>,
    pub vessel: VesselReport,
    pub links: Vec<LinkReport>,
    pub commands: Vec<CommandTicket>,
    pub timeline: Vec<TimelineEntry>,
    /// Messages refused at emission for exceeding one frame.
    pub oversize_messages: u64,
}

impl SimReport {
    pub fn platform(&self, platform_id: &str) -> Option<&PlatformReport> {
        self.platforms.iter().find(|p| p.platform_id == platform_id)
    }

    pub fn broadcast_bursts(&self) -> impl Iterator<Item = &TimelineEntry> {
        self.timeline.iter().filter(|e| matches!(e.event, TimelineEvent::EventBroadcast { .. }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
