//! Application messages carried inside one acoustic frame.
//!
//! Encoding is a type byte followed by the variant's fields, little-endian,
//! in declaration order:
//!
//! | type | variant   | fields                                                   |
//! |------|-----------|----------------------------------------------------------|
//! | 0x01 | Data      | schema_id u8, body (rest of frame)                       |
//! | 0x02 | Command   | cmd_id u8, code u8 (+ interval_s u16 for code 0x01)      |
//! | 0x03 | AckStatus | cmd_id u8, status u8, battery_pct_x10 u16, interval_s u16 |
//! | 0x04 | Event     | event_code u8, new_sampling_interval_s u16               |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::MAX_PAYLOAD;

const TYPE_DATA: u8 = 0x01;
const TYPE_COMMAND: u8 = 0x02;
const TYPE_ACK: u8 = 0x03;
const TYPE_EVENT: u8 = 0x04;

const CMD_SET_INTERVAL: u8 = 0x01;
const CMD_TRIGGER: u8 = 0x02;
const CMD_REPORT_STATUS: u8 = 0x03;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppError {
    #[error("encoded message is {0} bytes, frames carry at most {MAX_PAYLOAD}")]
    TooLong(usize),
    #[error("empty message")]
    Empty,
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("unknown command code 0x{0:02x}")]
    UnknownCommand(u8),
    #[error("unknown event code {0}")]
    UnknownEvent(u8),
    #[error("unknown ack status {0}")]
    UnknownStatus(u8),
    #[error("message truncated")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// Operator commands. Serialized as `{"command": ..., "args": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "snake_case")]
pub enum Command {
    SetSamplingInterval { interval_s: u16 },
    TriggerMeasurement,
    ReportStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCode {
    StormPredicted = 1,
    LowOxygenDetected = 2,
}

impl EventCode {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(EventCode::StormPredicted),
            2 => Some(EventCode::LowOxygenDetected),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckCode {
    Ok = 0,
    Rejected = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppMessage {
    Data { schema_id: u8, body: Vec<u8> },
    Command { cmd_id: u8, command: Command },
    AckStatus { cmd_id: u8, status: AckCode, battery_pct_x10: u16, sampling_interval_s: u16 },
    Event { code: EventCode, new_sampling_interval_s: u16 },
}

impl AppMessage {
    pub fn encode(&self) -> Result<Vec<u8>, AppError> {
        let mut out = Vec::with_capacity(8);
        match self {
            AppMessage::Data { schema_id, body } => {
                out.extend_from_slice(&[TYPE_DATA, *schema_id]);
                out.extend_from_slice(body);
            }
            AppMessage::Command { cmd_id, command } => {
                out.extend_from_slice(&[TYPE_COMMAND, *cmd_id]);
                match command {
                    Command::SetSamplingInterval { interval_s } => {
                        out.push(CMD_SET_INTERVAL);
                        out.extend_from_slice(&interval_s.to_le_bytes());
                    }
                    Command::TriggerMeasurement => out.push(CMD_TRIGGER),
                    Command::ReportStatus => out.push(CMD_REPORT_STATUS),
                }
            }
            AppMessage::AckStatus { cmd_id, status, battery_pct_x10, sampling_interval_s } => {
                out.extend_from_slice(&[TYPE_ACK, *cmd_id, *status as u8]);
                out.extend_from_slice(&battery_pct_x10.to_le_bytes());
                out.extend_from_slice(&sampling_interval_s.to_le_bytes());
            }
            AppMessage::Event { code, new_sampling_interval_s } => {
                out.extend_from_slice(&[TYPE_EVENT, code.code()]);
                out.extend_from_slice(&new_sampling_interval_s.to_le_bytes());
            }
        }
        if out.len() > MAX_PAYLOAD {
            return Err(AppError::TooLong(out.len()));
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AppError> {
        let (&kind, rest) = bytes.split_first().ok_or(AppError::Empty)?;
        let u16_at = |i: usize| -> Result<u16, AppError> {
            rest.get(i..i + 2).map(|b| u16::from_le_bytes([b[0], b[1]])).ok_or(AppError::Truncated)
        };
        let exact = |n: usize| -> Result<(), AppError> {
            match rest.len().cmp(&n) {
                std::cmp::Ordering::Less => Err(AppError::Truncated),
                std::cmp::Ordering::Greater => Err(AppError::Trailing(rest.len() - n)),
                std::cmp::Ordering::Equal => Ok(()),
            }
        };
        match kind {
            TYPE_DATA => {
                let (&schema_id, body) = rest.split_first().ok_or(AppError::Truncated)?;
                Ok(AppMessage::Data { schema_id, body: body.to_vec() })
            }
            TYPE_COMMAND => {
                let cmd_id = *rest.first().ok_or(AppError::Truncated)?;
                let code = *rest.get(1).ok_or(AppError::Truncated)?;
                let command = match code {
                    CMD_SET_INTERVAL => {
                        exact(4)?;
                        Command::SetSamplingInterval { interval_s: u16_at(2)? }
                    }
                    CMD_TRIGGER => {
                        exact(2)?;
                        Command::TriggerMeasurement
                    }
                    CMD_REPORT_STATUS => {
                        exact(2)?;
                        Command::ReportStatus
                    }
                    other => return Err(AppError::UnknownCommand(other)),
                };
                Ok(AppMessage::Command { cmd_id, command })
            }
            TYPE_ACK => {
                exact(6)?;
                let status = match rest[1] {
                    0 => AckCode::Ok,
                    1 => AckCode::Rejected,
                    other => return Err(AppError::UnknownStatus(other)),
                };
                Ok(AppMessage::AckStatus {
                    cmd_id: rest[0],
                    status,
                    battery_pct_x10: u16_at(2)?,
                    sampling_interval_s: u16_at(4)?,
                })
            }
            TYPE_EVENT => {
                exact(3)?;
                let code = EventCode::from_code(rest[0]).ok_or(AppError::UnknownEvent(rest[0]))?;
                Ok(AppMessage::Event { code, new_sampling_interval_s: u16_at(1)? })
            }
            other => Err(AppError::UnknownType(other)),
        }
    }
}
