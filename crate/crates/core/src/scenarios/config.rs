//! Simulation configuration, loaded from TOML.
//!
//! ```toml
//! seed = 7
//! duration_s = 3600.0
//! vessel_addr = 1
//!
//! [medium]
//! loss_prob = 0.0
//! distances = [{ a = 1, b = 2, m = 1000.0 }]
//!
//! [[platforms]]
//! platform_id = "bigo-1"
//! modem_addr = 2
//! sampling_interval_s = 600
//! optode = { baseline_umol_per_l = 280.0 }
//!
//! [scenario]
//! kind = "b"
//! commands = [{ at_s = 100.0, platform_id = "bigo-1", command = "set_sampling_interval", args = { interval_s = 600 } }]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::appmsg::{Command, EventCode};
use crate::channel::ChannelConfig;
use crate::emulators::{OptodeModel, RecordedSeries};
use crate::medium::{MediumConfig, BROADCAST};

#[derive(Debug, Error)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    A,
    B,
    C,
    D,
}

impl std::str::FromStr for ScenarioKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" => Ok(ScenarioKind::A),
            "b" => Ok(ScenarioKind::B),
            "c" => Ok(ScenarioKind::C),
            "d" => Ok(ScenarioKind::D),
            other => Err(ConfigError::new(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Where a platform's optode readings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptodeSpec {
    Model(OptodeModel),
    /// Replay of a recorded platform shadow log.
    Replay {
        shadow: PathBuf,
        /// Topic holding the samples; defaults to `<platform_id>/o2`.
        #[serde(default)]
        topic: Option<String>,
    },
    #[serde(skip)]
    Recorded(RecordedSeries),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub platform_id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub modem_addr: u8,
    pub sampling_interval_s: u32,
    #[serde(default)]
    pub o2_threshold_umol_per_l: f64,
    #[serde(default = "default_retry_count")]
    pub retry_count: u8,
    #[serde(default = "default_ack_timeout")]
    pub ack_timeout_s: f64,
    #[serde(default = "default_battery")]
    pub battery_pct: f64,
    pub optode: OptodeSpec,
    /// Serial connection to the lander control unit; a virtual pair named
    /// `<platform_id>-lcu` when absent.
    #[serde(default)]
    pub lcu_channel: Option<ChannelConfig>,
}

fn default_retry_count() -> u8 {
    2
}

fn default_ack_timeout() -> f64 {
    30.0
}

fn default_battery() -> f64 {
    100.0
}

impl PlatformSpec {
    pub fn new(platform_id: impl Into<String>, modem_addr: u8, sampling_interval_s: u32, optode: OptodeModel) -> Self {
        Self {
            platform_id: platform_id.into(),
            display_name: None,
            modem_addr,
            sampling_interval_s,
            o2_threshold_umol_per_l: 0.0,
            retry_count: default_retry_count(),
            ack_timeout_s: default_ack_timeout(),
            battery_pct: default_battery(),
            optode: OptodeSpec::Model(optode),
            lcu_channel: None,
        }
    }

    pub fn lcu_channel(&self) -> ChannelConfig {
        self.lcu_channel.clone().unwrap_or_else(|| ChannelConfig::virtual_pair(format!("{}-lcu", self.platform_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub at_s: f64,
    pub platform_id: String,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub at_s: f64,
    pub code: EventCode,
    pub new_sampling_interval_s: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Operator commands; executed in scenario b.
    #[serde(default)]
    pub commands: Vec<ScheduledCommand>,
    /// External event; required by scenario c.
    #[serde(default)]
    pub event: Option<ScheduledEvent>,
}

impl ScenarioSpec {
    pub fn of(kind: ScenarioKind) -> Self {
        Self { kind, commands: Vec::new(), event: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    pub step_ms: u64,
    pub out_dir: PathBuf,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { time_scale: 60.0, step_ms: 50, out_dir: PathBuf::from("dtp-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    pub vessel_addr: u8,
    /// Extra copies of every vessel event broadcast.
    #[serde(default = "default_retry_count")]
    pub event_retry_count: u8,
    #[serde(default)]
    pub medium: MediumConfig,
    pub platforms: Vec<PlatformSpec>,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub serve: ServeConfig,
}

impl SimConfig {
    /// Config with default medium, event repeats and serve settings.
    pub fn new(seed: u64, duration_s: f64, vessel_addr: u8, platforms: Vec<PlatformSpec>, scenario: ScenarioSpec) -> Self {
        Self {
            seed,
            duration_s,
            vessel_addr,
            event_retry_count: default_retry_count(),
            medium: MediumConfig::default(),
            platforms,
            scenario,
            serve: ServeConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut config: SimConfig = toml::from_str(text).map_err(|e| ConfigError::new(e.to_string()))?;
        config.validate()?;
        config.resolve_relative_paths(None);
        Ok(config)
    }

    /// Reads a config file; relative replay paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        let mut config: SimConfig = toml::from_str(&text).map_err(|e| ConfigError::new(e.to_string()))?;
        config.validate()?;
        config.resolve_relative_paths(path.parent());
        Ok(config)
    }

    fn resolve_relative_paths(&mut self, base: Option<&Path>) {
        let Some(base) = base else { return };
        for p in &mut self.platforms {
            if let OptodeSpec::Replay { shadow, .. } = &mut p.optode {
                if shadow.is_relative() {
                    *shadow = base.join(&*shadow);
                }
            }
        }
    }

    pub fn platform(&self, platform_id: &str) -> Option<&PlatformSpec> {
        self.platforms.iter().find(|p| p.platform_id == platform_id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::new(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return err("duration_s must be > 0".into());
        }
        if self.vessel_addr == 0 || self.vessel_addr == BROADCAST {
            return err(format!("vessel_addr {} is reserved", self.vessel_addr));
        }
        self.medium.validate().map_err(|e| ConfigError::new(e.to_string()))?;
        if self.platforms.is_empty() {
            return err("at least one platform is required".into());
        }
        let mut addrs = BTreeSet::from([self.vessel_addr]);
        let mut ids = BTreeSet::new();
        for p in &self.platforms {
            if p.platform_id.is_empty() {
                return err("platform_id must not be empty".into());
            }
            if !ids.insert(p.platform_id.as_str()) {
                return err(format!("duplicate platform_id `{}`", p.platform_id));
            }
            if p.modem_addr == 0 || p.modem_addr == BROADCAST {
                return err(format!("modem_addr {} of `{}` is reserved", p.modem_addr, p.platform_id));
            }
            if !addrs.insert(p.modem_addr) {
                return err(format!("modem_addr {} is used twice (vessel included)", p.modem_addr));
            }
            if p.sampling_interval_s == 0 {
                return err(format!("sampling_interval_s of `{}` must be >= 1", p.platform_id));
            }
            if !(p.ack_timeout_s.is_finite() && p.ack_timeout_s > 0.0) {
                return err(format!("ack_timeout_s of `{}` must be > 0", p.platform_id));
            }
            if !(0.0..=100.0).contains(&p.battery_pct) {
                return err(format!("battery_pct of `{}` must be within [0, 100]", p.platform_id));
            }
            if let OptodeSpec::Model(m) = &p.optode {
                m.validate().map_err(|e| ConfigError::new(format!("{}: {e}", p.platform_id)))?;
            }
        }
        for c in &self.scenario.commands {
            if !(c.at_s.is_finite() && c.at_s >= 0.0) {
                return err("command at_s must be >= 0".into());
            }
            if self.platform(&c.platform_id).is_none() {
                return err(format!("command targets unknown platform `{}`", c.platform_id));
            }
        }
        if self.scenario.commands.len() > 256 {
            return err("at most 256 scheduled commands fit the command id space".into());
        }
        match &self.scenario.event {
            Some(e) if !(e.at_s.is_finite() && e.at_s >= 0.0) => return err("event at_s must be >= 0".into()),
            None if self.scenario.kind == ScenarioKind::C => return err("scenario c requires [scenario.event]".into()),
            _ => {}
        }
        if !(self.serve.time_scale.is_finite() && self.serve.time_scale > 0.0) || self.serve.step_ms == 0 {
            return err("serve.time_scale and serve.step_ms must be > 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
duration_s = 3600.0
vessel_addr = 1

[medium]
loss_prob = 0.25
distances = [{ a = 1, b = 2, m = 1000.0 }]

[[platforms]]
platform_id = "bigo-1"
modem_addr = 2
sampling_interval_s = 600
o2_threshold_umol_per_l = 250.0
optode = { baseline_umol_per_l = 280.0, amplitude_umol_per_l = 10.0 }
lcu_channel = { mode = "loopback" }

[[platforms]]
platform_id = "bigo-2"
modem_addr = 3
sampling_interval_s = 600
optode = { shadow = "rec/bigo-2.shadow" }

[scenario]
kind = "b"
commands = [
  { at_s = 100.0, platform_id = "bigo-1", command = "set_sampling_interval", args = { interval_s = 300 } },
  { at_s = 200.0, platform_id = "bigo-2", command = "report_status" },
]
"#;

    #[test]
    fn parses_full_config() {
        let c = SimConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.medium.rate_bytes_per_s, 64);
        assert_eq!(c.medium.loss_prob, 0.25);
        assert_eq!(c.platforms[0].retry_count, 2);
        assert!(matches!(c.platforms[0].optode, OptodeSpec::Model(ref m) if m.period_s == 86_400.0));
        assert!(matches!(c.platforms[1].optode, OptodeSpec::Replay { ref topic, .. } if topic.is_none()));
        assert_eq!(c.platforms[1].lcu_channel(), ChannelConfig::virtual_pair("bigo-2-lcu"));
        assert_eq!(c.scenario.commands[0].command, Command::SetSamplingInterval { interval_s: 300 });
        assert_eq!(c.scenario.commands[1].command, Command::ReportStatus);
        assert_eq!(c.serve, ServeConfig::default());
    }

    #[test]
    fn load_resolves_replay_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let c = SimConfig::load(&path).unwrap();
        let OptodeSpec::Replay { shadow, .. } = &c.platforms[1].optode else { panic!() };
        assert_eq!(shadow, &dir.path().join("rec/bigo-2.shadow"));
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            SAMPLE.replace("duration_s = 3600.0", "duration_s = 0.0"),
            SAMPLE.replace("modem_addr = 3", "modem_addr = 2"),
            SAMPLE.replace("modem_addr = 3", "modem_addr = 1"),
            SAMPLE.replace("\"bigo-2\"\nmodem", "\"bigo-1\"\nmodem"),
            SAMPLE.replace("kind = \"b\"", "kind = \"c\""),
            SAMPLE.replace("kind = \"b\"", "kind = \"e\""),
            SAMPLE.replace("platform_id = \"bigo-2\", command", "platform_id = \"nope\", command"),
            SAMPLE.replace("loss_prob = 0.25", "loss_prob = 2.0"),
        ];
        for text in bad {
            assert!(SimConfig::from_toml(&text).is_err(), "accepted:\n{text}");
        }
    }

    #[test]
    fn scenario_kind_from_str() {
        assert_eq!("d".parse::<ScenarioKind>().unwrap(), ScenarioKind::D);
        assert!("x".parse::<ScenarioKind>().is_err());
    }
}
