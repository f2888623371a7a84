#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

pub fn dtp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dtp"))
}

/// A free central port and a base with `n` consecutive free ports after it.
pub fn free_ports(n: u16) -> (u16, u16) {
    loop {
        let central = TcpListener::bind("127.0.0.1:0").unwrap();
        let probe = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = probe.local_addr().unwrap().port();
        drop(probe);
        if base.checked_add(n).is_none() {
            continue;
        }
        let held: Result<Vec<_>, _> = (0..n).map(|i| TcpListener::bind(("127.0.0.1", base + i))).collect();
        if held.is_ok() {
            return (central.local_addr().unwrap().port(), base);
        }
    }
}

fn dechunk(body: &str) -> String {
    let mut out = String::new();
    let mut rest = body;
    while let Some((size, tail)) = rest.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&tail[..n]);
        rest = &tail[n + 2..];
    }
    out
}

/// One HTTP/1.1 exchange over a fresh connection.
pub fn http(port: u16, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
    let mut stream = TcpStream::connect(("127.0.0.1", port))?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let body = body.unwrap_or("");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: 127.0.0.1\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw)?;
    let (head, payload) = raw.split_once("\r\n\r\n").unwrap_or((&raw, ""));
    let status = head.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let chunked = head.lines().any(|l| l.to_ascii_lowercase().starts_with("transfer-encoding: chunked"));
    Ok((status, if chunked { dechunk(payload) } else { payload.to_string() }))
}

pub fn get_json(port: u16, path: &str) -> (u16, serde_json::Value) {
    let (status, body) = http(port, "GET", path, None).unwrap();
    (status, serde_json::from_str(&body).unwrap_or(serde_json::Value::Null))
}

pub fn post_json(port: u16, path: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let (status, text) = http(port, "POST", path, Some(&body.to_string())).unwrap();
    (status, serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
}

/// Polls `f` every 50 ms until it yields a value or `timeout` passes.
pub fn wait_for<T>(timeout: Duration, mut f: impl FnMut() -> Option<T>) -> Option<T> {
    let start = Instant::now();
    while start.elapsed() < timeout {
        if let Some(v) = f() {
            return Some(v);
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    None
}

/// A running `dtp serve` child; killed on drop unless interrupted first.
pub struct Serve {
    pub child: Child,
    pub central: u16,
    pub twin_base: u16,
}

impl Serve {
    pub fn start(config: &Path, n_twins: u16) -> Serve {
        let (central, twin_base) = free_ports(n_twins);
        let child = dtp()
            .args(["serve", "--config"])
            .arg(config)
            .args(["--central-port", &central.to_string(), "--twin-port-base", &twin_base.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        Serve { child, central, twin_base }
    }

    /// Sends SIGINT and waits for exit.
    pub fn interrupt(&mut self) -> ExitStatus {
        Command::new("kill").args(["-INT", &self.child.id().to_string()]).status().unwrap();
        self.child.wait().unwrap()
    }
}

impl Drop for Serve {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

pub fn two_platform_config(out_dir: &Path, time_scale: f64, scenario: &str) -> String {
    format!(
        r#"seed = 3
duration_s = 3600.0
vessel_addr = 1

[medium]
distances = [{{ a = 1, b = 2, m = 1200.0 }}, {{ a = 1, b = 3, m = 900.0 }}]

[[platforms]]
platform_id = "bigo-1"
display_name = "BIGO 1"
modem_addr = 2
sampling_interval_s = 600
optode = {{ baseline_umol_per_l = 280.0, amplitude_umol_per_l = 10.0, period_s = 7200.0, noise_std_umol_per_l = 1.0, seed = 1 }}

[[platforms]]
platform_id = "bigo-2"
modem_addr = 3
sampling_interval_s = 600
optode = {{ baseline_umol_per_l = 270.0, noise_std_umol_per_l = 0.5, seed = 2 }}

[scenario]
kind = "{scenario}"
commands = [{{ at_s = 100.0, platform_id = "bigo-2", command = "set_sampling_interval", args = {{ interval_s = 300 }} }}]
event = {{ at_s = 200.0, code = "storm_predicted", new_sampling_interval_s = 300 }}

[serve]
time_scale = {time_scale:?}
step_ms = 20
out_dir = "{}"
"#,
        out_dir.display()
    )
}
