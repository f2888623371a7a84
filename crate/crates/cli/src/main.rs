use std::collections::HashMap;
use std::fmt::Write as _;
use std::future::IntoFuture;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use dtp_core::adminshell::{CentralRegistry, TwinShell};
use dtp_core::bus::{Bus, Publisher};
use dtp_core::medium::NS_PER_S;
use dtp_core::msgschema::{decode_binary, decode_json, encode_binary, encode_json, parse_schema, MessageSchema};
use dtp_core::scenarios::config::{ScenarioKind, SimConfig};
use dtp_core::shadow::{read_log, replay, ReplaySpeed, VirtualPacer, WallPacer};
use dtp_core::Simulation;
use dtp_shell::{central_router, twin_router, CentralShell, RegisterRequest};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

#[derive(Parser)]
#[command(name = "dtp", version, about = "Digital twin prototypes for underwater sensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless and write the report and shadow logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario kind in the config.
        #[arg(long)]
        scenario: Option<ScenarioKind>,
        /// Overrides the simulation and loss seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "dtp-out")]
        out: PathBuf,
    },
    /// Republish a shadow log onto a local bus.
    Replay {
        #[arg(long)]
        shadow: PathBuf,
        /// Speed factor (> 0) or `max`.
        #[arg(long, default_value = "max")]
        speed: String,
    },
    /// Schema tooling.
    Schema {
        #[command(subcommand)]
        action: SchemaCmd,
    },
    /// Serve the central and per-twin Administration Shells over a live simulation.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        central_port: u16,
        #[arg(long)]
        twin_port_base: u16,
    },
}

#[derive(Subcommand)]
enum SchemaCmd {
    /// Parse a schema file and print its field table.
    Check {
        #[arg(long)]
        schema: PathBuf,
    },
    /// Encode a JSON value (argument or stdin) and print the binary as hex.
    Encode {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        value: Option<String>,
    },
    /// Decode hex binary and print the canonical JSON value.
    Decode {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        hex: String,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config, scenario, seed, out } => cmd_run(&config, scenario, seed, &out),
        Cmd::Replay { shadow, speed } => cmd_replay(&shadow, &speed),
        Cmd::Schema { action } => cmd_schema(action),
        Cmd::Serve { config, central_port, twin_port_base } => cmd_serve(&config, central_port, twin_port_base),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("dtp: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path, scenario: Option<ScenarioKind>, seed: Option<u64>) -> Result<SimConfig, Failure> {
    let mut config = SimConfig::load(path)?;
    if let Some(kind) = scenario {
        config.scenario.kind = kind;
    }
    if let Some(seed) = seed {
        config.seed = seed;
        config.medium.seed = None;
    }
    config.validate()?;
    Ok(config)
}

fn env_map() -> HashMap<String, String> {
    std::env::vars().collect()
}

fn cmd_run(config: &Path, scenario: Option<ScenarioKind>, seed: Option<u64>, out: &Path) -> CliResult {
    let config = load_config(config, scenario, seed)?;
    let output = dtp_core::run_scenario_with_env(config, &env_map())?;
    std::fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let json = output.report.to_json();
    std::fs::write(out.join("report.json"), format!("{json}\n"))?;
    for (name, bytes) in &output.logs {
        std::fs::write(out.join(name), bytes)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_replay(shadow: &Path, speed: &str) -> CliResult {
    let speed = ReplaySpeed::parse(speed).ok_or_else(|| format!("invalid --speed `{speed}`; expected a number > 0 or `max`"))?;
    let records = read_log(shadow).map_err(|e| format!("{}: {e}", shadow.display()))?;
    let bus = Bus::new();
    let t0 = records.first().map_or(0, |r| r.t_ns);
    let mut virtual_pacer = VirtualPacer::default();
    let mut wall_pacer = WallPacer::starting_at(t0);
    let pacer: &mut dyn dtp_core::shadow::Pacer = match speed {
        ReplaySpeed::AsFastAsPossible => &mut virtual_pacer,
        ReplaySpeed::Factor(_) => &mut wall_pacer,
    };
    let count = replay(&records, speed, t0, pacer, |_, r| {
        Publisher::new(&bus, r.publisher_id.clone()).publish(&r.topic, r.t_ns, r.schema_id, r.payload.clone()).map(|_| ())
    })?;
    println!("{count}");
    Ok(())
}

fn load_schema(path: &Path) -> Result<MessageSchema, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("schema");
    Ok(parse_schema(name, &text, 0).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn parse_hex(text: &str) -> Result<Vec<u8>, Failure> {
    let digits: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return Err(Failure("hex input has an odd number of digits".into()));
    }
    (0..digits.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| Failure(format!("invalid hex `{}`", &digits[i..i + 2]))))
        .collect()
}

fn cmd_schema(action: SchemaCmd) -> CliResult {
    match action {
        SchemaCmd::Check { schema } => {
            let schema = load_schema(&schema)?;
            println!("{}", schema.name);
            for f in &schema.fields {
                println!("  {}\t{}", f.name, f.ty);
            }
        }
        SchemaCmd::Encode { schema, value } => {
            let schema = load_schema(&schema)?;
            let text = match value {
                Some(v) => v,
                None => std::io::read_to_string(std::io::stdin())?,
            };
            let value = decode_json(&schema, text.trim())?;
            let bytes = encode_binary(&schema, &value)?;
            let hex = bytes.iter().fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            });
            println!("{hex}");
        }
        SchemaCmd::Decode { schema, hex } => {
            let schema = load_schema(&schema)?;
            let value = decode_binary(&schema, &parse_hex(&hex)?)?;
            println!("{}", encode_json(&schema, &value)?);
        }
    }
    Ok(())
}

async fn bind(port: u16) -> Result<TcpListener, Failure> {
    TcpListener::bind(("127.0.0.1", port)).await.map_err(|e| Failure(format!("cannot bind 127.0.0.1:{port}: {e}")))
}

/// Minimal HTTP/1.1 POST used for twin self-registration.
async fn post_json(port: u16, path: &str, body: &str) -> Result<u16, Failure> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).await?;
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: 127.0.0.1:{port}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes()).await?;
    let mut response = String::new();
    stream.read_to_string(&mut response).await?;
    let code = response.split_whitespace().nth(1).and_then(|c| c.parse().ok());
    code.ok_or_else(|| Failure("malformed registration response".into()))
}

fn spawn_clock(mut sim: Simulation, stop: Arc<AtomicBool>) -> std::thread::JoinHandle<Result<Simulation, String>> {
    std::thread::spawn(move || {
        let scale = sim.config().serve.time_scale;
        let step = Duration::from_millis(sim.config().serve.step_ms);
        let start = Instant::now();
        while !stop.load(Ordering::Acquire) {
            let target = (start.elapsed().as_secs_f64() * scale * NS_PER_S as f64) as i64;
            sim.step_until(target).map_err(|e| e.to_string())?;
            sim.flush_logs().map_err(|e| e.to_string())?;
            std::thread::sleep(step);
        }
        sim.flush_logs().map_err(|e| e.to_string())?;
        Ok(sim)
    })
}

fn cmd_serve(config: &Path, central_port: u16, twin_port_base: u16) -> CliResult {
    let config = load_config(config, None, None)?;
    let out_dir = config.serve.out_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let sim = Simulation::new(config, &env_map(), Some(&out_dir))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(serve(sim, central_port, twin_port_base, out_dir))
}

async fn serve(sim: Simulation, central_port: u16, twin_port_base: u16, out_dir: PathBuf) -> CliResult {
    let shells: Vec<TwinShell> = sim.twin_shells();
    let central = CentralShell { registry: CentralRegistry::new(), clock: sim.clock(), operator: sim.operator() };

    let central_listener = bind(central_port).await?;
    let mut twin_listeners = Vec::with_capacity(shells.len());
    for i in 0..shells.len() {
        let port = u16::try_from(twin_port_base as usize + i).map_err(|_| Failure("twin port range exceeds 65535".into()))?;
        twin_listeners.push((port, bind(port).await?));
    }

    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let shutdown = |mut rx: watch::Receiver<bool>| async move {
        let _ = rx.wait_for(|s| *s).await;
    };
    let mut servers = Vec::new();
    servers.push(tokio::spawn(
        axum::serve(central_listener, central_router(central)).with_graceful_shutdown(shutdown(shutdown_rx.clone())).into_future(),
    ));
    for (shell, (port, listener)) in shells.iter().zip(twin_listeners) {
        servers.push(tokio::spawn(
            axum::serve(listener, twin_router(shell.clone())).with_graceful_shutdown(shutdown(shutdown_rx.clone())).into_future(),
        ));
        eprintln!("dtp: twin {} on http://127.0.0.1:{port}", shell.twin_id);
    }
    eprintln!("dtp: central shell on http://127.0.0.1:{central_port}");

    for (i, shell) in shells.iter().enumerate() {
        let req = RegisterRequest {
            twin_id: shell.twin_id.clone(),
            display_name: shell.display_name.clone(),
            base_url: format!("http://127.0.0.1:{}", twin_port_base as usize + i),
        };
        let code = post_json(central_port, "/api/v1/register", &serde_json::to_string(&req)?).await?;
        if code != 201 {
            return Err(Failure(format!("registration of {} answered {code}", shell.twin_id)));
        }
    }

    let stop = Arc::new(AtomicBool::new(false));
    let clock = spawn_clock(sim, stop.clone());
    tokio::signal::ctrl_c().await?;
    eprintln!("dtp: interrupt received, shutting down");
    stop.store(true, Ordering::Release);
    let _ = shutdown_tx.send(true);
    for s in servers {
        s.await??;
    }
    let sim = tokio::task::spawn_blocking(move || clock.join())
        .await?
        .map_err(|_| Failure("simulation thread panicked".into()))??;
    eprintln!("dtp: stopped at t={} ns; shadow logs in {}", sim.now_ns(), out_dir.display());
    Ok(())
}
