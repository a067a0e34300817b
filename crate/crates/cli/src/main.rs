//! `nfb`: run simulated sessions, serve the session back end, stream a
//! simulated headband, and report on session logs.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 invalid config or busy port,
//! 3 session hit the duration cap, 4 empty or corrupt log.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nfb_core::analytics::{self, StageSource, TrainingTrace, DEFAULT_GROUPING};
use nfb_core::config::RunConfig;
use nfb_core::protocol::DeviceKind;
use nfb_core::runner::{run_simulated, RunError};
use nfb_core::session::{log_file_name, read_log, write_log, LogError, SessionPhase};
use nfb_server::client::{run_headband, HeadbandOptions};
use nfb_server::{BackendConfig, ServerError};

use output::Format;

const LOG_DIR_ENV: &str = "NFB_LOG_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "nfb",
    version,
    about = "Mu-suppression neurofeedback sessions, headless"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulated session end to end and write its log.
    Run(RunArgs),
    /// Start the session back end until interrupted.
    Serve(ServeArgs),
    /// Stream a simulated headband to a running back end.
    Simulate(SimulateArgs),
    /// Replay session logs and print metrics.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Device {
    Simulator,
    Passthrough,
}

impl From<Device> for DeviceKind {
    fn from(d: Device) -> Self {
        match d {
            Device::Simulator => DeviceKind::Simulator,
            Device::Passthrough => DeviceKind::Passthrough,
        }
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Attention preset: low, medium or high.
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Stop the session after this many simulated seconds.
    #[arg(long, value_name = "SECONDS")]
    duration_cap: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Log directory (default: config output_dir, then $NFB_LOG_DIR, then .).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "ADDR")]
    listen: Option<String>,
    /// WebSocket address for consoles.
    #[arg(long, value_name = "ADDR")]
    ws_listen: Option<String>,
    #[arg(long, value_enum)]
    device: Option<Device>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also stream a simulated headband from this process.
    #[arg(long)]
    simulate: bool,
    /// Simulated seconds per wall second for --simulate; 0 streams flat out.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Exit once the session reaches conclusion instead of waiting for SIGINT.
    #[arg(long)]
    until_conclusion: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Back-end TCP address.
    #[arg(long, value_name = "ADDR", default_value = "127.0.0.1:7878")]
    listen: String,
    #[arg(long, value_enum)]
    device: Option<Device>,
    /// Simulated seconds per wall second; 0 streams flat out.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Length of the generated stream in simulated seconds.
    #[arg(long, default_value_t = 900.0)]
    duration: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Session logs, in session order.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Classify stages on the 10 s moving average instead of raw samples.
    #[arg(long)]
    smoothed: bool,
    /// Sessions per week, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GROUPING)]
    grouping: Vec<usize>,
}

#[derive(Debug)]
enum Failure {
    Runtime(String),
    Config(String),
    Timeout,
    Log(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Timeout => 3,
            Failure::Log(_) => 4,
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.profile {
        cfg.profile.preset = Some(p.clone());
        cfg.profile.model = None;
    }
    Ok(cfg)
}

fn validated(cfg: RunConfig) -> Result<RunConfig, Failure> {
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn log_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(LOG_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn utc_stamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if args.duration_cap.is_some() {
        cfg.duration_cap_s = args.duration_cap;
    }
    let cfg = validated(cfg)?;
    let sim = cfg.simulation().map_err(|e| Failure::Config(e.to_string()))?;
    let outcome = run_simulated(&sim).map_err(|e| match e {
        RunError::Config(m) => Failure::Config(m),
        other => Failure::Runtime(other.to_string()),
    })?;

    let dir = log_dir(args.out.as_deref(), &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(log_file_name(&utc_stamp(), outcome.session.id()));
    write_log(&path, outcome.session.log()).map_err(|e| Failure::Runtime(e.to_string()))?;

    match analytics::live_metrics(&outcome.session) {
        Some(m) => {
            let plot = match args.format {
                Format::Json => {
                    let trace = TrainingTrace::from_log(outcome.session.log())
                        .map_err(|e| Failure::Runtime(e.to_string()))?;
                    vec![analytics::plot_data(&trace, StageSource::Raw)]
                }
                _ => Vec::new(),
            };
            print!("{}", output::render(args.format, &[m], plot, &DEFAULT_GROUPING));
        }
        None => println!("no training samples recorded"),
    }
    eprintln!("log: {}", path.display());
    if outcome.timed_out {
        eprintln!("duration cap reached before the egg goal; partial report above");
        return Err(Failure::Timeout);
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let source = if args.smoothed {
        StageSource::Smoothed
    } else {
        StageSource::Raw
    };
    let mut metrics = Vec::with_capacity(args.logs.len());
    let mut plots = Vec::new();
    for path in &args.logs {
        let log = read_log(path).map_err(|e| match e {
            LogError::Io(io) => Failure::Runtime(format!("{}: {io}", path.display())),
            LogError::Empty => Failure::Log(format!("{}: log is empty", path.display())),
            corrupt @ LogError::Corrupt { .. } => Failure::Log(format!(
                "{}: corrupt log, offending lines: {}",
                path.display(),
                corrupt
                    .bad_lines()
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            )),
        })?;
        let trace =
            TrainingTrace::from_log(&log).map_err(|e| Failure::Log(format!("{}: {e}", path.display())))?;
        metrics.push(analytics::metrics_from_trace(&trace, source));
        if args.format == Format::Json {
            plots.push(analytics::plot_data(&trace, source));
        }
    }
    print!("{}", output::render(args.format, &metrics, plots, &args.grouping));
    Ok(())
}

fn headband_speed(speed: f64) -> Result<Option<f64>, Failure> {
    if !speed.is_finite() || speed < 0.0 {
        return Err(Failure::Config("--speed must be >= 0".into()));
    }
    Ok((speed > 0.0).then_some(speed))
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(l) = args.listen {
        cfg.server.listen = l;
    }
    if let Some(l) = args.ws_listen {
        cfg.server.ws_listen = l;
    }
    if let Some(d) = args.device {
        cfg.server.device = d.into();
    }
    let cfg = validated(cfg)?;
    let speed = headband_speed(args.speed)?;
    let backend = BackendConfig::from_run_config(&cfg, log_dir(args.out.as_deref(), &cfg));
    let rt = runtime()?;
    rt.block_on(async move {
        let server = nfb_server::start(backend).await.map_err(|e| match e {
            ServerError::Bind { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        })?;
        println!("tcp {}", server.tcp_addr());
        if let Some(ws) = server.ws_addr() {
            println!("ws {ws}");
        }
        println!("log {}", server.log_path().display());
        use std::io::Write as _;
        let _ = std::io::stdout().flush();

        if args.simulate {
            let profile = cfg.attention_profile().map_err(|e| Failure::Config(e.to_string()))?;
            let opts = HeadbandOptions {
                speed,
                simulator: cfg.simulator,
                dsp: cfg.dsp,
                rest_s: cfg.rest_s,
                ..HeadbandOptions::new(cfg.server.device, profile, cfg.duration_cap_s.unwrap_or(3600.0))
            };
            let addr = server.tcp_addr();
            tokio::spawn(async move {
                if let Err(e) = run_headband(addr, opts).await {
                    eprintln!("simulated headband: {e}");
                }
            });
        }

        if args.until_conclusion {
            tokio::select! {
                r = tokio::signal::ctrl_c() => r.map_err(|e| Failure::Runtime(e.to_string()))?,
                r = server.wait_for_phase(SessionPhase::Conclusion) => r.map_err(|e| Failure::Runtime(e.to_string()))?,
            }
        } else {
            tokio::signal::ctrl_c().await.map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        let status = server.shutdown().await.map_err(|e| Failure::Runtime(e.to_string()))?;
        eprintln!(
            "session {} ended in {:?}; {} messages logged",
            status.session_id, status.phase, status.logged_messages
        );
        Ok(())
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(d) = args.device {
        cfg.server.device = d.into();
    }
    let cfg = validated(cfg)?;
    if args.duration <= 0.0 || !args.duration.is_finite() {
        return Err(Failure::Config("--duration must be positive".into()));
    }
    let profile = cfg
        .attention_profile()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let opts = HeadbandOptions {
        speed: headband_speed(args.speed)?,
        simulator: cfg.simulator,
        dsp: cfg.dsp,
        rest_s: cfg.rest_s,
        ..HeadbandOptions::new(cfg.server.device, profile, args.duration)
    };
    let rt = runtime()?;
    let summary = rt
        .block_on(run_headband(args.listen.as_str(), opts))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "frames {} samples {} last_t {:.3} concluded {}",
        summary.frames_sent, summary.samples_sent, summary.last_t, summary.concluded
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Runtime(m) | Failure::Config(m) | Failure::Log(m) => eprintln!("error: {m}"),
                Failure::Timeout => {}
            }
            ExitCode::from(f.code())
        }
    }
}
