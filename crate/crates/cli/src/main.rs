use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Parser, Subcommand};

use roadmark_cli::commands::{self, bundled_names};
use roadmark_cli::operator::run_scripted;
use roadmark_cli::serve::ChannelChoice;
use roadmark_cli::{resolve_out_dir, CliError, ExitStatus, ServeConfig, Server};

#[derive(Debug, Parser)]
#[command(name = "roadmark", version, about = "Driverless road-marking machine simulator and teleoperation stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario headless and write mission.jsonl, report.json and width.csv.
    Run {
        /// Scenario file or bundled scenario name.
        scenario: String,
        /// Override a scenario key, e.g. `mission.speed=2.0`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Swap in the tuned gains of another path-following controller.
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every scenario with every controller and write bench.csv.
    Bench {
        /// Comma-separated scenario files or bundled names.
        scenarios: String,
        /// Comma-separated controller names, or `all`.
        #[arg(default_value = "all")]
        controllers: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the vehicle: binary operator link on PORT, JSON/WebSocket bridge
    /// on PORT+1, console assets on PORT+2.
    Serve {
        scenario: String,
        #[arg(long, default_value_t = 7400)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// `scenario`, a preset (`ideal`, `cellular`) or `delay,jitter,loss[,seed]`.
        #[arg(long, default_value = "scenario")]
        channel: ChannelChoice,
        /// Advance only when the operator's command for the period has arrived.
        #[arg(long)]
        lockstep: bool,
        /// Directory with the browser console's built assets.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive a served vehicle with the scenario's scripted operator.
    Operate {
        scenario: String,
        #[arg(long, default_value_t = 7400)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        lockstep: bool,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Re-run a recorded mission and check it reproduces bit for bit.
    Replay { log: PathBuf },
    /// Write the width samples of a recorded mission as CSV.
    Export {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write constant-steer nozzle traces for checking the console overlay.
    Fixtures {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    List,
}

fn pass(fraction: Option<f64>) -> String {
    fraction.map_or_else(|| "n/a".into(), |p| format!("{p:.3}"))
}

fn execute(cli: Cli) -> Result<ExitStatus, CliError> {
    match cli.command {
        Command::Run { scenario, overrides, controller, out } => {
            let kind = controller.as_deref().map(commands::parse_controller).transpose()?;
            let loaded = commands::load(&scenario, &overrides, kind)?;
            let out = commands::run(&loaded, &resolve_out_dir(out))?;
            let r = &out.report;
            println!(
                "{}: {:?} at {:.2} s, QA pass {}, {} fault(s), rms cross-track {:.4} m",
                r.scenario, r.end_reason, r.sim_time_s, pass(r.qa.pass_fraction), r.fault_count, r.tracking.rms_cross_track
            );
            println!("log: {}", out.log_path.display());
            println!("report: {}", out.report_path.display());
            Ok(if r.success() { ExitStatus::Success } else { ExitStatus::MissionFailed })
        }
        Command::Bench { scenarios, controllers, out } => {
            let kinds = commands::parse_controllers(&controllers)?;
            let names: Vec<String> = scenarios.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            if names.is_empty() || kinds.is_empty() {
                return Err(CliError::Usage("bench needs at least one scenario and one controller".into()));
            }
            let (rows, path) = commands::bench(&names, &kinds, &resolve_out_dir(out))?;
            print!("{}", commands::bench_csv(&rows));
            println!("bench: {}", path.display());
            Ok(if rows.iter().any(|r| r.error.is_some()) { ExitStatus::MissionFailed } else { ExitStatus::Success })
        }
        Command::Serve { scenario, port, host, channel, lockstep, ui_dir, overrides, out } => {
            let loaded = commands::load(&scenario, &overrides, None)?;
            loaded.scenario.validate()?;
            let cfg = ServeConfig { scenario: loaded, host, port, channel, lockstep, ui_dir, out_dir: resolve_out_dir(out) };
            let server = Server::bind(cfg)?;
            let stop = server.stop_handle();
            let _ = ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed));
            let p = server.ports();
            println!("operator link tcp://{host}:{}", p.binary);
            println!("bridge ws://{host}:{}", p.bridge);
            println!("console http://{host}:{}", p.http);
            let summary = server.run()?;
            let r = &summary.report;
            println!("{}: {:?} at {:.2} s, QA pass {}, {} fault(s)", r.scenario, r.end_reason, r.sim_time_s, pass(r.qa.pass_fraction), r.fault_count);
            println!("log: {}", summary.log_path.display());
            Ok(if r.success() { ExitStatus::Success } else { ExitStatus::MissionFailed })
        }
        Command::Operate { scenario, port, host, lockstep, overrides } => {
            let loaded = commands::load(&scenario, &overrides, None)?;
            let summary = run_scripted(&loaded, SocketAddr::new(host, port), lockstep)?;
            println!("sent {} command(s), received {} telemetry frame(s)", summary.commands_sent, summary.telemetry_received);
            if let Some(t) = summary.last_telemetry {
                println!("last telemetry at {} ms: mode {:?}", t.sent_at, t.mode);
            }
            Ok(ExitStatus::Success)
        }
        Command::Replay { log } => {
            let r = commands::replay_log(&log)?;
            println!("replayed {} record(s){}, paint digest {}", r.matched, if r.truncated { " (truncated log)" } else { "" }, r.paint_digest);
            Ok(ExitStatus::Success)
        }
        Command::Export { log, out } => {
            let path = commands::export(&log, &resolve_out_dir(out))?;
            println!("width: {}", path.display());
            Ok(ExitStatus::Success)
        }
        Command::Fixtures { out } => {
            let path = commands::fixtures(&resolve_out_dir(out))?;
            println!("fixtures: {}", path.display());
            Ok(ExitStatus::Success)
        }
        Command::List => {
            for name in bundled_names() {
                println!("{name}");
            }
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitStatus::Usage.code() } else { 0 });
        }
    };
    match execute(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_status().code())
        }
    }
}
