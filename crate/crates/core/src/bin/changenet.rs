use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use changenet::analysis::{check_consistency, classify_safety, export_dot, reachable, Verdict, DEFAULT_BOUND};
use changenet::change::{functional_template, nonfunctional_template};
use changenet::fuzz::fuzz;
use changenet::scenario::{load_scenario_file, ScenarioConfig};
use changenet::simenv::run;

const EXIT_USAGE: u8 = 1;
const EXIT_FUZZ_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "changenet", version, about = "Change management simulator for service orchestrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its trace.
    Run {
        scenario: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        heartbeat_limit: Option<u32>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        polling_interval: Option<u64>,
        /// Also write the trace to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario.
    Validate { scenario: PathBuf },
    /// Reachability, consistency and safety of the scenario's process net.
    Analyze {
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BOUND, value_parser = parse_bound)]
        bound: usize,
    },
    /// Write the flattened process net as DOT or JSON.
    Export {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include the change-net templates.
        #[arg(long)]
        templates: bool,
    },
    /// Check invariants over seeded random fault schedules.
    Fuzz {
        scenario: PathBuf,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..))]
        count: u32,
        /// Defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

fn parse_bound(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("bound must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    load_scenario_file(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_USAGE)
    })
}

fn write_out(path: &Path, text: &str) -> Result<(), ExitCode> {
    fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(EXIT_USAGE)
    })
}

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    // a closed pipe is not worth a panic
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn cmd_run(
    path: &Path,
    heartbeat_limit: Option<u32>,
    polling_interval: Option<u64>,
    out: Option<&Path>,
) -> Result<ExitCode, ExitCode> {
    let mut config = load(path)?;
    if let Some(n) = heartbeat_limit {
        config.policy.heartbeat_limit = n;
    }
    if let Some(n) = polling_interval {
        config.polling.interval_ticks = n;
    }
    let trace = run(&config).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_USAGE)
    })?;
    let text = trace.text();
    emit(&text);
    if let Some(out) = out {
        write_out(out, &text)?;
    }
    log::info!("{} finished after {} ticks", config.name, trace.ticks);
    Ok(ExitCode::from(trace.exit_code() as u8))
}

fn cmd_validate(path: &Path) -> Result<ExitCode, ExitCode> {
    let config = load(path)?;
    let net = config.process_net();
    emit(&format!(
        "valid scenario={} services={} places={} transitions={} rules={} faults={}\n",
        config.name,
        config.services.len(),
        net.place_count(),
        net.transition_count(),
        config.rules.len(),
        config.fault_schedule.len()
    ));
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(path: &Path, bound: usize) -> Result<ExitCode, ExitCode> {
    let config = load(path)?;
    let net = config.process_net();
    let marking = config.initial(&net);
    let spec = config.unsafe_spec();
    let set = reachable(&net, &marking, bound);
    let unsafe_count = set.markings.iter().filter(|m| spec.holds(m)).count();
    let consistency = check_consistency(&net, &marking, bound);
    let mut text = format!(
        "places={} transitions={} arcs={}\nreachable={} truncated={}\nconsistency={}",
        net.place_count(),
        net.transition_count(),
        net.arc_count(),
        set.len(),
        set.truncated,
        Verdict::of(&consistency)
    );
    if let Ok(c) = &consistency {
        if let Some(w) = &c.witness {
            text.push_str(&format!(" witness_length={}", w.len()));
        }
    }
    text.push_str(&format!(
        "\nsafety={:?} unsafe_reachable={unsafe_count}\n",
        classify_safety(&net, &marking, &spec)
    ));
    emit(&text);
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(path: &Path, format: Format, out: Option<&Path>, templates: bool) -> Result<ExitCode, ExitCode> {
    let config = load(path)?;
    let net = config.process_net();
    let template_nets = [
        ("nonfunctional", nonfunctional_template("S")),
        ("functional", functional_template("S")),
    ];
    let text = match format {
        Format::Dot => {
            let mut s = export_dot(&net, Some(&config.initial(&net)));
            if templates {
                for (_, t) in &template_nets {
                    s.push_str(&export_dot(&t.net, Some(&t.initial)));
                }
            }
            s
        }
        Format::Json => {
            let process = serde_json::to_value(&net).expect("plain data");
            let value = if templates {
                let nets: serde_json::Map<String, serde_json::Value> = template_nets
                    .iter()
                    .map(|(k, t)| (k.to_string(), serde_json::to_value(&t.net).expect("plain data")))
                    .collect();
                serde_json::json!({ "process": process, "templates": nets })
            } else {
                process
            };
            let mut s = serde_json::to_string_pretty(&value).expect("plain data");
            s.push('\n');
            s
        }
    };
    match out {
        Some(out) => write_out(out, &text)?,
        None => emit(&text),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fuzz(path: &Path, count: u32, seed: Option<u64>) -> Result<ExitCode, ExitCode> {
    let config = load(path)?;
    let seed = seed.unwrap_or(config.seed);
    let report = fuzz(&config, count, seed).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_USAGE)
    })?;
    match report.failure {
        None => {
            emit(&format!("fuzz cases={} seed={seed} failures=0\n", report.cases_run));
            Ok(ExitCode::SUCCESS)
        }
        Some(f) => {
            eprintln!(
                "fuzz failure: case={} case_seed={} invariant={}: {}",
                f.case, f.case_seed, f.violation.invariant, f.violation.detail
            );
            eprintln!(
                "minimized schedule has {} fault(s); reproducer scenario follows on stdout",
                f.reproducer.fault_schedule.len()
            );
            let mut s = serde_json::to_string_pretty(&f.reproducer).expect("plain data");
            s.push('\n');
            emit(&s);
            Ok(ExitCode::from(EXIT_FUZZ_FAILURE))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CHANGENET_LOG", "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run {
            scenario,
            heartbeat_limit,
            polling_interval,
            out,
        } => cmd_run(scenario, *heartbeat_limit, *polling_interval, out.as_deref()),
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Analyze { scenario, bound } => cmd_analyze(scenario, *bound),
        Command::Export {
            scenario,
            format,
            out,
            templates,
        } => cmd_export(scenario, *format, out.as_deref(), *templates),
        Command::Fuzz { scenario, count, seed } => cmd_fuzz(scenario, *count, *seed),
    };
    result.unwrap_or_else(|code| code)
}
