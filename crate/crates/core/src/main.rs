use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plantbot::config::{BackendKind, RunConfig};
use plantbot::gateway::{replay, run, RunOptions};
use plantbot::roles::SoilThresholds;
use plantbot::telemetry::{
    export_corpus, load_records, pre_transition_terms, run_lengths, state_counts, term_frequency,
    Tokenizer,
};

#[derive(Parser)]
#[command(name = "plantbot", version, about = "Plant-robot hybrid agent network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario with the five role agents.
    Run(RunArgs),
    /// Behavioural statistics over a run log.
    Analyze(AnalyzeArgs),
    /// Print the console events recorded in a log, one JSON line each.
    Replay {
        logfile: PathBuf,
        /// Time scale; 10 plays a minute in six seconds, 0 disables waiting.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Check a config and the files it references.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Scripted,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated run length, e.g. 10s or 2m (overrides the scenario).
    #[arg(long, value_parser = parse_duration)]
    duration: Option<f64>,
    /// Do not start the console server.
    #[arg(long)]
    headless: bool,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, value_name = "HOST:PORT")]
    console_bind: Option<String>,
    /// Run as fast as possible instead of in real time.
    #[arg(long)]
    fast: bool,
    /// Log file (defaults to the config's, else <run id>.jsonl).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transition {
    Move,
    Stop,
}

#[derive(Args)]
struct AnalyzeArgs {
    logfile: PathBuf,
    #[arg(long)]
    states: bool,
    #[arg(long)]
    runs: bool,
    /// Term frequencies for one agent's utterances ("all" for every agent).
    #[arg(long, value_name = "AGENT")]
    terms: Option<String>,
    #[arg(long, value_enum)]
    pre_transition: Option<Transition>,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, num_args = 2, value_names = ["AGENT", "PATH"])]
    export: Option<Vec<String>>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

fn parse_duration(s: &str) -> Result<f64, String> {
    if let Ok(secs) = s.parse::<f64>() {
        return if secs > 0.0 {
            Ok(secs)
        } else {
            Err("duration must be positive".into())
        };
    }
    humantime::parse_duration(s)
        .map(|d| d.as_secs_f64())
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Replay { logfile, speed } => cmd_replay(&logfile, speed),
        Command::ValidateConfig { config } => RunConfig::load(&config)
            .and_then(|c| c.validate().map(|_| c))
            .map(|c| println!("ok: {} (run id {})", config.display(), c.run_id()))
            .map_err(|e| format!("config: {e}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| format!("config: {e}"))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match args.backend {
        Some(BackendArg::Live) => cfg.backend.kind = BackendKind::Live,
        Some(BackendArg::Scripted) => cfg.backend.kind = BackendKind::Scripted,
        None => {}
    }
    if args.console_bind.is_some() {
        cfg.console_bind = args.console_bind;
    }
    if let Some(log) = args.log {
        cfg.log = Some(log);
    }
    if cfg.log.is_none() {
        cfg.log = Some(PathBuf::from(format!("{}.jsonl", cfg.run_id())));
    }
    let log = cfg.log.clone().unwrap();
    let opts = RunOptions {
        duration_s: args.duration,
        fast: args.fast,
        headless: args.headless,
    };
    let stats = run(cfg, &opts).map_err(|e| e.to_string())?;
    eprintln!(
        "done: {} ticks, {} collisions, {} reflex engagements; log {}",
        stats.ticks,
        stats.collisions,
        stats.reflex_engagements,
        log.display()
    );
    Ok(())
}

fn print_terms(out: &mut impl Write, terms: &[(String, usize)]) -> std::io::Result<()> {
    writeln!(out, "term\tcount")?;
    for (t, c) in terms {
        writeln!(out, "{t}\t{c}")?;
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), String> {
    let loaded = load_records(&args.logfile).map_err(|e| e.to_string())?;
    if loaded.malformed > 0 {
        eprintln!("skipped {} malformed lines", loaded.malformed);
    }
    let recs = &loaded.records;
    let tok = Tokenizer::default();
    let top_k = args.top_k.max(1);
    let nothing_selected = !args.states
        && !args.runs
        && args.terms.is_none()
        && args.pre_transition.is_none()
        && args.export.is_none();
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| e.to_string();

    if args.states || nothing_selected {
        let c = state_counts(recs);
        writeln!(out, "state\tcount\nstop\t{}\nmove\t{}", c.stop, c.moving).map_err(io)?;
    }
    if args.runs || nothing_selected {
        let r = run_lengths(recs);
        writeln!(out, "state\tlength\truns").map_err(io)?;
        for (name, h) in [("stop", &r.stop), ("move", &r.moving)] {
            for (len, n) in h {
                writeln!(out, "{name}\t{len}\t{n}").map_err(io)?;
            }
        }
    }
    if let Some(agent) = &args.terms {
        let filter = (agent != "all").then_some(agent.as_str());
        print_terms(&mut out, &term_frequency(recs, filter, top_k, &tok)).map_err(io)?;
    }
    if let Some(t) = args.pre_transition {
        let flag = match t {
            Transition::Move => 1,
            Transition::Stop => 0,
        };
        if args.window == 0 {
            return Err("--window must be at least 1".into());
        }
        print_terms(&mut out, &pre_transition_terms(recs, flag, args.window, top_k, &tok)).map_err(io)?;
    }
    if let Some(v) = &args.export {
        let filter = (v[0] != "all").then_some(v[0].as_str());
        let n = export_corpus(recs, filter, Path::new(&v[1])).map_err(|e| e.to_string())?;
        eprintln!("exported {n} utterances to {}", v[1]);
    }
    Ok(())
}

fn cmd_replay(logfile: &Path, speed: f64) -> Result<(), String> {
    let mut out = std::io::stdout().lock();
    let mut write_err = None;
    let summary = replay(logfile, speed, &SoilThresholds::default(), |ev| {
        if write_err.is_none() {
            write_err = writeln!(out, "{}", ev.to_line()).err();
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = write_err {
        return Err(e.to_string());
    }
    match summary.stopped_at_line {
        Some(line) => Err(format!(
            "corrupt record at line {line}; replayed {} events",
            summary.emitted
        )),
        None => {
            eprintln!("replayed {} events", summary.emitted);
            Ok(())
        }
    }
}
