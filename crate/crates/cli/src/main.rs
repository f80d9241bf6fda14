//! `qudit-ctrl` command-line driver.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qudit_ctrl::analysis::{bang_bang_certificate, dyson_amplitudes, met_scan, second_order_state, MetScanConfig};
use qudit_ctrl::model::{BasisLabel, Device, DeviceSpec, PauliHamiltonian};
use qudit_ctrl::optimizer::{multistart, optimize, RunResult};
use qudit_ctrl::problem::Problem;
use qudit_ctrl::pulse::PulseSchedule;
use qudit_ctrl::Error;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "qudit-ctrl", version, about = "Pulse-level variational eigensolver on coupled transmons")]
struct Cli {
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for multistart and scans.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Pulse duration, ns.
    #[arg(long)]
    duration: Option<f64>,
    /// Levels per transmon.
    #[arg(long)]
    levels: Option<usize>,
    /// Random starts.
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a pulse from random starts or from a schedule file.
    Optimize {
        #[command(flatten)]
        o: Overrides,
        /// Initial schedule; its duration and segment count replace the config's.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Success probability versus duration and the minimal evolution time.
    MetScan(#[command(flatten)] Overrides),
    /// Switching-function certificate of a schedule.
    Certify {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Dyson-series channel decomposition of a transition.
    Dyson {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        initial: Option<BasisLabel>,
        #[arg(long)]
        target: Option<BasisLabel>,
    },
}

enum Failure {
    Config(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Core(Error::NonFinite { .. } | Error::SingularProjection { .. }) => 3,
            Failure::Core(Error::Capacity { .. }) => 4,
            Failure::Core(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let path = cli.config.as_deref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path).map_err(Failure::Config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let overrides = match &cli.command {
        Command::MetScan(o) => o.clone(),
        Command::Optimize { o, .. } | Command::Certify { o, .. } | Command::Dyson { o, .. } => o.clone(),
    };
    apply(&mut cfg, &overrides);
    std::fs::create_dir_all(&cfg.out).map_err(|e| Failure::Config(format!("{}: {e}", cfg.out.display())))?;
    match cli.command {
        Command::Optimize { init, .. } => {
            if init.is_some() {
                cfg.optimize.init = init;
            }
            cmd_optimize(&cfg)
        }
        Command::MetScan(_) => cmd_met_scan(&cfg),
        Command::Certify { schedule, .. } => {
            let file = schedule.or(cfg.certify.schedule.clone());
            cmd_certify(&cfg, &required(file)?)
        }
        Command::Dyson {
            schedule,
            initial,
            target,
            ..
        } => {
            let file = schedule.or(cfg.dyson.schedule.clone());
            if let Some(i) = initial {
                cfg.dyson.initial = i;
            }
            if let Some(f) = target {
                cfg.dyson.target = f;
            }
            cmd_dyson(&cfg, &required(file)?)
        }
    }
}

fn required(schedule: Option<PathBuf>) -> Outcome<PathBuf> {
    schedule.ok_or_else(|| Failure::Config("a schedule file is required (--schedule)".into()))
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) {
    if let Some(t) = o.duration {
        cfg.problem.duration = t;
    }
    if let Some(l) = o.levels {
        cfg.levels = Some(l);
    }
    if let Some(n) = o.starts {
        cfg.optimize.starts = n;
        cfg.scan.starts = n;
    }
}

fn build_problem(cfg: &ExperimentConfig) -> Outcome<Problem> {
    cfg.optimizer.validate()?;
    let mut spec = DeviceSpec::load(&cfg.device)?;
    if let Some(l) = cfg.levels {
        spec = spec.with_levels(l)?;
    }
    let h = PauliHamiltonian::load(&cfg.hamiltonian)?;
    Ok(Problem::new(Arc::new(Device::new(spec)?), &h, cfg.problem.clone())?)
}

/// Problem on the schedule's own time grid.
fn problem_for(cfg: &ExperimentConfig, schedule: &PulseSchedule) -> Outcome<Problem> {
    let mut cfg = cfg.clone();
    cfg.problem.duration = schedule.duration;
    cfg.problem.n_segments = schedule.n_segments;
    let p = build_problem(&cfg)?;
    p.check_schedule(schedule)?;
    Ok(p)
}

fn write_file(path: &Path, contents: &str) -> Outcome<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    write_file(path, &text)
}

/// Schedule text with the level count recorded, so a mismatched device is caught on reload.
fn schedule_text(schedule: &PulseSchedule, levels: usize) -> String {
    let text = schedule.to_text();
    let (first, rest) = text.split_once('\n').expect("header line");
    format!("{first}\n# levels: {levels}\n{rest}")
}

fn load_schedule(path: &Path, levels: usize) -> Outcome<PulseSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let recorded = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.trim() == "levels")
        .map(|(_, v)| v.trim().parse::<usize>());
    match recorded {
        Some(Ok(l)) if l != levels => {
            return Err(Error::Dimension(format!(
                "{} was optimized for {l} levels per transmon, device has {levels}",
                path.display()
            ))
            .into())
        }
        Some(Err(_)) => return Err(Error::parse(path, 0, "bad 'levels' header").into()),
        _ => {}
    }
    Ok(PulseSchedule::parse(&text, path)?)
}

fn populations_csv(problem: &Problem, schedule: &PulseSchedule) -> Outcome<String> {
    let psi = problem.final_state(schedule)?;
    let pops = problem.device().populations(&psi, problem.config().frame);
    let mut out = String::from("label,population\n");
    for (l, p) in problem.device().labels().iter().zip(pops) {
        out.push_str(&format!("{l},{p}\n"));
    }
    Ok(out)
}

fn write_run(cfg: &ExperimentConfig, problem: &Problem, run: &RunResult) -> Outcome<()> {
    let levels = problem.device().levels();
    write_file(&cfg.out.join("schedule.txt"), &schedule_text(&run.schedule, levels))?;
    write_json(&cfg.out.join("result.json"), run)?;
    write_file(&cfg.out.join("populations.csv"), &populations_csv(problem, &run.schedule)?)
}

fn cmd_optimize(cfg: &ExperimentConfig) -> Outcome<()> {
    let init = match &cfg.optimize.init {
        Some(file) => Some(load_schedule(file, resolved_levels(cfg)?)?),
        None => None,
    };
    let problem = match &init {
        Some(s) => problem_for(cfg, s)?,
        None => build_problem(cfg)?,
    };
    let starts = cfg.optimize.starts;
    let run = if starts <= 1 || init.is_some() {
        let path = cfg.out.join("iterations.jsonl");
        let mut log = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let (x0, seed) = match &init {
            Some(s) => (problem.parameters(s), None),
            None => (problem.random_start(cfg.seed), Some(cfg.seed)),
        };
        let run = optimize(&problem, &x0, &cfg.optimizer, seed, Some(&mut log))?;
        log.flush().map_err(|e| Error::io(&path, e))?;
        run
    } else {
        let all = multistart(&problem, starts, cfg.seed, &cfg.optimizer)?;
        write_json(&cfg.out.join("multistart.json"), &all)?;
        all.best().expect("at least one run").clone()
    };
    write_run(cfg, &problem, &run)?;
    println!(
        "T = {} ns: energy {:.12} Ha, error {:.3e} Ha, leakage {:.3e}, success {}",
        run.schedule.duration, run.report.energy, run.energy_error, run.report.leakage_fraction, run.success
    );
    Ok(())
}

fn cmd_met_scan(cfg: &ExperimentConfig) -> Outcome<()> {
    let s = &cfg.scan;
    let scan = MetScanConfig {
        durations: s.durations(),
        n_starts: s.starts,
        seed: cfg.seed,
        mode: s.mode,
        chunk: s.chunk,
        stop_at_target: s.stop_at_target,
    };
    let first = scan.durations.first().copied().unwrap_or(cfg.problem.duration);
    let mut pcfg = cfg.clone();
    pcfg.problem.duration = first;
    let problem = build_problem(&pcfg)?;
    let result = met_scan(&problem, &scan, &cfg.optimizer)?;
    write_file(&cfg.out.join("met_scan.csv"), &result.to_csv())?;
    write_json(&cfg.out.join("met_scan.json"), &result)?;
    if let Some(run) = &result.met_run {
        let p = problem.with_duration(run.schedule.duration)?;
        write_run(cfg, &p, run)?;
    }
    match result.met_estimate {
        Some(t) => println!("MET {t} ns"),
        None => println!("no success on the scanned grid"),
    }
    Ok(())
}

fn cmd_certify(cfg: &ExperimentConfig, file: &Path) -> Outcome<()> {
    let levels = resolved_levels(cfg)?;
    let schedule = load_schedule(file, levels)?;
    let problem = problem_for(cfg, &schedule)?;
    let (cert, trace) = bang_bang_certificate(&problem, &schedule, &cfg.certify.objective, &cfg.certify.thresholds())?;
    write_json(&cfg.out.join("certificate.json"), &cert)?;
    write_file(&cfg.out.join("switching.csv"), &trace.to_csv())?;
    println!(
        "sign agreement {:.4}, saturated {:.4}, flips aligned {}",
        cert.sign_agreement,
        cert.saturated_fraction,
        cert.flips_aligned()
    );
    Ok(())
}

#[derive(Serialize)]
struct DysonOutput<'a> {
    report: &'a qudit_ctrl::analysis::DysonReport,
    second_order_fidelity: f64,
}

fn cmd_dyson(cfg: &ExperimentConfig, file: &Path) -> Outcome<()> {
    let levels = resolved_levels(cfg)?;
    let schedule = load_schedule(file, levels)?;
    let problem = problem_for(cfg, &schedule)?;
    let d = &cfg.dyson;
    let report = dyson_amplitudes(&problem, &schedule, &d.initial, &d.target, d.quadrature_intervals)?;
    let so = second_order_state(&problem, &schedule, problem.initial_state(), d.quadrature_intervals)?;
    write_json(
        &cfg.out.join("dyson.json"),
        &DysonOutput {
            report: &report,
            second_order_fidelity: so.fidelity,
        },
    )?;
    write_file(&cfg.out.join("channels.csv"), &report.channels_csv())?;
    println!(
        "|A1|^2 = {:.3e}, |A2|^2 = {:.6}, second-order infidelity {:.3e}",
        report.first_order_probability,
        report.second_order_probability,
        so.infidelity()
    );
    Ok(())
}

fn resolved_levels(cfg: &ExperimentConfig) -> Outcome<usize> {
    match cfg.levels {
        Some(l) => Ok(l),
        None => Ok(DeviceSpec::load(&cfg.device)?.levels),
    }
}
