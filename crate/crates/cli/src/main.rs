//! `gar`: run, evaluate, ablate and report on adversarial co-training runs.
//!
//! Exit status: 0 on success, 2 for an unusable configuration (the key is
//! named), 3 for a missing file, 1 for anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gar_core::training::{self, log::METRIC_COLUMNS, RunConfig, RunLog, Trainer};
use gar_core::verifier::{Fallback, MockAction, MockConfig, MockVerifier};
use gar_core::{GarError, IterationRecord, VerdictStatus};

#[derive(Parser)]
#[command(name = "gar", version, about = "Adversarial statement-fuser / prover co-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train for the configured number of iterations.
    Run {
        config: PathBuf,
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Output directory (overrides `checkpoint_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpointed prover on a statement repository.
    Eval {
        /// A checkpoint file or the run directory holding `checkpoint.json`.
        checkpoint: PathBuf,
        /// Repository file (JSON lines).
        statements: PathBuf,
        /// Attempts per statement; pass@x is reported for this x.
        #[arg(long, default_value_t = 32)]
        x: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the configuration with and without the modification penalty.
    Ablate {
        config: PathBuf,
        /// Parent directory for `penalty_on/` and `penalty_off/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics table and summary for one or more run logs.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the mock verifier until interrupted.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// `pass`, `fail`, `error`, `timeout` or `arena`.
        #[arg(long, default_value = "arena")]
        fallback: String,
        /// `PATTERN=ACTION` with ACTION one of pass, fail, error, timeout,
        /// crash, sleep:SECS. Repeatable; first match wins.
        #[arg(long = "rule")]
        rules: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(g) = cause.downcast_ref::<GarError>() {
            match g {
                GarError::Config { .. } => return 2,
                GarError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => return 3,
                _ => {}
            }
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 3;
            }
        }
    }
    1
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            print_config,
            resume,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.checkpoint_dir = Some(out);
            }
            if print_config {
                print!("{}", cfg.to_toml_string()?);
                return Ok(());
            }
            if cfg.checkpoint_dir.is_none() {
                cfg.checkpoint_dir = Some(default_out(&config));
            }
            train(cfg, resume)?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            statements,
            x,
            seed,
        } => eval(&checkpoint, &statements, x, seed),
        Command::Ablate { config, out } => {
            let cfg = load_config(&config)?;
            let root = out
                .or_else(|| cfg.checkpoint_dir.clone())
                .unwrap_or_else(|| default_out(&config));
            let mut finals = Vec::new();
            for (name, penalty) in [("penalty_on", true), ("penalty_off", false)] {
                println!("== {name}");
                let records = train(
                    RunConfig {
                        modification_penalty: penalty,
                        checkpoint_dir: Some(root.join(name)),
                        ..cfg.clone()
                    },
                    false,
                )?;
                finals.push(records.last().map_or(0.0, |r| r.modification_rate));
            }
            println!(
                "final modification rate: penalty on {:.4}, penalty off {:.4}",
                finals[0], finals[1]
            );
            Ok(())
        }
        Command::Report { logs, csv } => report(&logs, csv.as_deref()),
        Command::ServeMock { addr, fallback, rules } => serve_mock(&addr, &fallback, &rules),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(path).with_context(|| format!("loading `{}`", path.display()))?;
    Ok(cfg.with_env_overrides())
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    Path::new("runs").join(stem)
}

fn train(cfg: RunConfig, resume: bool) -> Result<Vec<IterationRecord>> {
    let dir = cfg.checkpoint_dir.clone().context("no output directory")?;
    let mut trainer = if resume {
        Trainer::resume(cfg).context("resuming")?
    } else {
        Trainer::new(cfg)?
    };
    if trainer.is_finished() {
        println!(
            "nothing to do: {} iterations already complete",
            trainer.state().iteration
        );
    }
    while !trainer.is_finished() {
        let out = trainer.step()?;
        let r = &out.record;
        println!(
            "iteration {}: pass@{} {:.4}  correctness {:.4}  base {:.4}  modification {:.4}  difficulty {:.2}  ({:.2} s)",
            r.iteration,
            r.x,
            r.pass_at_x,
            r.avg_correctness,
            r.base_policy_avg_correctness,
            r.modification_rate,
            r.mean_difficulty,
            r.wall_time_secs
        );
    }
    println!("run log: {}", dir.join("run_log.jsonl").display());
    Ok(trainer.records().to_vec())
}

fn eval(checkpoint: &Path, statements: &Path, x: usize, seed: u64) -> Result<()> {
    let file = if checkpoint.is_dir() {
        checkpoint.join("checkpoint.json")
    } else {
        checkpoint.to_path_buf()
    };
    let cp = training::checkpoint_load(&file).with_context(|| format!("loading `{}`", file.display()))?;
    let cfg = cp.config.with_env_overrides();
    let entries =
        training::load_statements(statements, &cfg).with_context(|| format!("loading `{}`", statements.display()))?;
    let checker = training::make_checker(&cfg)?;
    let report = training::evaluate(
        &cp.state.prover,
        &cfg.prover_codec(),
        &entries,
        x,
        seed,
        checker.as_ref(),
    )?;
    println!("statements: {}", report.statements);
    println!("pass@{x}: {:.4}", report.pass_at_x);
    println!("average correctness: {:.4}", report.avg_correctness);
    println!("modification rate: {:.4}", report.modification_rate);
    Ok(())
}

fn report(paths: &[PathBuf], csv: Option<&Path>) -> Result<()> {
    let mut logs: Vec<(String, RunLog)> = Vec::new();
    for p in paths {
        let file = if p.is_dir() { p.join("run_log.jsonl") } else { p.clone() };
        let log = training::read_run_log(&file).with_context(|| format!("reading `{}`", file.display()))?;
        if log.iterations.is_empty() {
            bail!("`{}` has no iterations", file.display());
        }
        logs.push((run_label(p), log));
    }
    let mut table = format!("run,{}\n", METRIC_COLUMNS.join(","));
    for (label, log) in &logs {
        for row in training::metrics_csv(&log.records()).lines().skip(1) {
            writeln!(table, "{label},{row}")?;
        }
    }
    match csv {
        Some(path) => {
            fs::write(path, &table).with_context(|| format!("writing `{}`", path.display()))?;
            println!("table: {}", path.display());
        }
        None => print!("{table}"),
    }
    println!();
    for (label, log) in &logs {
        let records = log.records();
        let (first, last) = (&records[0], &records[records.len() - 1]);
        println!(
            "{label}: {} iterations, penalty {}; pass@{} {:.4} -> {:.4}; base-policy correctness {:.4} -> {:.4}; modification rate {:.4} -> {:.4}",
            records.len(),
            if log.config.modification_penalty { "on" } else { "off" },
            last.x,
            first.pass_at_x,
            last.pass_at_x,
            first.base_policy_avg_correctness,
            last.base_policy_avg_correctness,
            first.modification_rate,
            last.modification_rate
        );
    }
    if logs.len() >= 2 {
        let finals: Vec<(&str, f64)> = logs
            .iter()
            .map(|(l, log)| (l.as_str(), log.iterations.last().unwrap().0.modification_rate))
            .collect();
        let top = finals
            .iter()
            .cloned()
            .fold(finals[0], |a, b| if b.1 > a.1 { b } else { a });
        if finals.iter().filter(|f| f.1 == top.1).count() > 1 {
            println!("no single run had the highest final modification rate ({:.4})", top.1);
        } else {
            println!("highest final modification rate: {} ({:.4})", top.0, top.1);
        }
    }
    Ok(())
}

fn run_label(path: &Path) -> String {
    let dir = if path.is_dir() { Some(path) } else { path.parent() };
    dir.and_then(|d| d.file_name())
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn parse_status(s: &str) -> Result<VerdictStatus> {
    Ok(match s {
        "pass" => VerdictStatus::Pass,
        "fail" => VerdictStatus::Fail,
        "error" => VerdictStatus::Error,
        "timeout" => VerdictStatus::Timeout,
        other => bail!("unknown status `{other}`"),
    })
}

fn serve_mock(addr: &str, fallback: &str, rules: &[String]) -> Result<()> {
    let mut config = MockConfig {
        rules: Vec::new(),
        fallback: if fallback == "arena" {
            Fallback::Arena
        } else {
            Fallback::Respond(parse_status(fallback)?)
        },
    };
    for rule in rules {
        let (pattern, action) = rule
            .rsplit_once('=')
            .with_context(|| format!("rule `{rule}` is not PATTERN=ACTION"))?;
        let action = match action {
            "crash" => MockAction::Crash,
            a if a.starts_with("sleep:") => {
                let secs: f64 = a["sleep:".len()..].parse().with_context(|| format!("rule `{rule}`"))?;
                MockAction::Sleep(Duration::try_from_secs_f64(secs).with_context(|| format!("rule `{rule}`"))?)
            }
            a => MockAction::Respond(parse_status(a)?),
        };
        config = config.rule(pattern, action);
    }
    let mock = MockVerifier::bind(addr, config)?;
    println!("mock verifier listening on {}", mock.endpoint());
    mock.wait();
    Ok(())
}
