use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ibvp_lab::config::{parse_config, ExperimentConfig};
use ibvp_lab::experiment::{convergence_study, emit_plotdata, run_suite, SuiteMode, SuiteReport};

#[derive(Parser)]
#[command(
    name = "ibvp-lab",
    version,
    about = "Perturbation experiments for SBP-SAT hyperbolic solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config without running anything.
    Validate(Common),
    /// Run the full suite: bounds, rates, long-time behaviour, energy check.
    Run(Common),
    /// Run the suite, judging only the short-time rate fits.
    Rates(Common),
    /// Run the suite, judging only the bound checks.
    Bounds(Common),
    /// Manufactured-solution convergence study over the config's grid sizes.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, overriding `output.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed, overriding `output.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> ibvp_lab::Result<ExperimentConfig> {
        let mut cfg = parse_config(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
            cfg.raw.output.dir = out.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
            cfg.raw.output.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.raw.output.seed = s;
        }
        Ok(cfg)
    }
}

fn print_suite(report: &SuiteReport) {
    for r in &report.runs {
        let verdicts: Vec<String> = r
            .verdicts
            .iter()
            .map(|(k, v)| format!("{k}={}", if *v { "ok" } else { "FAIL" }))
            .collect();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<4} {:<40} delta0={:<8} slope={:<8} max_ratio={:<8} {}{}",
            if r.pass { "PASS" } else { "FAIL" },
            r.id,
            fmt(r.delta0),
            fmt(r.slope),
            fmt(r.max_ratio),
            verdicts.join(" "),
            r.error
                .as_ref()
                .map(|e| format!(" error: {e}"))
                .unwrap_or_default(),
        );
    }
    println!(
        "{} runs, {} failed, {:.2} s",
        report.runs.len(),
        report.runs.iter().filter(|r| !r.pass).count(),
        report.wall_clock_s
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    let (common, mode) = match &cli.command {
        Command::Validate(c) => (c, None),
        Command::Run(c) => (c, Some(SuiteMode::All)),
        Command::Rates(c) => (c, Some(SuiteMode::Rates)),
        Command::Bounds(c) => (c, Some(SuiteMode::Bounds)),
        Command::Convergence(c) => (c, None),
    };
    let cfg = match common.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let quiet = common.quiet;

    let outcome = match (&cli.command, mode) {
        (Command::Validate(_), _) => {
            if !quiet {
                println!(
                    "ok: {} runs ({} grid sizes x {} kinds x {} amplitudes), config hash {}",
                    cfg.grid_sizes.len() * cfg.kinds.len() * cfg.amplitudes.len(),
                    cfg.grid_sizes.len(),
                    cfg.kinds.len(),
                    cfg.amplitudes.len(),
                    cfg.hash()
                );
            }
            Ok(true)
        }
        (Command::Convergence(_), _) => {
            convergence_study(&cfg, cfg.t_end.min(ibvp_lab::experiment::CONVERGENCE_T_END))
                .and_then(|rep| {
                    std::fs::create_dir_all(&cfg.out_dir)?;
                    let f = std::fs::File::create(cfg.out_dir.join("convergence.json"))?;
                    serde_json::to_writer_pretty(f, &rep)?;
                    if !quiet {
                        for l in &rep.levels {
                            let order = l.order.map_or("-".into(), |o| format!("{o:.3}"));
                            println!(
                                "n={:<6} h={:.3e} error={:.4e} order={order}",
                                l.n, l.h, l.error
                            );
                        }
                        println!(
                            "{}: expected order {:.1}",
                            if rep.pass { "PASS" } else { "FAIL" },
                            rep.expected_order
                        );
                    }
                    Ok(rep.pass)
                })
        }
        (_, Some(mode)) => run_suite(&cfg, mode).and_then(|rep| {
            emit_plotdata(&rep)?;
            if !quiet {
                print_suite(&rep);
            }
            Ok(rep.pass)
        }),
        _ => unreachable!(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
