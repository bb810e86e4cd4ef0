use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ssf_core::feedback::ProtocolKind;
use ssf_core::harness::experiment::IptOutcome;
use ssf_core::harness::output::{
    write_file, write_metrics_csv, write_optimization_csv, write_per_seed_csv, write_run_meta,
    write_sweep_svgs, write_thresholding_svg, write_trace_csv,
};
use ssf_core::harness::{HarnessError, SimConfig, Simulator, ThresholdMethod};

#[derive(Parser)]
#[command(
    name = "isac-ssf",
    version,
    about = "Closed-loop bistatic ISAC beam-sweeping simulator"
)]
struct Cli {
    /// Config file (TOML). Defaults to the built-in default scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated seed list; overrides the config's seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated protocols (ssf, earq, openloop).
    #[arg(long, global = true, value_delimiter = ',')]
    protocol: Vec<ProtocolKind>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Map,
    Ipt,
    Fixed,
}

impl From<Method> for ThresholdMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Map => ThresholdMethod::Map,
            Method::Ipt => ThresholdMethod::Ipt,
            Method::Fixed => ThresholdMethod::Fixed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One scenario per seed; writes a trace CSV for each.
    Run {
        /// Sensing power budget, dBm (default: harness.budget_dbm).
        #[arg(long, allow_hyphen_values = true)]
        budget: Option<f64>,
        /// Threshold method (default: feedback.threshold_method).
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Protocols × budget grid × seeds; writes metrics CSV and figures.
    Sweep {
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Interior-point threshold optimization at one budget.
    Optimize {
        #[arg(long, allow_hyphen_values = true)]
        budget: Option<f64>,
    },
    /// MAP versus optimized thresholds across the budget grid.
    CompareThresholds,
    /// Parses and validates the config, then prints its fingerprint.
    ValidateConfig,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<SimConfig, Failure> {
    let cfg = match &cli.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Failure::Runtime(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    if let Command::ValidateConfig = cli.command {
        println!("ok {}", cfg.fingerprint());
        return Ok(());
    }
    let seeds = if cli.seed.is_empty() {
        cfg.harness.seeds.clone()
    } else {
        cli.seed.clone()
    };
    prepare_out(&cli.out)?;
    match &cli.command {
        Command::Run { budget, method } => {
            let protocol = single_protocol(cli, ProtocolKind::Ssf)?;
            let budget = budget.unwrap_or(cfg.harness.budget_dbm);
            check_budget(&cfg, budget)?;
            let method = method.map_or(cfg.feedback.threshold_method, Into::into);
            let sim = Simulator::new(cfg)?;
            let thresholds = sim
                .resolve_thresholds(method, budget)?
                .for_protocol(protocol);
            for &seed in &seeds {
                let trace = sim.run(thresholds, budget, seed)?;
                let m = trace.metrics()?;
                write_file(&cli.out, &format!("trace_{protocol}_seed{seed}.csv"), |b| {
                    write_trace_csv(b, &trace)
                })?;
                println!(
                    "{protocol} seed {seed}: p_det {:.4} latency {} scans realloc {:.4} consumed {:.2} dBm",
                    m.p_det,
                    m.latency.mean_scans.map_or("n/a".into(), |l| format!("{l:.2}")),
                    m.realloc_ratio,
                    m.p_consumed_dbm
                );
            }
            write_run_meta(
                &cli.out.join("run_meta.json"),
                &command_line(),
                sim.config(),
                &seeds,
            )?;
        }
        Command::Sweep { method } => {
            let protocols = protocols_or(cli, &ProtocolKind::ALL);
            let method = method.map_or(cfg.feedback.threshold_method, Into::into);
            let sim = Simulator::new(cfg)?;
            let res = sim.sweep(&protocols, &sim.config().budget_grid(), &seeds, method)?;
            write_file(&cli.out, "metrics.csv", |b| write_metrics_csv(b, &res))?;
            write_file(&cli.out, "per_seed.csv", |b| write_per_seed_csv(b, &res))?;
            if cli.format == Format::CsvSvg {
                write_sweep_svgs(&cli.out, &res)?;
            }
            write_run_meta(
                &cli.out.join("run_meta.json"),
                &command_line(),
                sim.config(),
                &seeds,
            )?;
            let failed: Vec<String> = res
                .failed_cells()
                .map(|c| {
                    format!(
                        "{} @ {} dBm: {}",
                        c.protocol,
                        c.budget_dbm,
                        c.error.as_deref().unwrap_or("")
                    )
                })
                .collect();
            println!(
                "{} cells written to {}",
                res.cells.len() - failed.len(),
                cli.out.display()
            );
            if !failed.is_empty() {
                return Err(Failure::Runtime(format!(
                    "{} cells failed:\n  {}",
                    failed.len(),
                    failed.join("\n  ")
                )));
            }
        }
        Command::Optimize { budget } => {
            let protocol = single_protocol(cli, ProtocolKind::Ssf)?;
            if protocol == ProtocolKind::Openloop {
                return Err(Failure::Config(
                    "--protocol: open-loop has no thresholds to optimize".into(),
                ));
            }
            let budget = budget.unwrap_or(cfg.harness.budget_dbm);
            check_budget(&cfg, budget)?;
            if !cli.seed.is_empty() {
                cfg.optimizer.eval_seeds = seeds.clone();
            }
            let sim = Simulator::new(cfg)?;
            let o = sim.optimize(protocol, budget)?;
            write_file(&cli.out, "optimization.csv", |b| {
                write_optimization_csv(b, &o)
            })?;
            write_file(&cli.out, "thresholds.csv", |b| {
                write_thresholds_csv(b, std::slice::from_ref(&o))
            })?;
            write_run_meta(
                &cli.out.join("run_meta.json"),
                &command_line(),
                sim.config(),
                &sim.config().optimizer.eval_seeds,
            )?;
            println!(
                "{protocol} @ {budget} dBm: MAP {:?} p_det {:.4} -> IPT {:?} p_det {:.4} ({} iterations)",
                o.map,
                -o.trace.initial_f,
                o.ipt,
                -o.trace.best_f,
                o.trace.iterations.len()
            );
        }
        Command::CompareThresholds => {
            let protocols = protocols_or(cli, &[ProtocolKind::Ssf, ProtocolKind::Earq]);
            if !cli.seed.is_empty() {
                cfg.optimizer.eval_seeds = seeds.clone();
            }
            let sim = Simulator::new(cfg)?;
            let cmp = sim.compare_thresholding(&protocols, &sim.config().budget_grid())?;
            write_file(&cli.out, "thresholding.csv", |b| {
                write_metrics_csv(b, &cmp.result)
            })?;
            write_file(&cli.out, "thresholds.csv", |b| {
                write_thresholds_csv(b, &cmp.optimizations)
            })?;
            if cli.format == Format::CsvSvg {
                write_thresholding_svg(&cli.out, &cmp.result)?;
            }
            write_run_meta(
                &cli.out.join("run_meta.json"),
                &command_line(),
                sim.config(),
                &sim.config().optimizer.eval_seeds,
            )?;
            let failed = cmp.result.failed_cells().count();
            println!(
                "{} cells written to {}",
                cmp.result.cells.len() - failed,
                cli.out.display()
            );
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} cells failed")));
            }
        }
        Command::ValidateConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn protocols_or(cli: &Cli, default: &[ProtocolKind]) -> Vec<ProtocolKind> {
    if cli.protocol.is_empty() {
        default.to_vec()
    } else {
        cli.protocol.clone()
    }
}

fn single_protocol(cli: &Cli, default: ProtocolKind) -> Result<ProtocolKind, Failure> {
    match cli.protocol.as_slice() {
        [] => Ok(default),
        [p] => Ok(*p),
        _ => Err(Failure::Config(
            "--protocol: this command takes a single protocol".into(),
        )),
    }
}

fn check_budget(cfg: &SimConfig, budget: f64) -> Result<(), Failure> {
    if !(cfg.phy.p_min_dbm..=cfg.phy.p_max_dbm).contains(&budget) {
        return Err(Failure::Config(format!(
            "--budget: {budget} dBm is outside [{}, {}] dBm",
            cfg.phy.p_min_dbm, cfg.phy.p_max_dbm
        )));
    }
    Ok(())
}

/// `protocol,p_budget_dbm,method,thresholds` with thresholds ascending.
fn write_thresholds_csv(out: &mut Vec<u8>, outcomes: &[IptOutcome]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "p_budget_dbm",
        "method",
        "thresholds",
        "p_det_eval",
    ])?;
    for o in outcomes {
        for (method, values, f) in [
            ("map", &o.map, o.trace.initial_f),
            ("ipt", &o.ipt, o.trace.best_f),
        ] {
            let v: Vec<String> = values.iter().map(|x| x.to_string()).collect();
            w.write_record([
                o.protocol.to_string(),
                o.budget_dbm.to_string(),
                method.into(),
                v.join(" "),
                (-f).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
