use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use persuasion_core::config::InstanceConfig;
use persuasion_core::info::{classify_structure, partition_summary, write_partition_csv};
use persuasion_core::mechanism::MechanismDoc;
use persuasion_core::revenue::{
    best_constant_price, default_search_grids, myerson_baseline, revenue_direct, simulate, write_comparison_csv,
    ComparisonRow,
};
use persuasion_core::verify::check_feasibility;
use persuasion_core::{build_optimal_mechanism, Error, ProblemInstance, ThresholdMechanism};

const EXIT_CONFIG: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "persuasion", version, about = "Optimal selling with quality disclosure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Instance file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Grid size, overriding the config.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct WithMechanism {
    #[command(flatten)]
    common: Common,
    /// Mechanism written by `solve`; the optimal one is rebuilt if omitted.
    #[arg(long)]
    mechanism: Option<PathBuf>,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the optimal mechanism and write it to a directory.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo revenue and buyer utilities.
    Simulate {
        #[command(flatten)]
        args: WithMechanism,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Feasibility certificates; exits with 4 if any tolerance is exceeded.
    Verify {
        #[command(flatten)]
        args: WithMechanism,
        /// Tolerance for quadrature-level identities, overriding the config.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Revenue of the optimal mechanism against the baselines, as CSV.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add wall-clock runtimes (makes the output non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Acceptance sets and posterior means per winner type, as CSV.
    Info {
        #[command(flatten)]
        args: WithMechanism,
        /// Types per buyer.
        #[arg(long, default_value_t = 101)]
        types: usize,
    },
}

enum Failure {
    Exit(u8, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Validation(_) | Error::Json(_) => EXIT_CONFIG,
            Error::Assumption(_) => EXIT_ASSUMPTION,
            _ => 1,
        };
        Failure::Exit(code, e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Exit(1, e.to_string())
    }
}

fn load(common: &Common) -> Result<(InstanceConfig, ProblemInstance), Failure> {
    let cfg = InstanceConfig::load(&common.config)?;
    let inst = cfg.build(common.grid)?;
    Ok((cfg, inst))
}

fn mechanism(inst: &ProblemInstance, path: Option<&Path>) -> Result<ThresholdMechanism, Failure> {
    match path {
        None => Ok(build_optimal_mechanism(inst)?),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| Failure::Exit(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            let doc: MechanismDoc =
                serde_json::from_str(&text).map_err(|e| Failure::Exit(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            ThresholdMechanism::from_doc(inst, &doc)
                .map_err(|e| Failure::Exit(EXIT_CONFIG, format!("{}: {e}", p.display())))
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn summary(cfg: &InstanceConfig, m: &ThresholdMechanism, revenue: f64) -> String {
    let mut s = String::new();
    let inst = m.instance();
    let _ = writeln!(s, "instance: {}", cfg.name());
    let _ = writeln!(s, "buyers: {}", inst.n());
    let _ = writeln!(s, "valuation: {}", if m.is_linear() { "linear" } else { "general" });
    let _ = writeln!(s, "grid: {}", inst.buyers[0].len());
    let _ = writeln!(s, "xi structure: {}", classify_structure(&inst.quality));
    let _ = writeln!(s, "expected reserve: {:.6}", inst.quality.expected_reserve());
    let _ = writeln!(s, "revenue: {revenue:.6}");
    let _ = writeln!(s, "degenerate: {}", m.is_degenerate());
    for (i, c) in m.curves().iter().enumerate() {
        let _ = writeln!(s, "\nbuyer {i}");
        let _ = writeln!(s, "  regular: {}", c.regular);
        match m.cutoff_type(i) {
            Some(t) => {
                let _ = writeln!(s, "  cutoff type: {t:.6}");
            }
            None => {
                let _ = writeln!(s, "  cutoff type: none (never asked)");
            }
        }
        let plateaus = c.plateaus();
        let _ = writeln!(s, "  ironed intervals: {}", plateaus.len());
        for (lo, hi, v) in plateaus {
            let _ = writeln!(s, "    [{lo:.6}, {hi:.6}] phi_bar = {v:.6}");
        }
    }
    s
}

fn solve(common: &Common, out: &Path) -> Result<(), Failure> {
    let (cfg, inst) = load(common)?;
    let m = build_optimal_mechanism(&inst)?;
    let revenue = revenue_direct(&m)?;
    let json = m.to_json()?;
    let mut csvs = Vec::with_capacity(m.n());
    for i in 0..m.n() {
        let mut buf = Vec::new();
        m.write_buyer_csv(i, &mut buf)?;
        csvs.push(buf);
    }
    let text = summary(&cfg, &m, revenue);
    fs::create_dir_all(out)?;
    fs::write(out.join("mechanism.json"), json)?;
    for (i, buf) in csvs.iter().enumerate() {
        fs::write(out.join(format!("buyer_{i}.csv")), buf)?;
    }
    fs::write(out.join("summary.txt"), &text)?;
    info!("wrote {} buyer curves to {}", m.n(), out.display());
    print!("{text}");
    Ok(())
}

fn compare(common: &Common, out: Option<&Path>, timing: bool) -> Result<(), Failure> {
    let (cfg, inst) = load(common)?;
    let name = cfg.name().to_string();
    let mut rows = Vec::new();
    let mut push = |method: &str, revenue: f64, started: Instant| {
        rows.push(ComparisonRow {
            instance: name.clone(),
            method: method.into(),
            revenue,
            stderr: None,
            runtime_ms: timing.then(|| started.elapsed().as_secs_f64() * 1e3),
        });
    };
    let started = Instant::now();
    let m = build_optimal_mechanism(&inst)?;
    push("optimal", revenue_direct(&m)?, started);
    if inst.valuation.is_linear() && inst.quality.is_constant(1e-12) {
        let started = Instant::now();
        push("myerson", myerson_baseline(&inst)?.revenue, started);
    }
    let started = Instant::now();
    let (prices, cutoffs) = default_search_grids(&inst);
    push("constant_price", best_constant_price(&inst, &prices, &cutoffs)?.revenue, started);
    let mut buf = Vec::new();
    write_comparison_csv(&rows, &mut buf)?;
    emit(out, &buf)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { common, out } => solve(&common, &out),
        Command::Simulate { args, samples, seed } => {
            let (cfg, inst) = load(&args.common)?;
            let m = mechanism(&inst, args.mechanism.as_deref())?;
            let report = simulate(&m, samples, seed.unwrap_or(cfg.seed()))?;
            let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            json.push('\n');
            emit(args.out.as_deref(), json.as_bytes())
        }
        Command::Verify { args, tol } => {
            let (cfg, inst) = load(&args.common)?;
            let m = mechanism(&inst, args.mechanism.as_deref())?;
            let mut tolerances = cfg.tolerances();
            if let Some(t) = tol {
                tolerances.quadrature = t;
            }
            let report = check_feasibility(&m);
            let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            json.push('\n');
            emit(args.out.as_deref(), json.as_bytes())?;
            let failures = report.failures(&tolerances);
            if failures.is_empty() {
                Ok(())
            } else {
                Err(Failure::Exit(EXIT_VERIFY, format!("verification failed: {}", failures.join(", "))))
            }
        }
        Command::Compare { common, out, timing } => compare(&common, out.as_deref(), timing),
        Command::Info { args, types } => {
            let (_, inst) = load(&args.common)?;
            let m = mechanism(&inst, args.mechanism.as_deref())?;
            let mut buf = Vec::new();
            write_partition_csv(&partition_summary(&m, types), &mut buf)?;
            emit(args.out.as_deref(), &buf)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Exit(code, msg)) => {
            error!("{msg}");
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
