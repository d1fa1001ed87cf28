//! `odewave`: configuration-driven front end to `odewave-core`.
//!
//! Exit status: 0 success, 2 invalid input or configuration, 3 a standing
//! assumption fails, 4 numerical blow-up, 5 verification failure, 1 I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use odewave_core::config::{run, write_sweep_csv, RunConfig, SweepConfig, SweepRow};
use odewave_core::design::check_assumptions;
use odewave_core::kernel::{compute_kernels, kernel_residual, residual_floor};
use odewave_core::verify::{run_all, Fault, VerifyOptions};
use odewave_core::{Error, GainSet};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "odewave", version, about = "Boundary control of ODE-wave cascades with disturbance rejection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions and synthesize the gains.
    Design(RunArgs),
    /// Export the sampled kernels and their residuals.
    Kernels(RunArgs),
    /// Run one scenario and write its trace and report.
    Simulate(RunArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
    /// Run a cartesian parameter sweep.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Number of grid intervals.
    #[arg(long)]
    grid: Option<usize>,
    /// Simulated time.
    #[arg(long)]
    horizon: Option<f64>,
    /// Seed for random initial profiles.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(n) = self.grid {
            cfg.grid = n;
        }
        if let Some(t) = self.horizon {
            cfg.horizon = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`, then `odewave-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    /// Build the kernels from -Q.
    FlipQ,
}

#[derive(Args)]
struct VerifyArgs {
    /// Write `verify.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// dt / dx for every simulation in the suite.
    #[arg(long, default_value_t = 0.5)]
    dt_factor: f64,
    /// Break a formula on purpose to check that the suite notices.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration (JSON): a `base` run plus parameter ranges.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent runs; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

type CliResult = Result<ExitCode, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(&a),
        Command::Kernels(a) => kernels(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Verify(a) => verify(&a),
        Command::Sweep(a) => sweep(&a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code() as u8)
    })
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let out = output_dir(args.out.as_ref(), cfg.output_dir.as_ref());
    Ok((cfg, out))
}

fn output_dir(flag: Option<&PathBuf>, from_config: Option<&PathBuf>) -> PathBuf {
    flag.or(from_config).cloned().unwrap_or_else(|| PathBuf::from("odewave-out"))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `gains.json`: `k` as a vector, `h` as row-major rows, poles as `[re, im]`.
#[derive(Serialize)]
struct GainsFile {
    k: Vec<f64>,
    h: Vec<Vec<f64>>,
    poles_k: Vec<[f64; 2]>,
    poles_h: Vec<[f64; 2]>,
}

impl From<&GainSet> for GainsFile {
    fn from(g: &GainSet) -> Self {
        Self {
            k: g.k.iter().copied().collect(),
            h: g.h.row_iter().map(|r| r.iter().copied().collect()).collect(),
            poles_k: g.poles_k.iter().map(|z| [z.re, z.im]).collect(),
            poles_h: g.poles_h.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

fn design(args: &RunArgs) -> CliResult {
    let (cfg, out) = load(args)?;
    let report = check_assumptions(&cfg.plant)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("assumptions.json"), &report)?;
    if !report.all_ok() {
        return Err(Error::DesignInfeasible(report.failures().join("; ")));
    }
    let ks = compute_kernels(&cfg.plant, cfg.grid)?;
    let gains = cfg.gains.synthesize(&cfg.plant, &ks)?;
    write_json(&out.join("gains.json"), &GainsFile::from(&gains))?;
    println!("assumptions hold; K = {:?}", gains.k.as_slice());
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct KernelSummary {
    grid: usize,
    q: Vec<f64>,
    l2_at_1: Vec<f64>,
    residual: odewave_core::kernel::KernelResidual,
    rounding_floor: odewave_core::kernel::KernelResidual,
}

fn kernels(args: &RunArgs) -> CliResult {
    let (cfg, out) = load(args)?;
    let ks = compute_kernels(&cfg.plant, cfg.grid)?;
    let summary = KernelSummary {
        grid: cfg.grid,
        q: ks.q.iter().copied().collect(),
        l2_at_1: ks.l2_at_1.iter().copied().collect(),
        residual: kernel_residual(&ks, &cfg.plant),
        rounding_floor: residual_floor(&ks, &cfg.plant),
    };
    fs::create_dir_all(&out)?;
    ks.write_csv(fs::File::create(out.join("kernels.csv"))?)?;
    write_json(&out.join("kernels.json"), &summary)?;
    println!("max kernel residual {:.3e} at N = {}", summary.residual.max(), cfg.grid);
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: &RunArgs) -> CliResult {
    let (cfg, out) = load(args)?;
    match run(&cfg) {
        Ok(result) => {
            fs::create_dir_all(&out)?;
            result.trace.write_csv(fs::File::create(out.join("trace.csv"))?)?;
            write_json(&out.join("report.json"), &result.report)?;
            write_json(&out.join("gains.json"), &GainsFile::from(&result.gains))?;
            for (name, fit) in &result.report.fits {
                if let Some(f) = fit {
                    println!("{name:>10}: gamma {:.4}, residual {:.3}", f.gamma, f.residual);
                }
            }
            if let Some(r) = result.report.tracking.and_then(|t| t.ratio) {
                println!("tracking ratio {r:.3e}");
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::BlowUp { t, what, partial }) => {
            fs::create_dir_all(&out)?;
            partial.write_csv(fs::File::create(out.join("trace.csv"))?)?;
            eprintln!("partial trace ({} rows) written to {}", partial.rows.len(), out.join("trace.csv").display());
            Err(Error::BlowUp { t, what, partial })
        }
        Err(e) => Err(e),
    }
}

fn verify(args: &VerifyArgs) -> CliResult {
    let opts = VerifyOptions {
        dt_factor: args.dt_factor,
        fault: args.inject_fault.map(|f| match f {
            FaultArg::FlipQ => Fault::FlipQ,
        }),
    };
    let outcomes = run_all(&opts)?;
    for o in &outcomes {
        println!("{o}");
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("verify.json"), &outcomes)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(Error::Verification(format!("{failed} criteria failed")));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &SweepArgs) -> CliResult {
    let mut sweep = SweepConfig::from_path(&args.config)?;
    args.overrides.apply(&mut sweep.base);
    sweep.base.validate()?;
    let out = output_dir(args.out.as_ref(), sweep.base.output_dir.as_ref());
    let points = sweep.expand();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", args.jobs.unwrap_or(0))))?;
    fs::create_dir_all(&out)?;
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .into_par_iter()
            .map(|(point, cfg)| {
                let dir = out.join(format!("run_{:04}", point.index));
                let result = run(&cfg);
                let written = write_run(&dir, &cfg, &result);
                let mut row = SweepRow::from_result(point, &result);
                if let Err(e) = written {
                    row.message = format!("{} (writing outputs failed: {e})", row.message);
                }
                row
            })
            .collect()
    });
    write_sweep_csv(&rows, fs::File::create(out.join("summary.csv"))?)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} runs, {failed} flagged; wrote {}", rows.len(), out.join("summary.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn write_run(dir: &Path, cfg: &RunConfig, result: &Result<odewave_core::RunOutput, Error>) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    match result {
        Ok(r) => {
            r.trace.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
            write_json(&dir.join("report.json"), &r.report)?;
        }
        Err(Error::BlowUp { partial, .. }) => partial.write_csv(fs::File::create(dir.join("trace.csv"))?)?,
        Err(_) => {}
    }
    Ok(())
}
