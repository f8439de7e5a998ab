use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sbmre::adaptive::AdaptiveConfig;
use sbmre::harness::{
    export, export_trace, parse_algorithms, render, render_trace, run_adaptive_experiment, run_sweep, Algorithm,
    ExperimentSpec, ExportFormat, Sweep,
};
use sbmre::model::SystemConfig;
use sbmre::{Error, Result};

#[derive(Parser)]
#[command(name = "sbmre", version, about = "Semi-blind MIMO equalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SER versus SNR.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        /// SNR grid in dB as `start:stop:step`.
        #[arg(long, default_value = "0:15:5")]
        snr: String,
    },
    /// SER versus number of pilots.
    SweepPilots {
        #[command(flatten)]
        common: Common,
        /// Pilot grid as `start:stop:step`.
        #[arg(long, default_value = "10:64:6")]
        np: String,
    },
    /// SER versus the blind weight λ.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        /// λ grid as `start:stop:step`.
        #[arg(long, default_value = "0:0.5:0.05")]
        lambda: String,
    },
    /// Adaptive pilot-count control for a single algorithm.
    Adaptive {
        #[command(flatten)]
        common: Common,
        /// Target SER.
        #[arg(long, default_value_t = 1e-4)]
        target: f64,
        #[arg(long, default_value_t = 2.0)]
        delta1: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Convergence band on |log10(SER/target)|.
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        /// Smallest pilot count; defaults to N.
        #[arg(long)]
        np_min: Option<usize>,
        /// Largest pilot count; defaults to 3/4 of the frame.
        #[arg(long)]
        np_max: Option<usize>,
    },
    /// Reference scenario at 5, 10 and 15 dB, printed as a table.
    Demo {
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// JSON system configuration; the reference scenario if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    /// Comma separated list, e.g. `ZF,MMSE,SBMRE`.
    #[arg(long, default_value = "ZF,MMSE,BMRE,BMRE_RC,SBMRE,SBMRE_RC")]
    algos: String,
    /// Master seed; the configuration's seed if omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let base = match &self.config {
            Some(path) => SystemConfig::load(path)?,
            None => SystemConfig::reference(),
        };
        let seed = self.seed.unwrap_or(base.seed);
        let algorithms = parse_algorithms(&self.algos)?;
        Ok(ExperimentSpec::new(base, algorithms, self.frames, seed))
    }
}

/// Parses `a:b:step` (inclusive of `b` up to rounding) or a single value.
fn parse_range(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad range {text:?}, expected start:stop:step"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [v] => Ok(vec![*v]),
        [a, b, step] => {
            if !(step.is_finite() && *step > 0.0 && a.is_finite() && b.is_finite() && a <= b) {
                return Err(bad());
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

fn parse_int_range(text: &str) -> Result<Vec<usize>> {
    parse_range(text)?
        .into_iter()
        .map(|v| {
            let r = v.round();
            if r < 0.0 || (v - r).abs() > 1e-9 {
                Err(Error::Config(format!(
                    "pilot counts must be non-negative integers, got {v}"
                )))
            } else {
                Ok(r as usize)
            }
        })
        .collect()
}

fn emit(text: String, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep(common: &Common, sweep: Sweep) -> Result<()> {
    let spec = common.spec()?.with_sweep(sweep);
    let result = run_sweep(&spec)?;
    match &common.out {
        Some(path) => export(&result, path, common.format.into()),
        None => emit(render(&result, common.format.into())?, &None),
    }
}

fn demo(frames: usize, seed: u64) -> Result<()> {
    let snrs = vec![5.0, 10.0, 15.0];
    let spec = ExperimentSpec::new(SystemConfig::reference(), Algorithm::ALL.to_vec(), frames, seed)
        .with_sweep(Sweep::Snr(snrs.clone()));
    let result = run_sweep(&spec)?;
    print!("{:<10}", "algo");
    for s in &snrs {
        print!("{:>14}", format!("{s} dB"));
    }
    println!();
    for algo in Algorithm::ALL {
        print!("{:<10}", algo.name());
        for i in 0..snrs.len() {
            let row = result.row(algo, i).expect("every algorithm has a row per point");
            print!("{:>14.3e}", row.ser);
        }
        println!();
    }
    println!(
        "{} frames per point, seed {}, {:.1} s",
        frames, seed, result.metadata.wall_time_s
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SweepSnr { common, snr } => sweep(&common, Sweep::Snr(parse_range(&snr)?)),
        Command::SweepPilots { common, np } => sweep(&common, Sweep::Pilots(parse_int_range(&np)?)),
        Command::SweepLambda { common, lambda } => sweep(&common, Sweep::Lambda(parse_range(&lambda)?)),
        Command::Adaptive {
            common,
            target,
            delta1,
            max_iter,
            tol,
            np_min,
            np_max,
        } => {
            let spec = common.spec()?;
            let acfg = AdaptiveConfig {
                target,
                delta1,
                max_iter,
                tol,
                np_min: np_min.unwrap_or(spec.base.window),
                np_max: np_max.unwrap_or(spec.base.frame_len * 3 / 4),
            };
            let trace = run_adaptive_experiment(&spec, &acfg)?;
            if !trace.converged {
                eprintln!("warning: not converged after {} iterations", trace.rows.len());
            }
            match &common.out {
                Some(path) => export_trace(&trace, path, common.format.into()),
                None => emit(render_trace(&trace, common.format.into())?, &None),
            }
        }
        Command::Demo { frames, seed } => demo(frames, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
