use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use levywave::cli::{emit_plot_data, run_command, Command, Selection};
use levywave::config::{load_config, ExperimentConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
  Simulate,
  VerifyKernels,
  VerifyMoments,
  Sobolev,
  All,
  /// Re-emit plot data from artifacts already in the output directory.
  PlotData,
}

/// Simulator and verification lab for the stochastic wave equation driven
/// by truncated Levy noise. Worker count: LEVYWAVE_WORKERS.
#[derive(Debug, Parser)]
#[command(name = "levywave", version)]
struct Args {
  #[arg(value_enum)]
  command: Cmd,
  /// JSON config; omitted fields take their defaults.
  #[arg(long)]
  config: Option<PathBuf>,
  /// Overrides run.seed.
  #[arg(long)]
  seed: Option<u64>,
  /// Overrides output.directory.
  #[arg(long)]
  out: Option<PathBuf>,
  /// plot-data only: comma-separated subset of profiles, fits, increments, moments.
  #[arg(long, value_delimiter = ',')]
  select: Option<Vec<String>>,
  /// Print the resolved config and exit.
  #[arg(long)]
  print_config: bool,
}

fn workers() -> Result<(), String> {
  let Ok(v) = std::env::var("LEVYWAVE_WORKERS") else {
    return Ok(());
  };
  let n: usize = v.parse().map_err(|_| format!("LEVYWAVE_WORKERS must be a positive integer, got `{v}`"))?;
  if n == 0 {
    return Err("LEVYWAVE_WORKERS must be positive".into());
  }
  rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn run(args: Args) -> Result<bool, String> {
  workers()?;
  let mut cfg = match &args.config {
    Some(p) => load_config(p).map_err(|e| format!("{}: {e}", p.display()))?,
    None => ExperimentConfig::default(),
  };
  if let Some(s) = args.seed {
    cfg.run.seed = s;
  }
  if args.print_config {
    println!("{}", cfg.to_json().map_err(|e| e.to_string())?);
    return Ok(true);
  }
  let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
  let cmd = match args.command {
    Cmd::Simulate => Command::Simulate,
    Cmd::VerifyKernels => Command::VerifyKernels,
    Cmd::VerifyMoments => Command::VerifyMoments,
    Cmd::Sobolev => Command::Sobolev,
    Cmd::All => Command::All,
    Cmd::PlotData => {
      let sel: Vec<Selection> = match &args.select {
        None => vec![Selection::Profiles, Selection::Fits, Selection::Increments, Selection::Moments],
        Some(v) => v
          .iter()
          .filter(|s| !s.is_empty())
          .map(|s| s.parse())
          .collect::<Result<_, _>>()
          .map_err(|e: levywave::Error| e.to_string())?,
      };
      for f in emit_plot_data(&out, &sel).map_err(|e| e.to_string())? {
        println!("{}", out.join(f).display());
      }
      return Ok(true);
    }
  };
  let summary = run_command(cmd, &cfg, &out).map_err(|e| e.to_string())?;
  for (exp, l) in summary.lines() {
    println!("[{}] {exp}: {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.label, l.detail);
  }
  println!("{} files written to {}", summary.files.len(), out.display());
  Ok(summary.pass())
}

fn main() -> ExitCode {
  match run(Args::parse()) {
    Ok(true) => ExitCode::SUCCESS,
    Ok(false) => ExitCode::from(1),
    Err(e) => {
      eprintln!("levywave: {e}");
      ExitCode::from(2)
    }
  }
}
