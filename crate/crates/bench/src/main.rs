use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amis_bench::config::{env_seed_base, ExperimentConfig};
use amis_bench::experiments::{
    counterexample, fig2, fig3, run_config, timing, CounterexampleOptions, CurveOptions,
    TimingOptions,
};
use amis_bench::output::{write_csv_file, write_json};
use amis_bench::BenchError;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "amis-bench", version, about = "AMIS benchmarks for controlled diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Comma-separated seeds; overrides the config and --runs.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Number of runs (consecutive seeds from AMIS_SEED, default 0).
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write zeros instead of measured phase times.
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// ESS curves with the constant basis for four re-weighting schemes.
    Fig2 {
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        /// Batch size of the non-mixing scheme.
        #[arg(long, default_value_t = 20)]
        nonmixing_batch: usize,
        /// Also run flat re-weighting without discarding.
        #[arg(long)]
        include_flat: bool,
    },
    /// ESS curves with the affine basis for balance and optimized discarding.
    Fig3 {
        #[arg(long, default_value_t = 300)]
        iterations: usize,
    },
    /// Wall time at a fixed sample budget for several iteration counts.
    Timing {
        #[arg(long, default_value_t = 200)]
        total_samples: usize,
        #[arg(long, value_delimiter = ',', default_value = "10,25,50,100,200")]
        iterations: Vec<usize>,
    },
    /// Forced proposals u_k = k with flat weights on the one-step problem.
    Counterexample {
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
}

impl Common {
    fn seeds(&self, default_runs: usize) -> Result<Vec<u64>, BenchError> {
        if let Some(s) = &self.seeds {
            if s.is_empty() {
                return Err(BenchError::Config("--seeds must not be empty".into()));
            }
            return Ok(s.clone());
        }
        let base = env_seed_base()?;
        let n = self.runs.unwrap_or(default_runs) as u64;
        if n == 0 {
            return Err(BenchError::Config("--runs must be at least 1".into()));
        }
        Ok((base..base + n).collect())
    }
}

fn written(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    let common = &cli.common;
    let timing_on = !common.no_timing;
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::from_path(config)?;
            if common.no_timing {
                cfg.record_timing = false;
            }
            let seeds = if common.seeds.is_some() || common.runs.is_some() {
                common.seeds(1)?
            } else {
                cfg.resolve_seeds()?
            };
            let rows = run_config(&cfg, &seeds)?;
            let path = cfg
                .output
                .clone()
                .unwrap_or_else(|| common.out.join(format!("{}.csv", cfg.experiment)));
            write_csv_file(&path, &rows)?;
            written(&path);
        }
        Command::Fig2 {
            iterations,
            nonmixing_batch,
            include_flat,
        } => {
            let opts = CurveOptions {
                seeds: common.seeds(100)?,
                iterations: *iterations,
                nonmixing_batch: *nonmixing_batch,
                include_flat: *include_flat,
                record_timing: timing_on,
                ..CurveOptions::default()
            };
            check_curve(&opts)?;
            let (rows, summary) = fig2(&opts)?;
            let csv = common.out.join("fig2.csv");
            let json = common.out.join("fig2_summary.json");
            write_csv_file(&csv, &rows)?;
            write_json(&json, &summary)?;
            written(&csv);
            written(&json);
        }
        Command::Fig3 { iterations } => {
            let opts = CurveOptions {
                seeds: common.seeds(100)?,
                iterations: *iterations,
                record_timing: timing_on,
                ..CurveOptions::default()
            };
            check_curve(&opts)?;
            let (rows, summary) = fig3(&opts)?;
            let csv = common.out.join("fig3.csv");
            let json = common.out.join("fig3_summary.json");
            write_csv_file(&csv, &rows)?;
            write_json(&json, &summary)?;
            written(&csv);
            written(&json);
        }
        Command::Timing {
            total_samples,
            iterations,
        } => {
            let opts = TimingOptions {
                seeds: common.seeds(100)?,
                total_samples: *total_samples,
                iterations: iterations.clone(),
                ..TimingOptions::default()
            };
            if opts.iterations.is_empty() {
                return Err(BenchError::Config("--iterations must not be empty".into()));
            }
            let table = timing(&opts)?;
            let json = common.out.join("timing.json");
            write_json(&json, &table)?;
            written(&json);
        }
        Command::Counterexample { iterations } => {
            if *iterations == 0 {
                return Err(BenchError::Config("--iterations must be at least 1".into()));
            }
            let opts = CounterexampleOptions {
                seeds: common.seeds(100)?,
                iterations: *iterations,
                record_timing: timing_on,
            };
            let (rows, summary) = counterexample(&opts)?;
            let csv = common.out.join("counterexample.csv");
            let json = common.out.join("counterexample_summary.json");
            write_csv_file(&csv, &rows)?;
            write_json(&json, &summary)?;
            written(&csv);
            written(&json);
        }
    }
    Ok(())
}

fn check_curve(opts: &CurveOptions) -> Result<(), BenchError> {
    if opts.iterations < 2 || opts.nonmixing_batch == 0 {
        return Err(BenchError::Config(
            "curves need at least 2 iterations and a positive batch size".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
