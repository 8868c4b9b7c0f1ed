//! Workload benchmark CLI.
//!
//! Single run:
//!   deltatree-bench --ub 127 --threads 8 --update 10 --prefill 250000 \
//!       --range 500000 --rep 1000000 --seed 42 --csv out.csv
//!
//! Sweeps:
//!   deltatree-bench --sweep paper --csv out.csv
//!   deltatree-bench --sweep ub --csv out.csv

use std::fs::File;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use deltatree::bench::{
    self, paper_sweep_configs, run_workload, sweep, ub_sweep_configs, WorkloadConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "deltatree-bench",
    about = "Concurrent ordered-set workload harness"
)]
struct Args {
    /// Container capacity (2^H - 1).
    #[arg(long, default_value_t = 127)]
    ub: u64,
    /// Worker thread count.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Update percentage 0..=100.
    #[arg(long, default_value_t = 10)]
    update: u32,
    /// Keys inserted before timing.
    #[arg(long, default_value_t = 250_000)]
    prefill: u64,
    /// Key universe upper bound (keys are 1..=range).
    #[arg(long, default_value_t = 500_000)]
    range: u64,
    /// Total operations across all threads.
    #[arg(long, default_value_t = 1_000_000)]
    rep: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Buffer cells per container (defaults to the thread count).
    #[arg(long)]
    buffer: Option<usize>,
    /// Run a predefined sweep instead of a single config: "paper" or "ub".
    #[arg(long)]
    sweep: Option<String>,
    /// Cap on sweep thread counts (defaults to available cores, max 16).
    #[arg(long)]
    max_threads: Option<usize>,
    /// Write CSV rows here.
    #[arg(long)]
    csv: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> Result<(), Box<dyn std::error::Error>> {
    let base = WorkloadConfig {
        rep: args.rep,
        update_ratio: args.update,
        threads: args.threads,
        prefill: args.prefill,
        key_range: args.range,
        seed: args.seed,
        ub: args.ub,
        buffer_capacity: args.buffer,
    };
    match args.sweep.as_deref() {
        None => {
            let report = run_workload(&base)?;
            println!(
                "searches/s {:.0}  updates/s {:.0}  (attempted searches {}, successful updates {}/{})",
                report.search_ops_s,
                report.update_ops_s,
                report.searches_attempted,
                report.updates_successful,
                report.updates_attempted
            );
            println!(
                "maintenance: rebalances {} expands {} merges {}  final size {}",
                report.maintenance.rebalances,
                report.maintenance.expands,
                report.maintenance.merges,
                report.final_size
            );
            if let Some(path) = &args.csv {
                let rows = vec![bench::SweepRow {
                    u: base.update_ratio,
                    threads: base.threads,
                    prefill: base.prefill,
                    ub: base.ub,
                    search_ops_s: report.search_ops_s,
                    update_ops_s: report.update_ops_s,
                    rebalances: report.maintenance.rebalances,
                    expands: report.maintenance.expands,
                    merges: report.maintenance.merges,
                }];
                bench::write_sweep_csv(&rows, File::create(path)?)?;
            }
        }
        Some(kind) => {
            let cores = std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1);
            let max_threads = args.max_threads.unwrap_or(cores.min(16)).max(1);
            let cfgs = match kind {
                "paper" => paper_sweep_configs(&base, max_threads),
                "ub" => ub_sweep_configs(&base, max_threads),
                other => return Err(format!("unknown sweep {other:?} (paper|ub)").into()),
            };
            eprintln!("running {} configurations", cfgs.len());
            let rows = sweep(&cfgs)?;
            match &args.csv {
                Some(path) => bench::write_sweep_csv(&rows, File::create(path)?)?,
                None => bench::write_sweep_csv(&rows, std::io::stdout().lock())?,
            }
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}
