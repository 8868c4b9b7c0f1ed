//! Memory-transfer simulator CLI: builds a tree of random keys, then
//! counts cold-cache block transfers for random searches across a sweep
//! of block sizes.
//!
//!   deltatree-sim --n 1048576 --ub 127 --blocks 4,8,16,32,64,127 \
//!       --csv transfers.csv

use std::fs::File;
use std::process::ExitCode;

use clap::Parser;
use deltatree::cache_sim::{snapshot_memory_map, sweep_transfers, write_sweep_csv};
use deltatree::{DeltaParams, Universe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Parser, Debug)]
#[command(name = "deltatree-sim", about = "Cold-cache search transfer simulator")]
struct Args {
    /// Number of distinct keys to build the tree with.
    #[arg(long, default_value_t = 1_048_576)]
    n: u64,
    /// Container capacity (2^H - 1).
    #[arg(long, default_value_t = 127)]
    ub: u64,
    /// Comma-separated block sizes in nodes.
    #[arg(long, default_value = "4,8,16,32,64,127", value_delimiter = ',')]
    blocks: Vec<u64>,
    /// Search keys sampled per block size.
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write CSV here (stdout otherwise).
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
    let params = DeltaParams::new(args.ub, 4)?;
    let tree = Universe::new(params)?;
    let key_range = args.n.saturating_mul(4).max(16);
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let mut inserted = 0u64;
    while inserted < args.n {
        if tree.insert(rng.random_range(1..=key_range)) {
            inserted += 1;
        }
    }
    eprintln!(
        "built tree: {} keys, height high-water {}, {} maintenance ops",
        inserted,
        tree.height_hwm(),
        tree.stats().rebalances + tree.stats().expands + tree.stats().merges,
    );
    let map = snapshot_memory_map(&tree);
    let keys: Vec<u64> = (0..args.samples)
        .map(|_| rng.random_range(1..=key_range))
        .collect();
    let rows = sweep_transfers(&tree, &map, &args.blocks, &keys, args.n);
    match &args.csv {
        Some(path) => write_sweep_csv(&rows, File::create(path)?)?,
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}
