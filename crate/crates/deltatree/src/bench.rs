//! Synchrobench-style workload harness.
//!
//! A run prefills the tree with distinct random keys, then spawns workers
//! that each execute `rep / threads` operations: an update with
//! probability `u`% (insert or delete by coin flip), otherwise a search,
//! keys uniform in `(0, key_range]`. Update throughput counts successful
//! inserts and deletes; search throughput counts attempted searches.
//! Defaults are desk-scale (the reference methodology used rep = 1e8 and
//! a 5e6 key range); full-scale values remain selectable by flag.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::concurrent_tree::Universe;
use crate::delta_node::DeltaParams;
use crate::maintenance::MaintenanceSnapshot;
use crate::{Error, Result};

/// One benchmark configuration.
#[derive(Debug, Clone, Copy)]
pub struct WorkloadConfig {
    /// Total operation count across all threads.
    pub rep: u64,
    /// Update percentage u in 0..=100.
    pub update_ratio: u32,
    pub threads: usize,
    /// Distinct keys inserted before timing starts.
    pub prefill: u64,
    /// Keys are drawn uniformly from `1..=key_range`.
    pub key_range: u64,
    pub seed: u64,
    /// Container capacity, `2^H - 1`.
    pub ub: u64,
    /// Buffer cells per container; defaults to the thread count.
    pub buffer_capacity: Option<usize>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rep: 1_000_000,
            update_ratio: 10,
            threads: 1,
            prefill: 250_000,
            key_range: 500_000,
            seed: 42,
            ub: 127,
            buffer_capacity: None,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.update_ratio > 100 {
            return Err(Error::InvalidWorkload(format!(
                "update ratio {} > 100",
                self.update_ratio
            )));
        }
        if self.prefill >= self.key_range {
            return Err(Error::InvalidWorkload(format!(
                "prefill {} must be below key range {}",
                self.prefill, self.key_range
            )));
        }
        if self.threads == 0 {
            return Err(Error::InvalidWorkload("threads must be >= 1".into()));
        }
        if self.key_range == 0 {
            return Err(Error::InvalidWorkload("key range must be >= 1".into()));
        }
        Ok(())
    }

    fn buffer_cells(&self) -> usize {
        self.buffer_capacity.unwrap_or(self.threads).max(1)
    }
}

/// One generated operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenOp {
    Insert(u64),
    Delete(u64),
    Search(u64),
}

/// Deterministic per-thread operation stream: the same (seed, tid) always
/// yields the same sequence.
pub fn op_stream(cfg: &WorkloadConfig, tid: usize) -> impl Iterator<Item = GenOp> {
    let mut rng = thread_rng(cfg.seed, tid);
    let update_ratio = cfg.update_ratio;
    let key_range = cfg.key_range;
    let count = per_thread_ops(cfg, tid);
    (0..count).map(move |_| {
        let roll = rng.random_range(0..100u32);
        let key = rng.random_range(1..=key_range);
        if roll < update_ratio {
            if rng.random_bool(0.5) {
                GenOp::Insert(key)
            } else {
                GenOp::Delete(key)
            }
        } else {
            GenOp::Search(key)
        }
    })
}

fn thread_rng(seed: u64, tid: usize) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (tid as u64).wrapping_add(1),
    )
}

fn per_thread_ops(cfg: &WorkloadConfig, tid: usize) -> u64 {
    let base = cfg.rep / cfg.threads as u64;
    let extra = cfg.rep % cfg.threads as u64;
    base + u64::from((tid as u64) < extra)
}

/// Aggregated result of one run.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// Attempted searches per second of wall time.
    pub search_ops_s: f64,
    /// Successful inserts+deletes per second of wall time.
    pub update_ops_s: f64,
    pub searches_attempted: u64,
    pub updates_attempted: u64,
    pub updates_successful: u64,
    pub per_thread_secs: Vec<f64>,
    pub wall_secs: f64,
    pub maintenance: MaintenanceSnapshot,
    pub final_size: u64,
}

/// Build a tree per the config and drive the measured workload.
pub fn run_workload(cfg: &WorkloadConfig) -> Result<RunReport> {
    cfg.validate()?;
    let params = DeltaParams::new(cfg.ub, cfg.buffer_cells())?;
    let tree = Universe::new(params)?;
    prefill(&tree, cfg);

    let searches = AtomicU64::new(0);
    let upd_attempted = AtomicU64::new(0);
    let upd_success = AtomicU64::new(0);
    let barrier = Barrier::new(cfg.threads + 1);
    let mut per_thread_secs = vec![0.0f64; cfg.threads];

    let wall = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.threads)
            .map(|tid| {
                let tree = &tree;
                let barrier = &barrier;
                let searches = &searches;
                let upd_attempted = &upd_attempted;
                let upd_success = &upd_success;
                s.spawn(move || {
                    let ops: Vec<GenOp> = op_stream(cfg, tid).collect();
                    barrier.wait();
                    let start = Instant::now();
                    let mut srch = 0u64;
                    let mut att = 0u64;
                    let mut succ = 0u64;
                    for op in ops {
                        match op {
                            GenOp::Insert(k) => {
                                att += 1;
                                succ += u64::from(tree.insert(k));
                            }
                            GenOp::Delete(k) => {
                                att += 1;
                                succ += u64::from(tree.delete(k));
                            }
                            GenOp::Search(k) => {
                                srch += 1;
                                let _ = tree.search(k);
                            }
                        }
                    }
                    let secs = start.elapsed().as_secs_f64();
                    searches.fetch_add(srch, Ordering::Relaxed);
                    upd_attempted.fetch_add(att, Ordering::Relaxed);
                    upd_success.fetch_add(succ, Ordering::Relaxed);
                    secs
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        for (tid, h) in handles.into_iter().enumerate() {
            per_thread_secs[tid] = h.join().expect("worker panicked");
        }
        start.elapsed().as_secs_f64()
    });

    let searches_attempted = searches.load(Ordering::Relaxed);
    let updates_successful = upd_success.load(Ordering::Relaxed);
    Ok(RunReport {
        search_ops_s: searches_attempted as f64 / wall.max(1e-9),
        update_ops_s: updates_successful as f64 / wall.max(1e-9),
        searches_attempted,
        updates_attempted: upd_attempted.load(Ordering::Relaxed),
        updates_successful,
        per_thread_secs,
        wall_secs: wall,
        maintenance: tree.stats(),
        final_size: tree.len_estimate(),
    })
}

fn prefill(tree: &Universe, cfg: &WorkloadConfig) {
    let mut rng = thread_rng(cfg.seed, usize::MAX);
    let mut inserted = 0;
    while inserted < cfg.prefill {
        let k = rng.random_range(1..=cfg.key_range);
        if tree.insert(k) {
            inserted += 1;
        }
    }
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub u: u32,
    pub threads: usize,
    pub prefill: u64,
    pub ub: u64,
    pub search_ops_s: f64,
    pub update_ops_s: f64,
    pub rebalances: u64,
    pub expands: u64,
    pub merges: u64,
}

/// Run each config in order, one row per run.
pub fn sweep(cfgs: &[WorkloadConfig]) -> Result<Vec<SweepRow>> {
    if cfgs.is_empty() {
        return Err(Error::InvalidWorkload("empty sweep".into()));
    }
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let report = run_workload(cfg)?;
        rows.push(SweepRow {
            u: cfg.update_ratio,
            threads: cfg.threads,
            prefill: cfg.prefill,
            ub: cfg.ub,
            search_ops_s: report.search_ops_s,
            update_ops_s: report.update_ops_s,
            rebalances: report.maintenance.rebalances,
            expands: report.maintenance.expands,
            merges: report.maintenance.merges,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "u,threads,prefill,UB,search_ops_s,update_ops_s,rebalances,expands,merges"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.2},{:.2},{},{},{}",
            r.u,
            r.threads,
            r.prefill,
            r.ub,
            r.search_ops_s,
            r.update_ops_s,
            r.rebalances,
            r.expands,
            r.merges
        )?;
    }
    Ok(())
}

/// The update-ratio set used throughout the experiments.
pub const UPDATE_RATIOS: [u32; 7] = [0, 1, 3, 5, 10, 20, 100];

/// Small and (desk-scaled) big prefill setups.
pub const PREFILLS: [u64; 2] = [1023, 250_000];

/// Container capacity sweep.
pub const UB_SWEEP: [u64; 3] = [127, 1023, 4095];

/// The standard sweep: update ratios crossed with thread counts 1..=cores
/// at both prefill sizes.
pub fn paper_sweep_configs(base: &WorkloadConfig, max_threads: usize) -> Vec<WorkloadConfig> {
    let mut cfgs = Vec::new();
    for &prefill in &PREFILLS {
        for &u in &UPDATE_RATIOS {
            for threads in 1..=max_threads {
                cfgs.push(WorkloadConfig {
                    update_ratio: u,
                    threads,
                    prefill,
                    ..*base
                });
            }
        }
    }
    cfgs
}

/// Capacity sweep at a fixed update ratio.
pub fn ub_sweep_configs(base: &WorkloadConfig, max_threads: usize) -> Vec<WorkloadConfig> {
    let mut cfgs = Vec::new();
    for &ub in &UB_SWEEP {
        for threads in 1..=max_threads {
            cfgs.push(WorkloadConfig {
                ub,
                threads,
                ..*base
            });
        }
    }
    cfgs
}
