//! Cold-cache memory-transfer accounting.
//!
//! Assigns every live container a synthetic contiguous address range,
//! replays search descents over that map, and counts distinct B-aligned
//! blocks touched — the transfer count of the ideal-cache model with an
//! empty cache. No capacity or replacement policy is modeled. Buffer
//! cells are not address-mapped: snapshots are taken quiescent, where
//! sweep trees keep their buffers empty.
//!
//! Block sizes appear in two units: `B_nodes` (slots, as in the analysis)
//! and `B_bytes = B_nodes * node_size`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::Ordering;

use crate::concurrent_tree::Universe;
use crate::delta_node::{decode_link, DeltaNode, Link, EMPTY, MAX_KEY};
use crate::{Error, Result};

/// Bytes per slot assumed by the simulator.
pub const DEFAULT_NODE_SIZE: u64 = 32;

/// One container's synthetic allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub id: u64,
    pub base: u64,
    pub extent: u64,
}

/// Synthetic address layout of all live containers.
#[derive(Debug)]
pub struct MemoryMap {
    allocations: Vec<Allocation>,
    base_by_id: HashMap<u64, u64>,
    node_size: u64,
}

impl MemoryMap {
    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn node_size(&self) -> u64 {
        self.node_size
    }

    fn base_of(&self, id: u64) -> u64 {
        self.base_by_id[&id]
    }
}

/// Address layout of every container reachable from the root, with stable
/// synthetic bases: allocation order times extent. Quiescent use only.
pub fn snapshot_memory_map(u: &Universe) -> MemoryMap {
    snapshot_memory_map_with(u, DEFAULT_NODE_SIZE)
}

pub fn snapshot_memory_map_with(u: &Universe, node_size: u64) -> MemoryMap {
    let mut allocations = Vec::new();
    u.visit_nodes(&mut |dn: &DeltaNode| {
        let extent = dn.slot_count() as u64 * node_size;
        allocations.push(Allocation {
            id: dn.id(),
            base: (dn.id() - 1) * extent,
            extent,
        });
    });
    allocations.sort_by_key(|a| a.id);
    let base_by_id = allocations.iter().map(|a| (a.id, a.base)).collect();
    MemoryMap {
        allocations,
        base_by_id,
        node_size,
    }
}

/// Block ids touched by one search descent, in visit order (duplicates
/// retained).
#[derive(Debug, Clone)]
pub struct TransferTrace {
    pub block_ids: Vec<u64>,
    pub b_bytes: u64,
}

pub fn trace_search(u: &Universe, map: &MemoryMap, v: u64, b_bytes: u64) -> TransferTrace {
    assert!(b_bytes >= map.node_size, "block smaller than a node");
    debug_assert!(v != EMPTY && v <= MAX_KEY);
    let mut block_ids = Vec::new();
    let mut dn = u.root_node();
    let mut epoch = dn.epoch();
    let mut off = dn.root_offset(epoch);
    loop {
        let addr = map.base_of(dn.id()) + off as u64 * map.node_size;
        block_ids.push(addr / b_bytes);
        let slot = dn.slot(off);
        let w = slot.load_word(Ordering::Acquire);
        if w.is_leaf() {
            return TransferTrace { block_ids, b_bytes };
        }
        match decode_link(slot.child(v >= w.value()).load(Ordering::Acquire)) {
            Link::Internal(o) => off = o,
            Link::External(p) => {
                dn = u.node(p);
                epoch = dn.epoch();
                off = dn.root_offset(epoch);
            }
            Link::None => return TransferTrace { block_ids, b_bytes },
        }
    }
}

/// Distinct blocks touched by the descent for `v`: the cold-cache
/// transfer count.
pub fn count_search_transfers(u: &Universe, map: &MemoryMap, v: u64, b_bytes: u64) -> u64 {
    let mut ids = trace_search(u, map, v, b_bytes).block_ids;
    ids.sort_unstable();
    ids.dedup();
    ids.len() as u64
}

/// Least-squares fit of transfers against 1/log2(B+1).
#[derive(Debug, Clone, Copy)]
pub struct CurveFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

/// Fit `mean transfers = slope / log2(B+1) + intercept` over the sampled
/// block sizes. Needs at least three distinct B values.
pub fn fit_transfer_curve(samples: &[(u64, f64)]) -> Result<CurveFit> {
    let mut distinct: Vec<u64> = samples.iter().map(|&(b, _)| b).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateFit(distinct.len()));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples
        .iter()
        .map(|&(b, _)| 1.0 / ((b + 1) as f64).log2())
        .collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, y)| y).collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateFit(distinct.len()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    Ok(CurveFit {
        slope,
        intercept,
        residual: (sse / n).sqrt(),
    })
}

/// One row of a transfer sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub b_nodes: u64,
    pub n: u64,
    pub mean_transfers: f64,
    pub p99_transfers: u64,
    pub bound_value: f64,
}

/// The closing inequality of the transfer analysis, with B in nodes:
/// `4 * (log_{B+1} N + log_{B+1} 2)`.
pub fn transfer_bound(b_nodes: u64, n: u64) -> f64 {
    let lb = ((b_nodes + 1) as f64).ln();
    4.0 * ((n as f64).ln() / lb + 2.0f64.ln() / lb)
}

/// Sweep block sizes over one quiescent tree, measuring each key in
/// `keys` per block size.
pub fn sweep_transfers(
    u: &Universe,
    map: &MemoryMap,
    blocks: &[u64],
    keys: &[u64],
    n: u64,
) -> Vec<SweepRow> {
    blocks
        .iter()
        .map(|&b_nodes| {
            let b_bytes = b_nodes * map.node_size;
            let mut counts: Vec<u64> = keys
                .iter()
                .map(|&k| count_search_transfers(u, map, k, b_bytes))
                .collect();
            counts.sort_unstable();
            let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
            let p99 =
                counts[((counts.len() as f64 * 0.99).ceil() as usize).clamp(1, counts.len()) - 1];
            SweepRow {
                b_nodes,
                n,
                mean_transfers: mean,
                p99_transfers: p99,
                bound_value: transfer_bound(b_nodes, n),
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "B_nodes,N,mean_transfers,p99_transfers,bound_value")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{},{:.4}",
            r.b_nodes, r.n, r.mean_transfers, r.p99_transfers, r.bound_value
        )?;
    }
    Ok(())
}
