//! Wait-free membership search.
//!
//! This file deliberately contains only atomic loads: no lock, no
//! test-and-set, no compare-and-swap, no retry loop. A search performs one
//! load per slot on a single root-to-terminal descent, captures each
//! container's (half, buffer) selector once on entry, and finishes with a
//! left-to-right scan of the captured buffer when the terminal leaf does
//! not match. The acceptance suite scans this file to enforce that.

use std::sync::atomic::Ordering;

use crate::concurrent_tree::{OpResult, Universe};
use crate::delta_node::{decode_link, Link, EMPTY, MAX_KEY};

impl Universe {
    /// True iff `v` is a member of the set.
    pub fn search(&self, v: u64) -> bool {
        self.search_traced(v).found_or_applied
    }

    /// Search with step instrumentation: counts slot visits plus buffer
    /// cells scanned, which is bounded by tree height + buffer capacity.
    pub fn search_traced(&self, v: u64) -> OpResult {
        assert!(v != EMPTY && v <= MAX_KEY, "key out of range");
        let mut steps = 0u32;
        let mut dn = self.root_node();
        let mut epoch = dn.epoch();
        let mut off = dn.root_offset(epoch);
        loop {
            let slot = dn.slot(off);
            let w = slot.load_word(Ordering::Acquire);
            steps += 1;
            if w.is_leaf() {
                if w.value() == v && !w.mark() {
                    return OpResult {
                        found_or_applied: true,
                        path_steps: steps,
                        retries: 0,
                    };
                }
                // The last visited leaf does not hold v live; v can still
                // sit in the buffer captured when we entered this
                // container.
                let mut found = false;
                for cell in dn.buffer(epoch) {
                    steps += 1;
                    if cell.load(Ordering::Acquire) == v {
                        found = true;
                        break;
                    }
                }
                return OpResult {
                    found_or_applied: found,
                    path_steps: steps,
                    retries: 0,
                };
            }
            let link = slot.child(v >= w.value()).load(Ordering::Acquire);
            match decode_link(link) {
                Link::Internal(o) => off = o,
                Link::External(p) => {
                    dn = self.node(p);
                    epoch = dn.epoch();
                    off = dn.root_offset(epoch);
                }
                Link::None => {
                    debug_assert!(false, "router with absent child");
                    return OpResult {
                        found_or_applied: false,
                        path_steps: steps,
                        retries: 0,
                    };
                }
            }
        }
    }
}
