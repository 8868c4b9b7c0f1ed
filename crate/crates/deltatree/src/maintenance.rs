//! Structural maintenance: rebalance a container into its mirror, expand a
//! stuck bottom leaf into a new child container, merge a sparse container
//! into its sibling. All three run under the container's test-and-set lock
//! with the in-flight update counter drained to zero; searches are never
//! excluded and read either the before or the after image.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::concurrent_tree::{drain_opcount, grow, Universe};
use crate::delta_node::{decode_link, encode_external, DeltaNode, Link, Word, EMPTY, EMPTY_LEAF};
use crate::veb_layout::ChildDir;

/// Monotone counters for maintenance work, used to verify the amortized
/// cost bound empirically.
pub struct MaintenanceStats {
    rebalances: AtomicU64,
    expands: AtomicU64,
    merges: AtomicU64,
    nodes_touched: AtomicU64,
}

impl MaintenanceStats {
    pub(crate) fn new() -> MaintenanceStats {
        MaintenanceStats {
            rebalances: AtomicU64::new(0),
            expands: AtomicU64::new(0),
            merges: AtomicU64::new(0),
            nodes_touched: AtomicU64::new(0),
        }
    }

    fn record_rebalance(&self, work: u64) {
        self.rebalances.fetch_add(1, Ordering::Relaxed);
        self.nodes_touched.fetch_add(work, Ordering::Relaxed);
    }

    fn record_expand(&self, work: u64) {
        self.expands.fetch_add(1, Ordering::Relaxed);
        self.nodes_touched.fetch_add(work, Ordering::Relaxed);
    }

    fn record_merge(&self, work: u64) {
        self.merges.fetch_add(1, Ordering::Relaxed);
        self.nodes_touched.fetch_add(work, Ordering::Relaxed);
    }

    fn add_work(&self, work: u64) {
        self.nodes_touched.fetch_add(work, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MaintenanceSnapshot {
        MaintenanceSnapshot {
            rebalances: self.rebalances.load(Ordering::Relaxed),
            expands: self.expands.load(Ordering::Relaxed),
            merges: self.merges.load(Ordering::Relaxed),
            nodes_touched: self.nodes_touched.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaintenanceSnapshot {
    pub rebalances: u64,
    pub expands: u64,
    pub merges: u64,
    pub nodes_touched: u64,
}

/// What a maintenance trigger decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaintenanceAction {
    Expand,
    Rebalance,
    FlushChildren,
    Merge,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerCause {
    InsertOverflow,
    Delete,
}

/// Largest number of live keys a container can hold as a leaf-oriented
/// tree: n leaves occupy 2n - 1 slots, so n <= (UB + 1) / 2.
pub(crate) fn max_live(ub: u64) -> usize {
    ub.div_ceil(2) as usize
}

/// Height of the complete leaf-oriented tree built over n keys:
/// ceil(log2 n) + 1 levels for n >= 2.
fn build_height(n: usize) -> u32 {
    if n <= 1 {
        1
    } else {
        (n - 1).ilog2() + 2
    }
}

/// Threshold decision for a container, per the configured densities.
/// Advisory outside a lock; `merge` re-validates under locks.
pub fn maintenance_trigger(d: &DeltaNode, u: &Universe, cause: TriggerCause) -> MaintenanceAction {
    match cause {
        TriggerCause::InsertOverflow => {
            if d.density() > u.thresholds().expand_density {
                MaintenanceAction::Expand
            } else if d.child_count.load(Ordering::Relaxed) == 0 {
                MaintenanceAction::Rebalance
            } else {
                MaintenanceAction::FlushChildren
            }
        }
        TriggerCause::Delete => {
            if d.density() >= u.thresholds().merge_fill {
                return MaintenanceAction::None;
            }
            if d.child_count.load(Ordering::Relaxed) != 0 {
                return MaintenanceAction::None;
            }
            let parent = d.parent.load(Ordering::Acquire);
            if parent.is_null() {
                return MaintenanceAction::None;
            }
            let tp = u.node(parent);
            let p_off = d.parent_slot.load(Ordering::Relaxed);
            if p_off >= tp.slot_count() {
                return MaintenanceAction::None;
            }
            let p_dir = d.parent_dir.load(Ordering::Relaxed) != 0;
            let sib = match decode_link(tp.slot(p_off).child(!p_dir).load(Ordering::Acquire)) {
                Link::External(p) => u.node(p),
                _ => return MaintenanceAction::None,
            };
            if sib.child_count.load(Ordering::Relaxed) != 0 {
                return MaintenanceAction::None;
            }
            let combined = (d.countnode() + sib.countnode()) as usize;
            if combined <= max_live(d.ub()) {
                MaintenanceAction::Merge
            } else {
                MaintenanceAction::None
            }
        }
    }
}

/// Insert-overflow maintenance entry point. Caller holds `d`'s lock with
/// opcount drained; `hint` is the bottom leaf where the winner's own
/// insert got stuck.
pub(crate) fn insert_overflow(u: &Universe, d: &DeltaNode, hint: Option<u32>) {
    match maintenance_trigger(d, u, TriggerCause::InsertOverflow) {
        MaintenanceAction::Rebalance => rebalance(u, d),
        MaintenanceAction::Expand | MaintenanceAction::FlushChildren => relieve_buffer(u, d, hint),
        _ => unreachable!("insert overflow maps to expand/rebalance/flush"),
    }
}

/// Rebuild the container's live keys (unmarked leaves plus buffer) as a
/// complete leaf-oriented BST in the mirror half, then switch the active
/// half and buffer together. Marked leaves are discarded here.
pub(crate) fn rebalance(u: &Universe, d: &DeltaNode) {
    debug_assert!(d.is_locked());
    debug_assert_eq!(d.opcount.load(Ordering::Acquire), 0);
    debug_assert_eq!(d.child_count.load(Ordering::Relaxed), 0);
    let epoch = d.epoch();
    let vals = d.live_values(epoch);
    rebuild_inactive(d, epoch, &vals);
    d.switch_halves(epoch);
    d.set_counts(vals.len() as i64, 0);
    let cap = d.buffer(epoch).len() as u64;
    u.stats_mut().record_rebalance(2 * (d.ub() + cap));
}

fn rebuild_inactive(d: &DeltaNode, epoch: u8, vals: &[u64]) {
    debug_assert!(vals.len() <= max_live(d.ub()));
    let base = d.inactive_root_offset(epoch);
    for off in base..base + d.ub() as u32 {
        d.slot(off).word.store(EMPTY_LEAF.0, Ordering::Release);
    }
    for cell in d.inactive_buffer(epoch) {
        cell.store(EMPTY, Ordering::Release);
    }
    if !vals.is_empty() {
        build_subtree(d, base, vals);
    }
}

/// Write a complete leaf-oriented BST over sorted distinct `vals` rooted
/// at `off`, following the container's internal wiring. Leaves end up at
/// depth <= ceil(log2 n) + 1; each router is the least key of its right
/// subtree, so keys < router go left and keys >= router go right.
pub(crate) fn build_subtree(d: &DeltaNode, off: u32, vals: &[u64]) {
    debug_assert!(!vals.is_empty());
    let slot = d.slot(off);
    if vals.len() == 1 {
        slot.word.store(Word::leaf(vals[0]).0, Ordering::Release);
        return;
    }
    let (l, r) = match (
        decode_link(slot.left.load(Ordering::Acquire)),
        decode_link(slot.right.load(Ordering::Acquire)),
    ) {
        (Link::Internal(l), Link::Internal(r)) => (l, r),
        _ => unreachable!("building past the container bottom"),
    };
    let m = vals.len().div_ceil(2);
    slot.word.store(Word::router(vals[m]).0, Ordering::Release);
    build_subtree(d, l, &vals[..m]);
    build_subtree(d, r, &vals[m..]);
}

/// Where a key's internal descent through one container ends.
enum Terminal {
    /// A leaf with internal child slots: can grow in place.
    Growable(u32, u32, u32, Word),
    /// A bottom leaf: no room below inside this container.
    Bottom(u32),
    /// The path leaves through a child container.
    Crossing(*const DeltaNode),
}

fn internal_terminal(d: &DeltaNode, epoch: u8, v: u64) -> Terminal {
    let mut off = d.root_offset(epoch);
    loop {
        let slot = d.slot(off);
        let w = slot.load_word(Ordering::Acquire);
        if w.is_leaf() {
            return match (
                decode_link(slot.left.load(Ordering::Acquire)),
                decode_link(slot.right.load(Ordering::Acquire)),
            ) {
                (Link::Internal(l), Link::Internal(r)) => Terminal::Growable(off, l, r, w),
                (Link::None, Link::None) => Terminal::Bottom(off),
                _ => unreachable!("leaf with mixed child links"),
            };
        }
        match decode_link(slot.child(v >= w.value()).load(Ordering::Acquire)) {
            Link::Internal(o) => off = o,
            Link::External(p) => return Terminal::Crossing(p),
            Link::None => unreachable!("router with absent child"),
        }
    }
}

/// Drain the active buffer: expand the hinted stuck leaf, then route every
/// buffered key to where its search path now leads — grown in place,
/// pushed into a child container, or relieved by expanding its own stuck
/// leaf. Finishes by switching to the (empty) mirror buffer; the old
/// buffer stays intact for searches that captured it.
pub(crate) fn relieve_buffer(u: &Universe, d: &DeltaNode, hint: Option<u32>) {
    debug_assert!(d.is_locked());
    let epoch = d.epoch();
    let mut remaining = d.buffer_values(epoch);
    let cap = d.buffer(epoch).len() as u64;
    u.stats_mut().add_work(cap);
    if let Some(h) = hint {
        if valid_expand_target(d, epoch, h) && !expand_leaf(u, d, epoch, h, &mut remaining) {
            finish_buffer_switch(d, epoch, &remaining);
            return;
        }
    }
    while let Some(&v) = remaining.last() {
        match internal_terminal(d, epoch, v) {
            Terminal::Growable(off, l, r, w) => {
                remaining.pop();
                u.stats_mut().add_work(1);
                if w.value() == EMPTY && !w.mark() {
                    d.slot(off).word.store(Word::leaf(v).0, Ordering::Release);
                } else if w.value() == v && !w.mark() {
                    // Already live at its leaf; drop the buffered copy.
                    debug_assert!(false, "buffered key duplicated in tree");
                    d.add_countnode(-1);
                } else {
                    let grown = grow(d, off, l, r, w, v);
                    debug_assert!(grown, "uncontended grow cannot lose");
                }
            }
            Terminal::Bottom(off) => {
                if !expand_leaf(u, d, epoch, off, &mut remaining) {
                    // Allocation failed; keep what's left buffered.
                    break;
                }
            }
            Terminal::Crossing(child) => {
                remaining.pop();
                let child = u.node(child);
                u.stats_mut().add_work(1);
                let _ = u.insert_from(child, v);
                d.add_countnode(-1);
            }
        }
    }
    finish_buffer_switch(d, epoch, &remaining);
}

/// Copy leftovers into the mirror buffer and make it the active one. The
/// superseded buffer is left intact for searches that captured it.
fn finish_buffer_switch(d: &DeltaNode, epoch: u8, leftovers: &[u64]) {
    let inactive = d.inactive_buffer(epoch);
    debug_assert!(leftovers.len() <= inactive.len());
    for (i, cell) in inactive.iter().enumerate() {
        cell.store(
            leftovers.get(i).copied().unwrap_or(EMPTY),
            Ordering::Release,
        );
    }
    d.switch_buffer(epoch);
    d.set_bcount(leftovers.len() as i64);
}

fn valid_expand_target(d: &DeltaNode, epoch: u8, off: u32) -> bool {
    let base = d.root_offset(epoch);
    if off < base || off >= base + d.ub() as u32 {
        return false;
    }
    let slot = d.slot(off);
    if !slot.load_word(Ordering::Acquire).is_leaf() {
        return false;
    }
    if decode_link(slot.left.load(Ordering::Acquire)) != Link::None
        || decode_link(slot.right.load(Ordering::Acquire)) != Link::None
    {
        return false;
    }
    match d.layout().parent(off - base) {
        Some((p_local, dir)) => {
            let p_slot = d.slot(base + p_local);
            let link = p_slot.child(dir == ChildDir::Right).load(Ordering::Acquire);
            decode_link(link) == Link::Internal(off)
        }
        None => false,
    }
}

/// Hang a new child container below `leaf_off`: the leaf's live value and
/// every buffered key routed below it move into the child, and the
/// in-container parent's link swings from the leaf to the child's root.
/// Returns false if allocation failed (tree unchanged, keys kept).
fn expand_leaf(
    u: &Universe,
    d: &DeltaNode,
    epoch: u8,
    leaf_off: u32,
    remaining: &mut Vec<u64>,
) -> bool {
    debug_assert!(valid_expand_target(d, epoch, leaf_off));
    let base = d.root_offset(epoch);
    let (p_local, dir) = d
        .layout()
        .parent(leaf_off - base)
        .expect("bottom leaf below container root");
    let p_off = base + p_local;
    let w = d.slot(leaf_off).load_word(Ordering::Acquire);

    let mut below = Vec::new();
    remaining.retain(|&v| match internal_terminal(d, epoch, v) {
        Terminal::Bottom(off) if off == leaf_off => {
            below.push(v);
            false
        }
        _ => true,
    });

    let child_ptr = match u.alloc_node() {
        Ok(p) => p,
        Err(_) => {
            // Abort leaving the tree unchanged; keys stay buffered.
            remaining.extend_from_slice(&below);
            return false;
        }
    };
    let child = u.node(child_ptr);
    let mut vals = below.clone();
    if !w.mark() && w.value() != EMPTY {
        vals.push(w.value());
    }
    vals.sort_unstable();
    vals.dedup();
    if !vals.is_empty() {
        build_subtree(child, 0, &vals);
    }
    child.set_counts(vals.len() as i64, 0);
    child
        .parent
        .store(d as *const DeltaNode as *mut DeltaNode, Ordering::Release);
    child.parent_slot.store(p_off, Ordering::Relaxed);
    child
        .parent_dir
        .store((dir == ChildDir::Right) as u8, Ordering::Relaxed);
    // The child's root takes over the structural position of the leaf.
    let leaf_depth = d.layout().depth_of(leaf_off - base);
    child.root_depth.store(
        d.root_depth.load(Ordering::Relaxed) + leaf_depth - 1,
        Ordering::Relaxed,
    );
    u.note_height(child.root_depth.load(Ordering::Relaxed) + build_height(vals.len()) - 1);
    d.slot(p_off)
        .child(dir == ChildDir::Right)
        .store(encode_external(child_ptr), Ordering::Release);
    d.child_count.fetch_add(1, Ordering::Relaxed);

    let leaf_live = (!w.mark() && w.value() != EMPTY) as i64;
    d.add_countnode(-(below.len() as i64 + leaf_live));
    u.stats_mut().record_expand(d.ub() + below.len() as u64 + 1);
    true
}

/// Opportunistic merge of `d` into its sibling container. Takes self,
/// sibling and parent locks in that order, all try-locks; any failure
/// abandons the merge. Returns true iff the fold happened.
pub(crate) fn merge(u: &Universe, d: &DeltaNode) -> bool {
    if !d.try_lock() {
        return false;
    }
    let merged = merge_locked(u, d);
    d.unlock();
    merged
}

fn merge_locked(u: &Universe, d: &DeltaNode) -> bool {
    if d.retired.load(Ordering::Acquire) || d.child_count.load(Ordering::Relaxed) != 0 {
        return false;
    }
    let parent = d.parent.load(Ordering::Acquire);
    if parent.is_null() {
        return false;
    }
    let tp = u.node(parent);
    let p_off = d.parent_slot.load(Ordering::Relaxed);
    let p_dir = d.parent_dir.load(Ordering::Relaxed) != 0;
    debug_assert!(p_off < tp.slot_count());
    let ts = match decode_link(tp.slot(p_off).child(!p_dir).load(Ordering::Acquire)) {
        Link::External(p) => u.node(p),
        _ => return false,
    };
    if !ts.try_lock() {
        return false;
    }
    let merged = merge_with_sibling(u, d, ts, tp, p_off, p_dir);
    ts.unlock();
    merged
}

fn merge_with_sibling(
    u: &Universe,
    d: &DeltaNode,
    ts: &DeltaNode,
    tp: &DeltaNode,
    p_off: u32,
    p_dir: bool,
) -> bool {
    if !tp.try_lock() {
        return false;
    }
    let merged = (|| {
        if ts.retired.load(Ordering::Acquire) || tp.retired.load(Ordering::Acquire) {
            return false;
        }
        if ts.child_count.load(Ordering::Relaxed) != 0 {
            return false;
        }
        // Re-validate both edges now that the parent is pinned.
        let p_slot = tp.slot(p_off);
        if decode_link(p_slot.child(p_dir).load(Ordering::Acquire))
            != Link::External(d as *const DeltaNode)
        {
            return false;
        }
        if decode_link(p_slot.child(!p_dir).load(Ordering::Acquire))
            != Link::External(ts as *const DeltaNode)
        {
            return false;
        }
        // The grandparent router inside the parent container takes over
        // the edge; without one the merge is not possible.
        let tp_epoch = tp.epoch();
        let tp_base = tp.root_offset(tp_epoch);
        debug_assert!(p_off >= tp_base && p_off < tp_base + tp.ub() as u32);
        let Some((g_local, g_dir)) = tp.layout().parent(p_off - tp_base) else {
            return false;
        };
        let g_off = tp_base + g_local;

        drain_opcount(d);
        drain_opcount(ts);
        drain_opcount(tp);

        let epoch_d = d.epoch();
        let epoch_s = ts.epoch();
        let vals_d = d.live_values(epoch_d);
        if vals_d.len() as f64 / d.ub() as f64 >= u.thresholds().merge_fill {
            return false;
        }
        let mut vals = ts.live_values(epoch_s);
        vals.extend_from_slice(&vals_d);
        vals.sort_unstable();
        vals.dedup();
        if vals.len() > max_live(ts.ub()) {
            return false;
        }

        rebuild_inactive(ts, epoch_s, &vals);
        ts.switch_halves(epoch_s);
        ts.set_counts(vals.len() as i64, 0);
        // The union can need one more level than either input had.
        u.note_height(ts.root_depth.load(Ordering::Relaxed) + build_height(vals.len()) - 1);

        d.retired.store(true, Ordering::Release);
        d.set_counts(0, 0);
        tp.slot(g_off)
            .child(g_dir == ChildDir::Right)
            .store(encode_external(ts as *const DeltaNode), Ordering::Release);
        ts.parent_slot.store(g_off, Ordering::Relaxed);
        ts.parent_dir
            .store((g_dir == ChildDir::Right) as u8, Ordering::Relaxed);
        tp.child_count.fetch_sub(1, Ordering::Relaxed);

        let cap = d.buffer(epoch_d).len() as u64;
        u.stats_mut().record_merge(2 * d.ub() + 2 * cap);
        true
    })();
    tp.unlock();
    merged
}
