//! The ordered-set API: wait-free search (see `search`), non-blocking
//! insert and delete, and the synchronization protocol between updates and
//! per-container maintenance.
//!
//! Updates announce themselves to a container by raising its `opcount`
//! through `wait_and_check`; maintenance takes the container's
//! test-and-set lock and drains `opcount` to zero before restructuring.
//! Crossing from one container into a child flags down the parent and
//! re-runs the entry protocol on the child. A container that was merged
//! away is marked retired; an update that raised its flag on a retired
//! container restarts from the root.

use std::sync::atomic::{AtomicI64, AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;

use crate::delta_node::{
    allocate_delta_node, decode_link, Backoff, BufferPut, DeltaNode, DeltaParams, Link, Word,
    EMPTY, EMPTY_LEAF, MAX_KEY,
};
use crate::maintenance::{self, MaintenanceSnapshot, MaintenanceStats};
use crate::{Error, Result};

/// Density thresholds driving expand and merge.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    /// An overflowing container denser than this expands instead of
    /// rebalancing (0.5 by default; 0.25 selectable for experiments).
    pub expand_density: f64,
    /// A container sparser than this after a delete considers merging.
    pub merge_fill: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            expand_density: 0.5,
            merge_fill: 0.5,
        }
    }
}

/// Result of one traced operation, with instrumentation counters.
#[derive(Debug, Clone, Copy)]
pub struct OpResult {
    /// Search: found. Insert/delete: the operation took effect.
    pub found_or_applied: bool,
    /// Slots visited plus buffer cells scanned.
    pub path_steps: u32,
    /// Descent restarts caused by competing CAS successes or by crossing
    /// into a retired container.
    pub retries: u32,
}

/// The ΔTree universe: root container plus global configuration.
pub struct Universe {
    params: DeltaParams,
    thresholds: Thresholds,
    maintenance_enabled: bool,
    root: *const DeltaNode,
    // Boxing keeps container addresses stable across registry growth;
    // links and the root pointer alias into the boxes.
    #[allow(clippy::vec_box)]
    registry: Mutex<Vec<Box<DeltaNode>>>,
    next_id: AtomicU64,
    live_count: AtomicI64,
    height_hwm: AtomicU32,
    stats: MaintenanceStats,
}

// All shared mutation goes through atomics; containers are owned by the
// registry and never freed before the Universe drops.
unsafe impl Send for Universe {}
unsafe impl Sync for Universe {}

impl Universe {
    pub fn new(params: DeltaParams) -> Result<Universe> {
        Universe::with_config(params, Thresholds::default(), true)
    }

    pub fn with_config(
        params: DeltaParams,
        thresholds: Thresholds,
        maintenance_enabled: bool,
    ) -> Result<Universe> {
        if params.ub() < 3 {
            // Expand must re-point the in-container parent of a bottom
            // leaf; a single-slot container has none.
            return Err(Error::CapacityTooSmall(params.ub()));
        }
        let u = Universe {
            params,
            thresholds,
            maintenance_enabled,
            root: std::ptr::null(),
            registry: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
            live_count: AtomicI64::new(0),
            height_hwm: AtomicU32::new(1),
            stats: MaintenanceStats::new(),
        };
        let root = u.alloc_node()?;
        let mut u = u;
        u.root = root;
        Ok(u)
    }

    pub fn params(&self) -> &DeltaParams {
        &self.params
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn stats(&self) -> MaintenanceSnapshot {
        self.stats.snapshot()
    }

    pub(crate) fn stats_mut(&self) -> &MaintenanceStats {
        &self.stats
    }

    /// Estimate of the current member count.
    pub fn len_estimate(&self) -> u64 {
        self.live_count.load(Ordering::Relaxed).max(0) as u64
    }

    /// High-water mark of the tree height in node levels.
    pub fn height_hwm(&self) -> u32 {
        self.height_hwm.load(Ordering::Relaxed)
    }

    pub(crate) fn root_node(&self) -> &DeltaNode {
        unsafe { &*self.root }
    }

    pub(crate) fn node(&self, ptr: *const DeltaNode) -> &DeltaNode {
        debug_assert!(!ptr.is_null());
        unsafe { &*ptr }
    }

    /// Allocate a fresh container and take ownership of it. The returned
    /// pointer stays valid until the Universe drops.
    pub(crate) fn alloc_node(&self) -> Result<*const DeltaNode> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let boxed = Box::new(allocate_delta_node(&self.params, id)?);
        let ptr: *const DeltaNode = &*boxed;
        self.registry.lock().expect("registry poisoned").push(boxed);
        Ok(ptr)
    }

    /// Walk every container reachable from the root (active halves only).
    pub(crate) fn visit_nodes(&self, f: &mut impl FnMut(&DeltaNode)) {
        let mut queue = vec![self.root];
        while let Some(ptr) = queue.pop() {
            let dn = self.node(ptr);
            f(dn);
            let epoch = dn.epoch();
            let mut stack = vec![dn.root_offset(epoch)];
            while let Some(off) = stack.pop() {
                let slot = dn.slot(off);
                if slot.load_word(Ordering::Acquire).is_leaf() {
                    continue;
                }
                for raw in [
                    slot.left.load(Ordering::Acquire),
                    slot.right.load(Ordering::Acquire),
                ] {
                    match decode_link(raw) {
                        Link::Internal(o) => stack.push(o),
                        Link::External(p) => queue.push(p),
                        Link::None => {}
                    }
                }
            }
        }
    }

    /// Sorted live members. Quiescent use only (tests, simulator).
    pub fn members(&self) -> Vec<u64> {
        let mut out = Vec::new();
        self.visit_nodes(&mut |dn| {
            let epoch = dn.epoch();
            let mut stack = vec![dn.root_offset(epoch)];
            while let Some(off) = stack.pop() {
                let slot = dn.slot(off);
                let w = slot.load_word(Ordering::Acquire);
                if w.is_leaf() {
                    if !w.mark() && w.value() != EMPTY {
                        out.push(w.value());
                    }
                    continue;
                }
                for raw in [
                    slot.left.load(Ordering::Acquire),
                    slot.right.load(Ordering::Acquire),
                ] {
                    if let Link::Internal(o) = decode_link(raw) {
                        stack.push(o);
                    }
                }
            }
            out.extend(dn.buffer_values(epoch));
        });
        out.sort_unstable();
        out.dedup();
        out
    }

    pub(crate) fn note_height(&self, depth: u32) {
        self.height_hwm.fetch_max(depth, Ordering::Relaxed);
    }

    /// Quiescence invariants: every reachable container has opcount 0 and
    /// the lock free, buffer accounting exact, and countnode equal to its
    /// reachable unmarked leaves plus buffered keys. Panics on violation;
    /// call only with no operations in flight.
    pub fn debug_validate(&self) {
        self.visit_nodes(&mut |dn: &DeltaNode| {
            assert_eq!(dn.opcount.load(Ordering::Acquire), 0, "opcount not drained");
            assert!(!dn.is_locked(), "lock held at quiescence");
            let epoch = dn.epoch();
            let buffered = dn.buffer_values(epoch).len() as i64;
            assert_eq!(dn.bcount(), buffered, "bcount mismatch");
            let mut live_leaves = 0i64;
            let mut stack = vec![dn.root_offset(epoch)];
            while let Some(off) = stack.pop() {
                let slot = dn.slot(off);
                let w = slot.load_word(Ordering::Acquire);
                if w.is_leaf() {
                    if !w.mark() && w.value() != EMPTY {
                        live_leaves += 1;
                    }
                    continue;
                }
                for raw in [
                    slot.left.load(Ordering::Acquire),
                    slot.right.load(Ordering::Acquire),
                ] {
                    if let Link::Internal(o) = decode_link(raw) {
                        stack.push(o);
                    }
                }
            }
            assert_eq!(
                dn.countnode(),
                live_leaves + buffered,
                "countnode mismatch in container {}",
                dn.id()
            );
        });
    }

    /// Maximum leaf depth over the whole tree, in node levels. Quiescent
    /// use only.
    pub fn measured_height(&self) -> u32 {
        fn walk(u: &Universe, dn: &DeltaNode, off: u32, depth: u32, max: &mut u32) {
            let slot = dn.slot(off);
            let w = slot.load_word(Ordering::Acquire);
            if w.is_leaf() {
                *max = (*max).max(depth);
                return;
            }
            for raw in [
                slot.left.load(Ordering::Acquire),
                slot.right.load(Ordering::Acquire),
            ] {
                match decode_link(raw) {
                    Link::Internal(o) => walk(u, dn, o, depth + 1, max),
                    Link::External(p) => {
                        let child = u.node(p);
                        walk(u, child, child.root_offset(child.epoch()), depth + 1, max);
                    }
                    Link::None => {}
                }
            }
        }
        let mut max = 0;
        let root = self.root_node();
        walk(self, root, root.root_offset(root.epoch()), 1, &mut max);
        max
    }

    pub fn insert(&self, v: u64) -> bool {
        self.insert_traced(v).found_or_applied
    }

    pub fn insert_traced(&self, v: u64) -> OpResult {
        assert!(v != EMPTY && v <= MAX_KEY, "key out of range");
        let res = self.insert_from(self.root_node(), v);
        if res.found_or_applied {
            self.live_count.fetch_add(1, Ordering::Relaxed);
        }
        res
    }

    pub fn delete(&self, v: u64) -> bool {
        self.delete_traced(v).found_or_applied
    }

    pub fn delete_traced(&self, v: u64) -> OpResult {
        assert!(v != EMPTY && v <= MAX_KEY, "key out of range");
        let mut steps = 0u32;
        let mut retries = 0u32;
        'restart: loop {
            let mut dn = self.root_node();
            wait_and_check(dn);
            let mut epoch = dn.epoch();
            let mut off = dn.root_offset(epoch);
            loop {
                let slot = dn.slot(off);
                let w = slot.load_word(Ordering::Acquire);
                steps += 1;
                if !w.is_leaf() {
                    let link = slot.child(v >= w.value()).load(Ordering::Acquire);
                    match decode_link(link) {
                        Link::Internal(o) => off = o,
                        Link::External(p) => {
                            let child = self.node(p);
                            flag_down(dn);
                            wait_and_check(child);
                            if child.retired.load(Ordering::Acquire) {
                                flag_down(child);
                                retries += 1;
                                continue 'restart;
                            }
                            dn = child;
                            epoch = dn.epoch();
                            off = dn.root_offset(epoch);
                        }
                        Link::None => unreachable!("router with absent child"),
                    }
                    continue;
                }
                if w.value() == v && !w.mark() && w.value() != EMPTY {
                    match slot.word.compare_exchange(
                        w.0,
                        w.marked().0,
                        Ordering::AcqRel,
                        Ordering::Acquire,
                    ) {
                        Ok(_) => {
                            // The mark is the linearization point; a
                            // concurrent grow inherits it via its flip CAS.
                            dn.add_countnode(-1);
                            self.live_count.fetch_sub(1, Ordering::Relaxed);
                            flag_down(dn);
                            self.consider_merge(dn);
                            return OpResult {
                                found_or_applied: true,
                                path_steps: steps,
                                retries,
                            };
                        }
                        Err(_) => {
                            // Lost to another delete or to a grow flip;
                            // re-dispatch on the fresh word.
                            retries += 1;
                            continue;
                        }
                    }
                }
                // Terminal slot does not match: the value can only live in
                // the buffer captured at entry.
                let removed = dn.buffer_remove(epoch, v);
                steps += dn.buffer(epoch).len() as u32;
                if removed {
                    self.live_count.fetch_sub(1, Ordering::Relaxed);
                }
                flag_down(dn);
                if removed {
                    self.consider_merge(dn);
                }
                return OpResult {
                    found_or_applied: removed,
                    path_steps: steps,
                    retries,
                };
            }
        }
    }

    /// Insert `v` starting at `start` (the root for the public API;
    /// maintenance pushes buffered keys into a child this way). Restarts
    /// re-enter at `start`: a merge only folds containers into a sibling
    /// under the same subtree, so the value's destination stays below
    /// `start`. Does not touch the global live count.
    pub(crate) fn insert_from(&self, start: &DeltaNode, v: u64) -> OpResult {
        let mut steps = 0u32;
        let mut retries = 0u32;
        'restart: loop {
            let mut dn = start;
            wait_and_check(dn);
            // The root never retires, and a maintenance push holds the
            // parent's lock, which pins `start` itself.
            debug_assert!(!dn.retired.load(Ordering::Acquire));
            let mut epoch = dn.epoch();
            let mut off = dn.root_offset(epoch);
            // Structural depth of the current slot, for the height
            // high-water mark; containers carry their root's depth so
            // maintenance pushes starting mid-tree count correctly.
            let mut depth = dn.root_depth.load(Ordering::Relaxed);
            loop {
                let slot = dn.slot(off);
                let w = slot.load_word(Ordering::Acquire);
                steps += 1;
                if !w.is_leaf() {
                    let link = slot.child(v >= w.value()).load(Ordering::Acquire);
                    match decode_link(link) {
                        Link::Internal(o) => {
                            off = o;
                            depth += 1;
                        }
                        Link::External(p) => {
                            let child = self.node(p);
                            flag_down(dn);
                            wait_and_check(child);
                            if child.retired.load(Ordering::Acquire) {
                                flag_down(child);
                                retries += 1;
                                continue 'restart;
                            }
                            dn = child;
                            epoch = dn.epoch();
                            off = dn.root_offset(epoch);
                            depth = (depth + 1).max(dn.root_depth.load(Ordering::Relaxed));
                        }
                        Link::None => unreachable!("router with absent child"),
                    }
                    continue;
                }
                if w.value() == EMPTY && !w.mark() {
                    // Vacant leaf (fresh or rebuilt-empty container).
                    match slot.word.compare_exchange(
                        EMPTY_LEAF.0,
                        Word::leaf(v).0,
                        Ordering::AcqRel,
                        Ordering::Acquire,
                    ) {
                        Ok(_) => {
                            dn.add_countnode(1);
                            self.note_height(depth);
                            flag_down(dn);
                            return OpResult {
                                found_or_applied: true,
                                path_steps: steps,
                                retries,
                            };
                        }
                        Err(_) => {
                            retries += 1;
                            continue;
                        }
                    }
                }
                if w.value() == v && !w.mark() {
                    flag_down(dn);
                    return OpResult {
                        found_or_applied: false,
                        path_steps: steps,
                        retries,
                    };
                }
                // Grow: v differs from the leaf value, or revives a marked
                // leaf with the same value.
                let (l, r) = match (
                    decode_link(slot.left.load(Ordering::Acquire)),
                    decode_link(slot.right.load(Ordering::Acquire)),
                ) {
                    (Link::Internal(l), Link::Internal(r)) => (l, r),
                    (Link::None, Link::None) => {
                        // Bottom of the container: go through the buffer.
                        match self.overflow_insert(dn, epoch, off, v) {
                            OverflowOutcome::Inserted => {
                                return OpResult {
                                    found_or_applied: true,
                                    path_steps: steps,
                                    retries,
                                }
                            }
                            OverflowOutcome::Duplicate => {
                                return OpResult {
                                    found_or_applied: false,
                                    path_steps: steps,
                                    retries,
                                }
                            }
                            OverflowOutcome::Retry => {
                                retries += 1;
                                continue 'restart;
                            }
                        }
                    }
                    _ => unreachable!("leaf with mixed child links"),
                };
                if grow(dn, off, l, r, w, v) {
                    dn.add_countnode(1);
                    self.note_height(depth + 1);
                    flag_down(dn);
                    return OpResult {
                        found_or_applied: true,
                        path_steps: steps,
                        retries,
                    };
                }
                // Lost the claim; the winner's flip has completed, so the
                // slot re-dispatches as a router (or a changed leaf).
                retries += 1;
            }
        }
    }

    /// Bottom-of-container insert: buffer the value, then compete for the
    /// maintenance lock.
    fn overflow_insert(
        &self,
        dn: &DeltaNode,
        epoch: u8,
        stuck_off: u32,
        v: u64,
    ) -> OverflowOutcome {
        match dn.buffer_put(epoch, v) {
            BufferPut::Duplicate => {
                flag_down(dn);
                OverflowOutcome::Duplicate
            }
            BufferPut::Inserted => {
                if self.maintenance_enabled {
                    if dn.try_lock() {
                        flag_down(dn);
                        drain_opcount(dn);
                        maintenance::insert_overflow(self, dn, Some(stuck_off));
                        dn.unlock();
                    } else {
                        flag_down(dn);
                    }
                } else {
                    flag_down(dn);
                }
                OverflowOutcome::Inserted
            }
            BufferPut::Full => {
                // Buffer misconfigured (fewer cells than threads): fall
                // back to running maintenance inline, then retry. The
                // container may retire while we wait for the lock, since
                // no flag pins it here; the retry redescends either way.
                flag_down(dn);
                if self.maintenance_enabled {
                    lock_spin(dn);
                    if !dn.retired.load(Ordering::Acquire) {
                        drain_opcount(dn);
                        maintenance::insert_overflow(self, dn, Some(stuck_off));
                    }
                    dn.unlock();
                } else {
                    std::thread::yield_now();
                }
                OverflowOutcome::Retry
            }
        }
    }

    /// Lock the root container, drain in-flight updates and rebuild it
    /// into its mirror. The root must be childless. Test support.
    #[doc(hidden)]
    pub fn force_rebalance_root(&self) {
        let root = self.root_node();
        lock_spin(root);
        drain_opcount(root);
        maintenance::rebalance(self, root);
        root.unlock();
    }

    /// Run insert-overflow maintenance on the root container as if an
    /// overflowing insert had won the lock race; returns the number of
    /// expansions performed. Test support.
    #[doc(hidden)]
    pub fn force_insert_overflow_root(&self) -> u64 {
        let root = self.root_node();
        let before = self.stats.snapshot().expands;
        lock_spin(root);
        drain_opcount(root);
        maintenance::insert_overflow(self, root, None);
        root.unlock();
        self.stats.snapshot().expands - before
    }

    /// Occupied buffer cells of the root container. Test support.
    #[doc(hidden)]
    pub fn root_bcount(&self) -> i64 {
        self.root_node().bcount()
    }

    fn consider_merge(&self, dn: &DeltaNode) {
        if !self.maintenance_enabled {
            return;
        }
        if maintenance::maintenance_trigger(dn, self, maintenance::TriggerCause::Delete)
            == maintenance::MaintenanceAction::Merge
        {
            maintenance::merge(self, dn);
        }
    }
}

enum OverflowOutcome {
    Inserted,
    Duplicate,
    Retry,
}

/// Atomic increment of a container's in-flight update counter. SeqCst:
/// the raise and the subsequent lock check form one half of a Dekker
/// handshake with try_lock + drain_opcount, which acquire/release alone
/// does not order.
pub(crate) fn flag_up(dn: &DeltaNode) {
    dn.opcount.fetch_add(1, Ordering::SeqCst);
}

/// Atomic decrement; must pair with a prior `flag_up` by the same op.
pub(crate) fn flag_down(dn: &DeltaNode) {
    let prev = dn.opcount.fetch_sub(1, Ordering::SeqCst);
    debug_assert!(prev > 0, "unmatched flag_down");
}

/// Entry protocol for updates: returns only with opcount raised and the
/// lock observed free at raise time.
pub(crate) fn wait_and_check(dn: &DeltaNode) {
    let mut backoff = Backoff::new();
    loop {
        while dn.is_locked() {
            backoff.spin();
        }
        flag_up(dn);
        if dn.is_locked() {
            flag_down(dn);
            backoff.spin();
            continue;
        }
        return;
    }
}

/// Maintenance-side: spin until every in-flight update has flagged down.
pub(crate) fn drain_opcount(dn: &DeltaNode) {
    let mut backoff = Backoff::new();
    while dn.opcount.load(Ordering::SeqCst) != 0 {
        backoff.spin();
    }
}

pub(crate) fn lock_spin(dn: &DeltaNode) {
    let mut backoff = Backoff::new();
    while !dn.try_lock() {
        backoff.spin();
    }
}

/// Replace leaf `off` by a three-node subtree holding `v` and the old
/// value. Returns false if the claim CAS lost (after waiting out the
/// winner's flip so the caller re-dispatches on a router).
///
/// The old value's mark is re-copied into the inheriting child every time
/// the flip CAS fails, so a delete that marked the old leaf after our copy
/// is never lost: its mark rides into the new subtree.
pub(crate) fn grow(dn: &DeltaNode, off: u32, left: u32, right: u32, w0: Word, v: u64) -> bool {
    debug_assert!(w0.is_leaf());
    debug_assert!(w0.value() != EMPTY);
    let x = dn.slot(off);
    let lf = dn.slot(left);
    let rt = dn.slot(right);
    if lf
        .word
        .compare_exchange(
            EMPTY_LEAF.0,
            Word::leaf(v).0,
            Ordering::AcqRel,
            Ordering::Acquire,
        )
        .is_err()
    {
        let mut backoff = Backoff::new();
        while x.load_word(Ordering::Acquire).is_leaf() {
            backoff.spin();
        }
        return false;
    }
    let old = w0.value();
    let mut cur = x.load_word(Ordering::Acquire);
    if v < old {
        // left = v (claimed), right inherits the old value and mark,
        // router keeps the old value.
        loop {
            debug_assert!(cur.is_leaf() && cur.value() == old);
            rt.word
                .store(Word::leaf_with_mark(old, cur.mark()).0, Ordering::Release);
            match x.word.compare_exchange(
                cur.0,
                Word::router(old).0,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => break,
                Err(now) => cur = Word(now),
            }
        }
    } else {
        // v > old, or revive of a marked equal value: right = v, left
        // inherits, router value becomes v in the same atomic flip.
        rt.word.store(Word::leaf(v).0, Ordering::Release);
        loop {
            debug_assert!(cur.is_leaf() && cur.value() == old);
            lf.word
                .store(Word::leaf_with_mark(old, cur.mark()).0, Ordering::Release);
            match x.word.compare_exchange(
                cur.0,
                Word::router(v).0,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => break,
                Err(now) => cur = Word(now),
            }
        }
    }
    true
}
