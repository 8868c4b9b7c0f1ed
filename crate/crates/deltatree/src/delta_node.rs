//! ΔNode: a pre-allocated, vEB-ordered complete binary tree container.
//!
//! Each container holds `2 * UB` slots: a primary half and a mirror half,
//! both wired identically from the layout table. One atomic state word
//! selects the active half and the active overflow buffer together, so a
//! reader that captured the state keeps a consistent (tree, buffer) pair
//! across a rebalance switch.
//!
//! A slot's value, deleted-mark and leaf flag live in a single packed
//! 64-bit word: search and delete read them in one load, and the grow
//! protocol's value+isleaf transition is a single CAS.

use std::sync::atomic::{
    AtomicBool, AtomicI64, AtomicPtr, AtomicU32, AtomicU64, AtomicU8, Ordering,
};
use std::sync::Arc;

use crate::veb_layout::{layout_for, LayoutTable};
use crate::{Error, Result};

/// Reserved key meaning "no value"; stored keys are strictly positive.
pub const EMPTY: u64 = 0;

/// Largest storable key: the packed slot word keeps 62 value bits.
pub const MAX_KEY: u64 = (1u64 << 62) - 1;

/// Tag for a buffer cell claimed but not yet committed; outside key space.
const PENDING: u64 = 1 << 63;

const MARK_BIT: u64 = 0b10;
const LEAF_BIT: u64 = 0b01;

/// Packed (value, mark, isleaf) slot word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Word(pub u64);

/// An empty, unmarked leaf slot — the initial state of every slot.
pub(crate) const EMPTY_LEAF: Word = Word(LEAF_BIT);

impl Word {
    pub fn leaf(value: u64) -> Word {
        debug_assert!(value <= MAX_KEY);
        Word(value << 2 | LEAF_BIT)
    }

    pub fn leaf_with_mark(value: u64, mark: bool) -> Word {
        Word(value << 2 | if mark { MARK_BIT } else { 0 } | LEAF_BIT)
    }

    pub fn router(value: u64) -> Word {
        Word(value << 2)
    }

    pub fn value(self) -> u64 {
        self.0 >> 2
    }

    pub fn mark(self) -> bool {
        self.0 & MARK_BIT != 0
    }

    pub fn is_leaf(self) -> bool {
        self.0 & LEAF_BIT != 0
    }

    pub fn marked(self) -> Word {
        Word(self.0 | MARK_BIT)
    }
}

/// A child link: absent, a slot in the same container, or another container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Link {
    None,
    Internal(u32),
    External(*const DeltaNode),
}

pub(crate) fn encode_internal(offset: u32) -> u64 {
    (offset as u64) << 1 | 1
}

pub(crate) fn encode_external(node: *const DeltaNode) -> u64 {
    let raw = node as u64;
    debug_assert_eq!(raw & 1, 0);
    raw
}

pub(crate) fn decode_link(raw: u64) -> Link {
    if raw == 0 {
        Link::None
    } else if raw & 1 == 1 {
        Link::Internal((raw >> 1) as u32)
    } else {
        Link::External(raw as *const DeltaNode)
    }
}

/// One tree slot. The left/right links are wired per the layout table at
/// allocation; only boundary links are ever re-pointed (to child
/// containers) and only under the container lock.
pub(crate) struct Slot {
    pub word: AtomicU64,
    pub left: AtomicU64,
    pub right: AtomicU64,
}

impl Slot {
    fn new() -> Slot {
        Slot {
            word: AtomicU64::new(EMPTY_LEAF.0),
            left: AtomicU64::new(0),
            right: AtomicU64::new(0),
        }
    }

    pub fn load_word(&self, order: Ordering) -> Word {
        Word(self.word.load(order))
    }

    pub fn child(&self, dir: bool) -> &AtomicU64 {
        if dir {
            &self.right
        } else {
            &self.left
        }
    }
}

/// Construction parameters for containers and trees.
#[derive(Debug, Clone, Copy)]
pub struct DeltaParams {
    ub: u64,
    height: u32,
    buffer_capacity: usize,
}

impl DeltaParams {
    /// `ub` must be `2^H - 1`; `buffer_capacity` should be at least the
    /// maximum number of concurrent threads.
    pub fn new(ub: u64, buffer_capacity: usize) -> Result<DeltaParams> {
        let height = crate::veb_layout::delta_height(ub)?;
        if buffer_capacity == 0 {
            return Err(Error::BadBufferCapacity);
        }
        Ok(DeltaParams {
            ub,
            height,
            buffer_capacity,
        })
    }

    pub fn ub(&self) -> u64 {
        self.ub
    }

    /// Container height, `log2(UB + 1)`.
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_capacity
    }
}

/// Outcome of a buffer insertion attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferPut {
    Inserted,
    Duplicate,
    /// Every cell is occupied; the caller must run maintenance and retry.
    Full,
}

const HALF_BIT: u8 = 0b01;
const BUF_BIT: u8 = 0b10;

/// The container: two identically wired tree halves, two overflow buffers,
/// a maintenance lock and an in-flight update counter.
pub struct DeltaNode {
    id: u64,
    half_len: u32,
    layout: Arc<LayoutTable>,
    slots: Box<[Slot]>,
    buffers: [Box<[AtomicU64]>; 2],
    /// bit0 selects the active half, bit1 the active buffer.
    state: AtomicU8,
    pub(crate) lock: AtomicBool,
    pub(crate) opcount: AtomicU32,
    bcount: AtomicI64,
    countnode: AtomicI64,
    pub(crate) child_count: AtomicU32,
    pub(crate) retired: AtomicBool,
    pub(crate) parent: AtomicPtr<DeltaNode>,
    pub(crate) parent_slot: AtomicU32,
    pub(crate) parent_dir: AtomicU8,
    /// Structural depth of this container's root slot in the whole tree
    /// (universe root container = 1). Set when the container is linked
    /// in; merges may leave it one high, which only over-approximates.
    pub(crate) root_depth: AtomicU32,
}

/// Allocate a container: both halves wired per `build_layout(H)`, all
/// slots empty unmarked leaves, lock free, counters zero.
pub fn allocate_delta_node(params: &DeltaParams, id: u64) -> Result<DeltaNode> {
    debug_assert!(id > 0, "container ids start at 1");
    let layout = layout_for(params.height())?;
    let half_len = layout.len() as u32;
    let total = (half_len as usize).checked_mul(2).ok_or(Error::Alloc)?;
    let slots: Box<[Slot]> = (0..total).map(|_| Slot::new()).collect();
    for half in 0..2u32 {
        let base = half * half_len;
        for bfs in 0..half_len as usize {
            let off = layout.offset_of_bfs(bfs);
            let slot = &slots[(base + off) as usize];
            if let Some(l) = layout.left_child(off) {
                slot.left
                    .store(encode_internal(base + l), Ordering::Relaxed);
            }
            if let Some(r) = layout.right_child(off) {
                slot.right
                    .store(encode_internal(base + r), Ordering::Relaxed);
            }
        }
    }
    let mk_buffer = || -> Box<[AtomicU64]> {
        (0..params.buffer_capacity())
            .map(|_| AtomicU64::new(EMPTY))
            .collect()
    };
    Ok(DeltaNode {
        id,
        half_len,
        layout,
        slots,
        buffers: [mk_buffer(), mk_buffer()],
        state: AtomicU8::new(0),
        lock: AtomicBool::new(false),
        opcount: AtomicU32::new(0),
        bcount: AtomicI64::new(0),
        countnode: AtomicI64::new(0),
        child_count: AtomicU32::new(0),
        retired: AtomicBool::new(false),
        parent: AtomicPtr::new(std::ptr::null_mut()),
        parent_slot: AtomicU32::new(u32::MAX),
        parent_dir: AtomicU8::new(0),
        root_depth: AtomicU32::new(1),
    })
}

impl DeltaNode {
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Capacity `UB = 2^H - 1`, the number of slots per half.
    pub fn ub(&self) -> u64 {
        self.half_len as u64
    }

    pub(crate) fn layout(&self) -> &LayoutTable {
        &self.layout
    }

    pub(crate) fn slot(&self, offset: u32) -> &Slot {
        &self.slots[offset as usize]
    }

    pub(crate) fn slot_count(&self) -> u32 {
        2 * self.half_len
    }

    /// Container id carried by a root slot; 0 on interior slots.
    pub fn slot_tid(&self, offset: u32) -> u64 {
        if offset == 0 || offset == self.half_len {
            self.id
        } else {
            0
        }
    }

    /// Snapshot of the (half, buffer) selector. Readers capture it once on
    /// entry and use it for both the descent root and the buffer scan.
    pub(crate) fn epoch(&self) -> u8 {
        self.state.load(Ordering::Acquire)
    }

    pub(crate) fn root_offset(&self, epoch: u8) -> u32 {
        if epoch & HALF_BIT != 0 {
            self.half_len
        } else {
            0
        }
    }

    pub(crate) fn inactive_root_offset(&self, epoch: u8) -> u32 {
        self.root_offset(epoch ^ HALF_BIT)
    }

    pub(crate) fn buffer(&self, epoch: u8) -> &[AtomicU64] {
        &self.buffers[((epoch & BUF_BIT) >> 1) as usize]
    }

    pub(crate) fn inactive_buffer(&self, epoch: u8) -> &[AtomicU64] {
        self.buffer(epoch ^ BUF_BIT)
    }

    /// Flip the active half and buffer together (rebalance/merge switch).
    pub(crate) fn switch_halves(&self, epoch: u8) {
        self.state
            .store(epoch ^ (HALF_BIT | BUF_BIT), Ordering::Release);
    }

    /// Flip only the active buffer (expand keeps the tree half).
    pub(crate) fn switch_buffer(&self, epoch: u8) {
        self.state.store(epoch ^ BUF_BIT, Ordering::Release);
    }

    /// Live-key fraction of capacity; can exceed 1 under buffer pressure.
    pub fn density(&self) -> f64 {
        self.countnode.load(Ordering::Relaxed).max(0) as f64 / self.half_len as f64
    }

    pub fn countnode(&self) -> i64 {
        self.countnode.load(Ordering::Relaxed).max(0)
    }

    pub fn bcount(&self) -> i64 {
        self.bcount.load(Ordering::Relaxed).max(0)
    }

    pub(crate) fn add_countnode(&self, delta: i64) {
        self.countnode.fetch_add(delta, Ordering::Relaxed);
    }

    pub(crate) fn set_counts(&self, countnode: i64, bcount: i64) {
        self.countnode.store(countnode, Ordering::Relaxed);
        self.bcount.store(bcount, Ordering::Relaxed);
    }

    pub(crate) fn set_bcount(&self, bcount: i64) {
        self.bcount.store(bcount, Ordering::Relaxed);
    }

    /// Linear left-to-right scan of the captured buffer. Never blocks.
    pub(crate) fn buffer_find(&self, epoch: u8, v: u64) -> bool {
        self.buffer(epoch)
            .iter()
            .any(|cell| cell.load(Ordering::Acquire) == v)
    }

    /// Claim one empty cell for `v`, refusing duplicates. A claim is
    /// written with the pending tag first and committed to the bare key
    /// only after the lower cells are known not to hold `v`, so finders
    /// and removers never observe an uncommitted copy, and of several
    /// concurrent same-key puts exactly the lowest surviving claim wins.
    pub(crate) fn buffer_put(&self, epoch: u8, v: u64) -> BufferPut {
        debug_assert_ne!(v, EMPTY);
        let pending = v | PENDING;
        let buf = self.buffer(epoch);
        if self.buffer_find(epoch, v) {
            return BufferPut::Duplicate;
        }
        for (i, cell) in buf.iter().enumerate() {
            if cell.load(Ordering::Acquire) != EMPTY {
                continue;
            }
            if cell
                .compare_exchange(EMPTY, pending, Ordering::AcqRel, Ordering::Acquire)
                .is_err()
            {
                // Someone took the cell; it may even hold v now.
                if cell.load(Ordering::Acquire) == v {
                    return BufferPut::Duplicate;
                }
                continue;
            }
            // Resolve against lower cells: a committed v there wins; a
            // pending v there resolves first (its owner is straight-line
            // code away from committing or reverting).
            let mut dup = false;
            'lower: for c in &buf[..i] {
                let mut backoff = Backoff::new();
                loop {
                    match c.load(Ordering::Acquire) {
                        x if x == v => {
                            dup = true;
                            break 'lower;
                        }
                        x if x == pending => backoff.spin(),
                        _ => break,
                    }
                }
            }
            if dup {
                cell.store(EMPTY, Ordering::Release);
                return BufferPut::Duplicate;
            }
            cell.store(v, Ordering::Release);
            self.bcount.fetch_add(1, Ordering::Relaxed);
            self.countnode.fetch_add(1, Ordering::Relaxed);
            return BufferPut::Inserted;
        }
        BufferPut::Full
    }

    /// Exchange `v`'s cell for EMPTY. Exactly one of several concurrent
    /// removers of the same key succeeds (the cell CAS decides).
    pub(crate) fn buffer_remove(&self, epoch: u8, v: u64) -> bool {
        for cell in self.buffer(epoch) {
            if cell.load(Ordering::Acquire) == v
                && cell
                    .compare_exchange(v, EMPTY, Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
            {
                self.bcount.fetch_sub(1, Ordering::Relaxed);
                self.countnode.fetch_sub(1, Ordering::Relaxed);
                return true;
            }
        }
        false
    }

    /// Test-and-set acquire; only maintenance holds this lock. SeqCst
    /// pairs with the flag raise in the update entry protocol (Dekker
    /// handshake: each side must see the other's word).
    pub(crate) fn try_lock(&self) -> bool {
        !self.lock.swap(true, Ordering::SeqCst)
    }

    pub(crate) fn unlock(&self) {
        self.lock.store(false, Ordering::Release);
    }

    pub(crate) fn is_locked(&self) -> bool {
        self.lock.load(Ordering::SeqCst)
    }

    /// Committed cells of the captured buffer (pending claims excluded;
    /// none exist once opcount is drained).
    pub(crate) fn buffer_values(&self, epoch: u8) -> Vec<u64> {
        self.buffer(epoch)
            .iter()
            .map(|c| c.load(Ordering::Acquire))
            .filter(|&v| v != EMPTY && v & PENDING == 0)
            .collect()
    }

    /// In-order unmarked leaf values of the captured half. Requires a
    /// childless container (all leaf-reachable links internal).
    pub(crate) fn live_leaves(&self, epoch: u8) -> Vec<u64> {
        let mut out = Vec::new();
        self.walk_leaves(self.root_offset(epoch), &mut |w| {
            if !w.mark() && w.value() != EMPTY {
                out.push(w.value());
            }
        });
        out
    }

    pub(crate) fn walk_leaves(&self, offset: u32, f: &mut impl FnMut(Word)) {
        let slot = self.slot(offset);
        let w = slot.load_word(Ordering::Acquire);
        if w.is_leaf() {
            f(w);
            return;
        }
        match decode_link(slot.left.load(Ordering::Acquire)) {
            Link::Internal(l) => self.walk_leaves(l, f),
            _ => debug_assert!(false, "router without internal left child"),
        }
        match decode_link(slot.right.load(Ordering::Acquire)) {
            Link::Internal(r) => self.walk_leaves(r, f),
            _ => debug_assert!(false, "router without internal right child"),
        }
    }

    /// All live keys of this container: unmarked leaves plus buffer.
    pub(crate) fn live_values(&self, epoch: u8) -> Vec<u64> {
        let mut vals = self.live_leaves(epoch);
        vals.extend(self.buffer_values(epoch));
        vals.sort_unstable();
        vals.dedup();
        vals
    }
}

/// Bounded exponential backoff for the spin sites; never parks the thread
/// on an OS primitive.
pub(crate) struct Backoff {
    step: u32,
}

impl Backoff {
    pub fn new() -> Backoff {
        Backoff { step: 0 }
    }

    pub fn spin(&mut self) {
        if self.step < 6 {
            for _ in 0..(1u32 << self.step) {
                std::hint::spin_loop();
            }
            self.step += 1;
        } else {
            std::thread::yield_now();
        }
    }
}
