//! van Emde Boas layout arithmetic for complete binary trees.
//!
//! A tree of height `h` is split between the nodes of height `floor(h/2)`
//! and `floor(h/2) + 1`: the top subtree of height `t = floor(h/2)` is laid
//! out first, followed by the `2^t` bottom subtrees of height `h - t`, each
//! occupying a contiguous offset range and each laid out by the same rule,
//! down to single nodes. Odd heights split top-light (top `floor`, bottoms
//! `ceil`), which reproduces the even-height rule exactly when `h` is a
//! power of two.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::{Error, Result};

/// Which child of a parent a node is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildDir {
    Left,
    Right,
}

/// Precomputed vEB layout of a complete binary tree of a given height.
///
/// Offsets are node indices within one contiguous allocation; positions are
/// 0-based BFS indices (root 0, children of `i` at `2i+1` and `2i+2`).
#[derive(Debug)]
pub struct LayoutTable {
    height: u32,
    bfs_to_offset: Vec<u32>,
    left_child_offset: Vec<Option<u32>>,
    right_child_offset: Vec<Option<u32>>,
    parent_offset: Vec<Option<(u32, ChildDir)>>,
    depth_of_offset: Vec<u8>,
}

impl LayoutTable {
    /// Tree height, in node levels.
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Number of nodes, `2^height - 1`.
    pub fn len(&self) -> usize {
        self.bfs_to_offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bfs_to_offset.is_empty()
    }

    /// Memory offset of a BFS position.
    pub fn offset_of_bfs(&self, bfs: usize) -> u32 {
        self.bfs_to_offset[bfs]
    }

    pub fn bfs_to_offset(&self) -> &[u32] {
        &self.bfs_to_offset
    }

    /// Offset of the left child of the node stored at `offset`, if any.
    pub fn left_child(&self, offset: u32) -> Option<u32> {
        self.left_child_offset[offset as usize]
    }

    /// Offset of the right child of the node stored at `offset`, if any.
    pub fn right_child(&self, offset: u32) -> Option<u32> {
        self.right_child_offset[offset as usize]
    }

    /// Offset of the parent of the node stored at `offset`, plus which
    /// child the node is, if it is not the root.
    pub fn parent(&self, offset: u32) -> Option<(u32, ChildDir)> {
        self.parent_offset[offset as usize]
    }

    /// Depth of the node stored at `offset`, root = 1.
    pub fn depth_of(&self, offset: u32) -> u32 {
        self.depth_of_offset[offset as usize] as u32
    }

    /// Offset of the root node (always 0 in this layout).
    pub fn root_offset(&self) -> u32 {
        self.bfs_to_offset[0]
    }
}

/// Assign vEB offsets to the height-`h` subtree rooted at BFS index
/// `root`, starting at `base`. Returns the next free offset.
fn assign(offsets: &mut [u32], root: u64, h: u32, base: u32) -> u32 {
    if h == 1 {
        offsets[root as usize] = base;
        return base + 1;
    }
    let top = h / 2;
    let bottom = h - top;
    let mut next = assign(offsets, root, top, base);
    // Bottom subtree roots are the descendants of `root` at depth `top`.
    let first = ((root + 1) << top) - 1;
    for k in 0..(1u64 << top) {
        next = assign(offsets, first + k, bottom, next);
    }
    next
}

/// Build the vEB layout table for a complete binary tree of height `height`.
pub fn build_layout(height: u32) -> Result<LayoutTable> {
    if height == 0 || height > 32 {
        return Err(Error::HeightOutOfRange(height));
    }
    let n = (1usize << height) - 1;
    let mut bfs_to_offset = vec![u32::MAX; n];
    let end = assign(&mut bfs_to_offset, 0, height, 0);
    debug_assert_eq!(end as usize, n);

    let mut left_child_offset = vec![None; n];
    let mut right_child_offset = vec![None; n];
    let mut parent_offset = vec![None; n];
    let mut depth_of_offset = vec![0u8; n];
    for bfs in 0..n {
        let off = bfs_to_offset[bfs];
        depth_of_offset[off as usize] = ((bfs + 1).ilog2() + 1) as u8;
        let l = 2 * bfs + 1;
        let r = 2 * bfs + 2;
        if r < n {
            left_child_offset[off as usize] = Some(bfs_to_offset[l]);
            right_child_offset[off as usize] = Some(bfs_to_offset[r]);
            parent_offset[bfs_to_offset[l] as usize] = Some((off, ChildDir::Left));
            parent_offset[bfs_to_offset[r] as usize] = Some((off, ChildDir::Right));
        }
    }
    Ok(LayoutTable {
        height,
        bfs_to_offset,
        left_child_offset,
        right_child_offset,
        parent_offset,
        depth_of_offset,
    })
}

/// Shared layout table for `height`, computed once and cached.
pub fn layout_for(height: u32) -> Result<Arc<LayoutTable>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<LayoutTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("layout cache poisoned");
    if let Some(t) = map.get(&height) {
        return Ok(t.clone());
    }
    let t = Arc::new(build_layout(height)?);
    map.insert(height, t.clone());
    Ok(t)
}

/// Container height `H` for capacity `UB`, requiring `UB = 2^H - 1`.
pub fn delta_height(ub: u64) -> Result<u32> {
    if ub == 0 || !(ub + 1).is_power_of_two() {
        return Err(Error::BadCapacity(ub));
    }
    Ok((ub + 1).trailing_zeros())
}

/// Number of distinct B-aligned blocks touched by a path of offsets within
/// one contiguous allocation: the cold-cache transfer count for that path.
pub fn blocks_touched(layout: &LayoutTable, path: &[u32], block: u32) -> u32 {
    assert!(block >= 1, "block size must be >= 1");
    let mut blocks: Vec<u32> = path
        .iter()
        .map(|&off| {
            assert!((off as usize) < layout.len(), "offset outside tree");
            off / block
        })
        .collect();
    blocks.sort_unstable();
    blocks.dedup();
    blocks.len() as u32
}
