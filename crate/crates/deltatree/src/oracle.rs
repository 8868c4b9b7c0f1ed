//! Correctness reference: a sequential sorted-set model, a history
//! recorder, and an exhaustive linearizability checker for small
//! concurrent histories.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::time::Instant;

/// Operation kinds of the set dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Insert,
    Delete,
    Search,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Insert => write!(f, "insert"),
            OpKind::Delete => write!(f, "delete"),
            OpKind::Search => write!(f, "search"),
        }
    }
}

/// One completed operation in a concurrent history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEvent {
    pub tid: u32,
    pub kind: OpKind,
    pub key: u64,
    pub inv_ns: u64,
    pub res_ns: u64,
    pub result: bool,
}

/// Replay a sequence against the sorted-set model: insert true iff absent,
/// delete true iff present, search true iff present.
pub fn sequential_apply(ops: &[(OpKind, u64)]) -> Vec<bool> {
    let mut set = BTreeSet::new();
    ops.iter()
        .map(|&(kind, key)| match kind {
            OpKind::Insert => set.insert(key),
            OpKind::Delete => set.remove(&key),
            OpKind::Search => set.contains(&key),
        })
        .collect()
}

/// Per-thread event log. Each worker owns one; logs are merged after the
/// workers join, so recording takes no locks.
pub struct ThreadLog {
    tid: u32,
    base: Instant,
    events: Vec<HistoryEvent>,
}

impl ThreadLog {
    pub fn new(tid: u32, base: Instant) -> ThreadLog {
        ThreadLog {
            tid,
            base,
            events: Vec::new(),
        }
    }

    /// Run `op`, timestamping immediately before invocation and after
    /// response. Coarse clocks only widen the interval, which is
    /// conservative for the checker.
    pub fn run(&mut self, kind: OpKind, key: u64, op: impl FnOnce() -> bool) -> bool {
        let inv_ns = self.base.elapsed().as_nanos() as u64;
        let result = op();
        let res_ns = self.base.elapsed().as_nanos() as u64;
        self.events.push(HistoryEvent {
            tid: self.tid,
            kind,
            key,
            inv_ns,
            res_ns: res_ns.max(inv_ns + 1),
            result,
        });
        result
    }

    pub fn into_events(self) -> Vec<HistoryEvent> {
        self.events
    }
}

/// Merge per-thread logs into one history ordered by invocation time.
pub fn merge_logs(logs: Vec<ThreadLog>) -> Vec<HistoryEvent> {
    let mut events: Vec<HistoryEvent> = logs.into_iter().flat_map(|l| l.events).collect();
    events.sort_by_key(|e| e.inv_ns);
    events
}

/// True iff some total order of the events, consistent with real-time
/// precedence, replays correctly on the sequential model. Wing–Gong style
/// search with memoized (applied-set, state) pruning; histories are
/// limited to 32 events.
pub fn check_linearizable(events: &[HistoryEvent]) -> bool {
    assert!(events.len() <= 32, "checker limited to 32 events");
    if events.is_empty() {
        return true;
    }
    for e in events {
        assert!(e.inv_ns < e.res_ns, "invocation must precede response");
    }
    let full: u32 = if events.len() == 32 {
        u32::MAX
    } else {
        (1u32 << events.len()) - 1
    };
    let mut memo: HashSet<(u32, Vec<u64>)> = HashSet::new();
    let mut state = BTreeSet::new();
    search(events, 0, &mut state, full, &mut memo)
}

fn search(
    events: &[HistoryEvent],
    applied: u32,
    state: &mut BTreeSet<u64>,
    full: u32,
    memo: &mut HashSet<(u32, Vec<u64>)>,
) -> bool {
    if applied == full {
        return true;
    }
    let key = (applied, state.iter().copied().collect::<Vec<u64>>());
    if memo.contains(&key) {
        return false;
    }
    // An event is a candidate next linearization iff no other pending
    // event completed strictly before it was invoked.
    let min_pending_res = events
        .iter()
        .enumerate()
        .filter(|(i, _)| applied & (1 << i) == 0)
        .map(|(_, e)| e.res_ns)
        .min()
        .unwrap();
    for (i, e) in events.iter().enumerate() {
        if applied & (1 << i) != 0 || e.inv_ns > min_pending_res {
            continue;
        }
        let present = state.contains(&e.key);
        let expect = match e.kind {
            OpKind::Insert => {
                state.insert(e.key);
                !present
            }
            OpKind::Delete => {
                state.remove(&e.key);
                present
            }
            OpKind::Search => present,
        };
        if expect == e.result && search(events, applied | (1 << i), state, full, memo) {
            return true;
        }
        // Undo.
        match e.kind {
            OpKind::Insert if !present => {
                state.remove(&e.key);
            }
            OpKind::Delete if present => {
                state.insert(e.key);
            }
            _ => {}
        }
    }
    memo.insert(key);
    false
}

/// Serialize a history to the line format `tid op key inv_ns res_ns
/// result`.
pub fn history_to_text(events: &[HistoryEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            e.tid, e.kind, e.key, e.inv_ns, e.res_ns, e.result
        ));
    }
    out
}

pub fn history_from_text(text: &str) -> Result<Vec<HistoryEvent>, String> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(format!("line {}: expected 6 fields", ln + 1));
        }
        let kind = match fields[1] {
            "insert" => OpKind::Insert,
            "delete" => OpKind::Delete,
            "search" => OpKind::Search,
            other => return Err(format!("line {}: unknown op {other:?}", ln + 1)),
        };
        let parse = |s: &str| -> Result<u64, String> {
            s.parse().map_err(|e| format!("line {}: {e}", ln + 1))
        };
        out.push(HistoryEvent {
            tid: parse(fields[0])? as u32,
            kind,
            key: parse(fields[2])?,
            inv_ns: parse(fields[3])?,
            res_ns: parse(fields[4])?,
            result: match fields[5] {
                "true" => true,
                "false" => false,
                other => return Err(format!("line {}: bad result {other:?}", ln + 1)),
            },
        });
    }
    Ok(out)
}
