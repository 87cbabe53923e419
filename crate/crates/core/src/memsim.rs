//! Two-tier memory model.
//!
//! Untrusted memory (UM) is a set of arenas of fixed-width slots. Every slot
//! access is appended to a [`Trace`] before any data moves. Trusted memory
//! (TM) is a word budget: holding tuples, counters or histograms inside the
//! trusted module is accounted against it, and nothing in TM is traced.

use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::relmodel::{Schema, Tuple};

pub type ArenaId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "R")]
    Read,
    #[serde(rename = "W")]
    Write,
}

/// One observable UM access. Carries the location only, never the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessEvent {
    pub op: Op,
    pub arena: u32,
    pub slot: u32,
}

impl AccessEvent {
    fn canonical(&self) -> [u8; 17] {
        let mut b = [0u8; 17];
        b[0] = match self.op {
            Op::Read => b'R',
            Op::Write => b'W',
        };
        b[1..9].copy_from_slice(&(self.arena as u64).to_le_bytes());
        b[9..17].copy_from_slice(&(self.slot as u64).to_le_bytes());
        b
    }
}

pub type Trace = Vec<AccessEvent>;

/// SHA-256 over the canonical 17-byte serialization of each event.
pub fn trace_digest(trace: &[AccessEvent]) -> [u8; 32] {
    let mut h = Sha256::new();
    for e in trace {
        h.update(e.canonical());
    }
    h.finalize().into()
}

/// How much of the trace to retain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Keep every event.
    Full,
    /// Keep only a running digest and the event count.
    Digest,
    /// Keep only the event count.
    Count,
}

#[derive(Clone)]
struct Recorder {
    mode: TraceMode,
    events: Vec<AccessEvent>,
    len: u64,
    hasher: Sha256,
    pending: Vec<u8>,
}

const DIGEST_BATCH: usize = 17 * 4096;

impl Recorder {
    fn new(mode: TraceMode) -> Self {
        Recorder {
            mode,
            events: Vec::new(),
            len: 0,
            hasher: Sha256::new(),
            pending: Vec::new(),
        }
    }

    #[inline]
    fn record(&mut self, op: Op, arena: ArenaId, slot: usize) {
        self.len += 1;
        let ev = AccessEvent {
            op,
            arena: arena as u32,
            slot: slot as u32,
        };
        match self.mode {
            TraceMode::Full => self.events.push(ev),
            TraceMode::Digest => {
                self.pending.extend_from_slice(&ev.canonical());
                if self.pending.len() >= DIGEST_BATCH {
                    self.hasher.update(&self.pending);
                    self.pending.clear();
                }
            }
            TraceMode::Count => {}
        }
    }

    fn digest(&self) -> Option<[u8; 32]> {
        match self.mode {
            TraceMode::Full => Some(trace_digest(&self.events)),
            TraceMode::Digest => {
                let mut h = self.hasher.clone();
                h.update(&self.pending);
                Some(h.finalize().into())
            }
            TraceMode::Count => None,
        }
    }
}

/// Contents of a UM slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Vacant,
    Row(Tuple),
    /// Padding that compares above every row.
    Sentinel,
}

struct Arena {
    slot_width: usize,
    capacity: usize,
    data: Option<Vec<Slot>>,
}

/// The untrusted store: arenas plus the access trace and layout log.
pub struct UntrustedMemory {
    arenas: Vec<Arena>,
    layout: Vec<(ArenaId, usize)>,
    rec: Recorder,
}

impl UntrustedMemory {
    pub fn new(mode: TraceMode) -> Self {
        UntrustedMemory {
            arenas: Vec::new(),
            layout: Vec::new(),
            rec: Recorder::new(mode),
        }
    }

    /// Allocates a fresh arena. Not an access event; logged in the layout log.
    pub fn alloc(&mut self, slot_width: usize, capacity: usize) -> ArenaId {
        let id = self.arenas.len();
        self.arenas.push(Arena {
            slot_width,
            capacity,
            data: Some(vec![Slot::Vacant; capacity]),
        });
        self.layout.push((id, capacity));
        id
    }

    /// Drops an arena's backing store. Its id is never reused.
    pub fn free(&mut self, id: ArenaId) {
        if let Some(a) = self.arenas.get_mut(id) {
            a.data = None;
        }
    }

    pub fn capacity(&self, id: ArenaId) -> usize {
        self.arenas[id].capacity
    }

    pub fn slot_width(&self, id: ArenaId) -> usize {
        self.arenas[id].slot_width
    }

    fn check(&self, id: ArenaId, slot: usize) -> Result<()> {
        let a = self.arenas.get(id).ok_or(Error::ArenaFreed(id))?;
        if a.data.is_none() {
            return Err(Error::ArenaFreed(id));
        }
        if slot >= a.capacity {
            return Err(Error::OutOfBounds {
                arena: id,
                slot,
                capacity: a.capacity,
            });
        }
        Ok(())
    }

    fn data(&mut self, id: ArenaId) -> &mut Vec<Slot> {
        self.arenas[id].data.as_mut().expect("checked")
    }

    pub fn read_slot(&mut self, id: ArenaId, slot: usize) -> Result<Slot> {
        self.check(id, slot)?;
        self.rec.record(Op::Read, id, slot);
        Ok(self.data(id)[slot].clone())
    }

    pub fn read(&mut self, id: ArenaId, slot: usize) -> Result<Tuple> {
        match self.read_slot(id, slot)? {
            Slot::Row(t) => Ok(t),
            _ => Err(Error::EmptySlot { arena: id, slot }),
        }
    }

    pub fn write_slot(&mut self, id: ArenaId, slot: usize, value: Slot) -> Result<()> {
        self.check(id, slot)?;
        self.rec.record(Op::Write, id, slot);
        self.data(id)[slot] = value;
        Ok(())
    }

    pub fn write(&mut self, id: ArenaId, slot: usize, t: Tuple) -> Result<()> {
        self.write_slot(id, slot, Slot::Row(t))
    }

    /// Reads slots `i` and `j`, then writes both back, swapped when
    /// `swap(&slot_i, &slot_j)` says so. Always four events.
    pub fn compare_exchange(
        &mut self,
        id: ArenaId,
        i: usize,
        j: usize,
        swap: impl FnOnce(&Slot, &Slot) -> bool,
    ) -> Result<()> {
        self.check(id, i)?;
        self.check(id, j)?;
        self.rec.record(Op::Read, id, i);
        self.rec.record(Op::Read, id, j);
        let data = self.data(id);
        let s = swap(&data[i], &data[j]);
        if s {
            data.swap(i, j);
        }
        self.rec.record(Op::Write, id, i);
        self.rec.record(Op::Write, id, j);
        Ok(())
    }

    /// Untraced view of an arena, for inspection in tests and debugging only.
    pub fn inspect(&self, id: ArenaId) -> Result<&[Slot]> {
        self.arenas
            .get(id)
            .and_then(|a| a.data.as_deref())
            .ok_or(Error::ArenaFreed(id))
    }

    pub fn trace(&self) -> &[AccessEvent] {
        &self.rec.events
    }

    pub fn trace_len(&self) -> u64 {
        self.rec.len
    }

    pub fn digest(&self) -> Option<[u8; 32]> {
        self.rec.digest()
    }

    pub fn mode(&self) -> TraceMode {
        self.rec.mode
    }

    pub fn layout(&self) -> &[(ArenaId, usize)] {
        &self.layout
    }

    /// Header line followed by one JSON object per event.
    pub fn export_jsonl(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::json!({ "arenas": self.layout });
        writeln!(w, "{header}")?;
        for e in &self.rec.events {
            let op = match e.op {
                Op::Read => "R",
                Op::Write => "W",
            };
            writeln!(w, "{{\"op\":\"{op}\",\"arena\":{},\"slot\":{}}}", e.arena, e.slot)?;
        }
        Ok(())
    }
}

/// Parses a trace file written by [`UntrustedMemory::export_jsonl`].
pub fn import_jsonl(text: &str) -> Result<(Vec<(ArenaId, usize)>, Trace)> {
    #[derive(Deserialize)]
    struct Header {
        arenas: Vec<(ArenaId, usize)>,
    }
    let mut lines = text.lines();
    let header: Header = serde_json::from_str(lines.next().unwrap_or("{\"arenas\":[]}"))?;
    let events = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<AccessEvent>(l).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok((header.arenas, events))
}

pub const DEFAULT_TM_CONSTANT: usize = 64;

/// `ceil(log2(x))` for `x >= 1`.
pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// `c * ceil(log2(n + m + 2))` TM words.
pub fn tm_budget_for(c: usize, n: u64, m: u64) -> usize {
    c * ceil_log2(n + m + 2) as usize
}

#[derive(Debug)]
struct TmState {
    c: usize,
    budget: usize,
    in_use: usize,
    peak: usize,
    counter_high_water: usize,
    sizes: (u64, u64),
}

/// Capacity-accounted trusted scratchpad.
///
/// Allocations return a guard that returns its words on drop. The budget is
/// `c * ceil(log2(n + m + 2))`, recomputed whenever a larger input or output
/// size becomes known to the engine.
#[derive(Clone, Debug)]
pub struct TrustedMemory(Rc<RefCell<TmState>>);

#[must_use]
pub struct TmGuard {
    tm: TrustedMemory,
    words: usize,
}

impl Drop for TmGuard {
    fn drop(&mut self) {
        self.tm.0.borrow_mut().in_use -= self.words;
    }
}

impl TmGuard {
    /// Adjusts the held amount, e.g. when a counter set grows or shrinks.
    pub fn resize(&mut self, words: usize) -> Result<()> {
        if words > self.words {
            let extra = words - self.words;
            self.tm.charge(extra)?;
        } else {
            self.tm.0.borrow_mut().in_use -= self.words - words;
        }
        self.words = words;
        Ok(())
    }
}

impl TrustedMemory {
    pub fn new(c: usize) -> Self {
        TrustedMemory(Rc::new(RefCell::new(TmState {
            c,
            budget: tm_budget_for(c, 0, 0),
            in_use: 0,
            peak: 0,
            counter_high_water: 0,
            sizes: (0, 0),
        })))
    }

    /// Fixed budget, ignoring size declarations.
    pub fn with_budget(words: usize) -> Self {
        let tm = TrustedMemory::new(0);
        tm.0.borrow_mut().budget = words;
        tm
    }

    /// Records the public input size `n` and output size `m` seen so far.
    pub fn declare_sizes(&self, n: u64, m: u64) {
        let mut s = self.0.borrow_mut();
        s.sizes.0 = s.sizes.0.max(n);
        s.sizes.1 = s.sizes.1.max(m);
        if s.c > 0 {
            let b = tm_budget_for(s.c, s.sizes.0, s.sizes.1);
            s.budget = s.budget.max(b);
        }
    }

    fn charge(&self, words: usize) -> Result<()> {
        let mut s = self.0.borrow_mut();
        if s.in_use + words > s.budget {
            return Err(Error::TmBudgetExceeded {
                requested: words,
                in_use: s.in_use,
                budget: s.budget,
            });
        }
        s.in_use += words;
        s.peak = s.peak.max(s.in_use);
        Ok(())
    }

    pub fn alloc(&self, words: usize) -> Result<TmGuard> {
        self.charge(words)?;
        Ok(TmGuard {
            tm: self.clone(),
            words,
        })
    }

    pub fn budget(&self) -> usize {
        self.0.borrow().budget
    }

    pub fn in_use(&self) -> usize {
        self.0.borrow().in_use
    }

    pub fn peak(&self) -> usize {
        self.0.borrow().peak
    }

    pub fn sizes(&self) -> (u64, u64) {
        self.0.borrow().sizes
    }

    pub fn note_counters(&self, k: usize) {
        let mut s = self.0.borrow_mut();
        s.counter_high_water = s.counter_high_water.max(k);
    }

    pub fn counter_high_water(&self) -> usize {
        self.0.borrow().counter_high_water
    }
}

/// A relation materialized in one UM arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelHandle {
    pub schema: Arc<Schema>,
    pub arena: ArenaId,
    pub len: usize,
}

/// One query execution: its UM arenas, trace and TM.
pub struct Machine {
    pub um: UntrustedMemory,
    pub tm: TrustedMemory,
}

impl Machine {
    pub fn new(mode: TraceMode) -> Self {
        Machine {
            um: UntrustedMemory::new(mode),
            tm: TrustedMemory::new(DEFAULT_TM_CONSTANT),
        }
    }

    pub fn with_tm(mode: TraceMode, tm: TrustedMemory) -> Self {
        Machine {
            um: UntrustedMemory::new(mode),
            tm,
        }
    }

    pub fn alloc_rel(&mut self, schema: Arc<Schema>, len: usize) -> RelHandle {
        let arena = self.um.alloc(schema.slot_width(), len);
        RelHandle { schema, arena, len }
    }

    pub fn free(&mut self, r: &RelHandle) {
        self.um.free(r.arena);
    }

    /// Writes `tuples` into a fresh arena, one write per tuple. The rows
    /// count towards the public input size that sizes the TM budget.
    pub fn load(&mut self, schema: Schema, tuples: &[Tuple]) -> Result<RelHandle> {
        for t in tuples {
            schema.check_tuple(t)?;
        }
        let (n, m) = self.tm.sizes();
        self.tm.declare_sizes(n + tuples.len() as u64, m);
        let h = self.alloc_rel(Arc::new(schema), tuples.len());
        for (i, t) in tuples.iter().enumerate() {
            self.um.write(h.arena, i, t.clone())?;
        }
        Ok(h)
    }

    /// Reads the relation back out, one read per tuple.
    pub fn unload(&mut self, r: &RelHandle) -> Result<Vec<Tuple>> {
        (0..r.len).map(|i| self.um.read(r.arena, i)).collect()
    }

    /// Untraced copy of a relation's rows.
    pub fn inspect(&self, r: &RelHandle) -> Result<Vec<Tuple>> {
        self.um
            .inspect(r.arena)?
            .iter()
            .enumerate()
            .map(|(slot, s)| match s {
                Slot::Row(t) => Ok(t.clone()),
                _ => Err(Error::EmptySlot { arena: r.arena, slot }),
            })
            .collect()
    }
}
