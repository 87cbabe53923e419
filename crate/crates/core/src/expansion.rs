//! Oblivious expansion: replace every tuple by `W` copies of itself.
//!
//! [`expand_prefix_heavy`] streams a prefix-heavy weighted sequence and
//! emits a fixed number of output rows per input row, keeping the surplus
//! of heavy rows as counters in TM. [`expand`] handles arbitrary weights by
//! rounding them to powers of two, padding with one dummy row so that the
//! rounded total is exactly `2m`, and reordering the rows into a sequence
//! that needs few counters.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::memsim::{ceil_log2, Machine, RelHandle};
use crate::primitives::{
    filter_by, fold_sum, gen_union, grouping_identity, map_rows, obl_project, obl_sort, tm_fold, Fold,
    FoldResult,
};
use crate::relmodel::{Attr, Direction, SortKey, Tuple, Value};

const ROUNDED: &str = "#xw";
const ID: &str = "#xid";
const RANK: &str = "#xrank";
const SLOT: &str = "#xslot";

/// Smallest power of two `>= w`, with `0` mapped to `0`.
pub fn round_pow2(w: u64) -> u64 {
    if w == 0 {
        0
    } else {
        w.next_power_of_two()
    }
}

/// Counter bound the reordered expansion is held to: `ceil(log2(2m)) + 2`.
pub fn counter_bound(m: u64) -> usize {
    ceil_log2(2 * m.max(1)) as usize + 2
}

/// A weighted sequence held in TM, used for checks and for dry runs of the
/// expansion schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedSeq<T>(pub Vec<(T, u64)>);

impl<T: Clone> WeightedSeq<T> {
    pub fn weights(&self) -> Vec<u64> {
        self.0.iter().map(|(_, w)| *w).collect()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|(_, w)| *w).sum()
    }

    pub fn is_prefix_heavy(&self) -> bool {
        prefix_heavy_violation(&self.weights()).is_none()
    }

    /// Runs the expansion schedule without touching UM.
    pub fn expand(&self, record_steps: bool) -> Result<(Vec<T>, CounterStats)> {
        let mut ex = Expander::new(self.0.len() as u64, self.total(), record_steps);
        let mut out = Vec::with_capacity(self.total() as usize);
        for (i, (r, w)) in self.0.iter().enumerate() {
            ex.step(i, r.clone(), *w, |t| {
                out.push(t.clone());
                Ok(())
            })?;
        }
        Ok((out, ex.finish()?))
    }
}

/// First 1-based prefix length whose average falls below the overall
/// average, if any.
pub fn prefix_heavy_violation(weights: &[u64]) -> Option<usize> {
    let n = weights.len() as u128;
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    let mut prefix = 0u128;
    for (i, &w) in weights.iter().enumerate() {
        prefix += w as u128;
        if prefix * n < (i as u128 + 1) * total {
            return Some(i + 1);
        }
    }
    None
}

/// Rows emitted after the first `i` input steps: `i * total / n` rounded
/// half up.
pub fn cumulative_quota(i: u64, n: u64, total: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let (i, n, total) = (i as u128, n as u128, total as u128);
    ((2 * i * total + n) / (2 * n)) as u64
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepLog {
    /// Input positions (0-based) of the rows emitted in this step.
    pub emitted: Vec<usize>,
    /// `(input position, remaining copies)` after the step.
    pub counters: Vec<(usize, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CounterStats {
    pub max_counters: usize,
    pub steps: Option<Vec<StepLog>>,
}

/// TM state of one expansion pass.
struct Expander<T> {
    n: u64,
    total: u64,
    done: u64,
    counters: VecDeque<(usize, T, u64)>,
    max_counters: usize,
    steps: Option<Vec<StepLog>>,
}

impl<T: Clone> Expander<T> {
    fn new(n: u64, total: u64, record_steps: bool) -> Self {
        Expander {
            n,
            total,
            done: 0,
            counters: VecDeque::new(),
            max_counters: 0,
            steps: record_steps.then(Vec::new),
        }
    }

    fn step(&mut self, pos: usize, rec: T, w: u64, mut emit: impl FnMut(&T) -> Result<()>) -> Result<()> {
        let i = self.done + 1;
        let mut cur = cumulative_quota(i, self.n, self.total) - cumulative_quota(i - 1, self.n, self.total);
        self.done = i;
        let mut log = self.steps.as_ref().map(|_| StepLog::default());
        let mut put = |p: usize, t: &T, k: u64, log: &mut Option<StepLog>| -> Result<()> {
            for _ in 0..k {
                emit(t)?;
            }
            if let Some(l) = log {
                l.emitted.extend(std::iter::repeat_n(p, k as usize));
            }
            Ok(())
        };
        if w <= cur {
            put(pos, &rec, w, &mut log)?;
            cur -= w;
        } else {
            // counters are created in input order, so the front is the argmin
            self.counters.push_back((pos, rec, w));
            self.max_counters = self.max_counters.max(self.counters.len());
        }
        while cur > 0 {
            let (p, t, c) = self
                .counters
                .front_mut()
                .ok_or(Error::NotPrefixHeavy { step: i as usize })?;
            if *c > cur {
                put(*p, t, cur, &mut log)?;
                *c -= cur;
                cur = 0;
            } else {
                put(*p, t, *c, &mut log)?;
                cur -= *c;
                self.counters.pop_front();
            }
        }
        if let (Some(steps), Some(l)) = (self.steps.as_mut(), log) {
            let mut l = l;
            l.counters = self.counters.iter().map(|(p, _, c)| (*p, *c)).collect();
            steps.push(l);
        }
        Ok(())
    }

    fn finish(self) -> Result<CounterStats> {
        if !self.counters.is_empty() {
            return Err(Error::SizeMismatch(format!(
                "weights exceed the declared total {}",
                self.total
            )));
        }
        Ok(CounterStats {
            max_counters: self.max_counters,
            steps: self.steps,
        })
    }
}

/// Expands a prefix-heavy sequence of `total` rows in one pass.
///
/// Step `i` reads row `i` and writes exactly
/// `cumulative_quota(i) - cumulative_quota(i - 1)` rows, so the trace is a
/// function of `(|R|, total)`. Counters hold whole tuples in TM.
pub fn expand_prefix_heavy(
    m: &mut Machine,
    r: &RelHandle,
    weight: &str,
    total: u64,
    record_steps: bool,
) -> Result<(RelHandle, CounterStats)> {
    let wc = r.schema.index_of(weight)?;
    let per_counter = r.schema.tuple_words() + 1;
    let _state = m.tm.alloc(r.schema.tuple_words() + 4)?;
    let mut held = m.tm.alloc(0)?;
    let out = m.alloc_rel(r.schema.clone(), total as usize);
    let mut ex = Expander::new(r.len as u64, total, record_steps);
    let mut next = 0usize;
    for i in 0..r.len {
        let t = m.um.read(r.arena, i)?;
        let w = weight_of(&t, wc)?;
        held.resize((ex.counters.len() + 1) * per_counter)?;
        let um = &mut m.um;
        ex.step(i, t, w, |t| {
            um.write(out.arena, next, t.clone())?;
            next += 1;
            Ok(())
        })?;
        held.resize(ex.counters.len() * per_counter)?;
    }
    let stats = ex.finish()?;
    m.tm.note_counters(stats.max_counters);
    Ok((out, stats))
}

fn weight_of(t: &Tuple, col: usize) -> Result<u64> {
    match &t[col] {
        Value::Null => Ok(0),
        Value::Int(w) if *w >= 0 => Ok(*w as u64),
        v => Err(Error::InvalidQuery(format!("expansion weight {v:?} is not a non-negative integer"))),
    }
}

/// TM-resident histogram of rounded weights.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundedDistribution {
    pub classes: BTreeMap<u64, u64>,
}

impl RoundedDistribution {
    pub fn from_weights(weights: &[u64]) -> Self {
        let mut classes = BTreeMap::new();
        for &w in weights {
            *classes.entry(w).or_insert(0) += 1;
        }
        RoundedDistribution { classes }
    }

    pub fn from_fold(f: &FoldResult) -> Result<Self> {
        let FoldResult::Histogram(h) = f else {
            return Err(Error::InternalSchedule("expected a histogram".into()));
        };
        let mut classes = BTreeMap::new();
        for (k, &c) in h {
            let w = match k {
                Value::Null => 0,
                Value::Int(w) if *w >= 0 => *w as u64,
                v => return Err(Error::InternalSchedule(format!("bad weight class {v:?}"))),
            };
            *classes.entry(w).or_insert(0) += c;
        }
        Ok(RoundedDistribution { classes })
    }

    pub fn rows(&self) -> u64 {
        self.classes.values().sum()
    }

    pub fn total(&self) -> u64 {
        self.classes.iter().map(|(w, c)| w * c).sum()
    }

    pub fn words(&self) -> usize {
        2 * self.classes.len()
    }

    /// The weight sequence the reorder produces.
    pub fn schedule(&self) -> Result<Vec<u64>> {
        let mut g = GreedySchedule::new(self);
        let mut out = Vec::with_capacity(self.rows() as usize);
        while let Some(c) = g.next_class()? {
            out.push(c);
        }
        Ok(out)
    }
}

/// Deterministic placement of weight classes. At each position it takes the
/// lightest remaining class that keeps the prefix at or above the running
/// average, otherwise the heaviest remaining class.
struct GreedySchedule {
    remaining: Vec<(u64, u64)>,
    n: u128,
    total: u128,
    prefix: u128,
    pos: u64,
}

impl GreedySchedule {
    fn new(d: &RoundedDistribution) -> Self {
        GreedySchedule {
            remaining: d.classes.iter().map(|(&w, &c)| (w, c)).collect(),
            n: d.rows() as u128,
            total: d.total() as u128,
            prefix: 0,
            pos: 0,
        }
    }

    fn next_class(&mut self) -> Result<Option<u64>> {
        let pos = self.pos as u128 + 1;
        let need = pos * self.total;
        let pick = self
            .remaining
            .iter()
            .position(|&(w, c)| c > 0 && (self.prefix + w as u128) * self.n >= need)
            .or_else(|| self.remaining.iter().rposition(|&(_, c)| c > 0));
        let Some(k) = pick else {
            return Ok(None);
        };
        let w = self.remaining[k].0;
        self.remaining[k].1 -= 1;
        self.prefix += w as u128;
        self.pos += 1;
        if self.prefix * self.n < need {
            return Err(Error::InternalSchedule(format!(
                "schedule is not prefix-heavy at position {pos}"
            )));
        }
        Ok(Some(w))
    }

    /// Advances to the next position holding class `w`.
    fn next_slot_of(&mut self, w: u64) -> Result<u64> {
        loop {
            match self.next_class()? {
                Some(c) if c == w => return Ok(self.pos),
                Some(_) => {}
                None => {
                    return Err(Error::InternalSchedule(format!(
                        "more rows of weight {w} than the distribution holds"
                    )))
                }
            }
        }
    }
}

/// Reorders `r` so its `weight` sequence follows the greedy schedule of
/// `dist`.
///
/// Rows are sorted by (weight desc, `id` asc); one scan then assigns the
/// k-th row of each class the position of the k-th occurrence of that class
/// in the schedule, which is replayed in TM; a second sort moves rows to
/// their positions.
pub fn reorder_barely_prefix_heavy(
    m: &mut Machine,
    r: &RelHandle,
    weight: &str,
    id: &str,
    dist: &RoundedDistribution,
) -> Result<RelHandle> {
    if dist.rows() != r.len as u64 {
        return Err(Error::InternalSchedule(format!(
            "distribution covers {} rows, relation has {}",
            dist.rows(),
            r.len
        )));
    }
    let wc = r.schema.index_of(weight)?;
    let by_class = obl_sort(
        m,
        r,
        &SortKey(vec![(weight.to_string(), Direction::Desc), (id.to_string(), Direction::Asc)]),
    )?;
    let _held = m.tm.alloc(dist.words() + 2 * dist.classes.len() + 4)?;
    let slotted_schema = r.schema.extended(Attr::int(SLOT))?;
    let mut current: Option<(u64, GreedySchedule)> = None;
    let slotted = map_rows(m, &by_class, slotted_schema, |t| {
        let w = weight_of(t, wc)?;
        if current.as_ref().map(|(c, _)| *c) != Some(w) {
            current = Some((w, GreedySchedule::new(dist)));
        }
        let slot = current.as_mut().unwrap().1.next_slot_of(w)?;
        Ok(t.with_appended(Value::Int(slot as i64)))
    })?;
    m.free(&by_class);
    let placed = obl_sort(m, &slotted, &SortKey::asc(&[SLOT]))?;
    m.free(&slotted);
    let out = obl_project(m, &placed, &r.schema.names())?;
    m.free(&placed);
    Ok(out)
}

/// Public sizes and TM measurements of one expansion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpandStats {
    pub output_len: u64,
    pub counters: CounterStats,
}

/// `Expand_W(R)`: exactly `t[W]` copies of every tuple `t`, in a trace that
/// depends only on `(|R|, Σ W)`.
pub fn expand(m: &mut Machine, r: &RelHandle, w: &str) -> Result<RelHandle> {
    Ok(expand_with_stats(m, r, w)?.0)
}

pub fn expand_with_stats(m: &mut Machine, r: &RelHandle, w: &str) -> Result<(RelHandle, ExpandStats)> {
    let wc = r.schema.index_of(w)?;
    let total = fold_sum(m, r, w)?;
    if total < 0 {
        return Err(Error::InvalidQuery(format!("weights of `{w}` sum to {total}")));
    }
    let total = total as u64;
    m.tm.declare_sizes(0, total);
    if total == 0 {
        let out = m.alloc_rel(r.schema.clone(), 0);
        return Ok((out, ExpandStats::default()));
    }

    let rounded = crate::primitives::augment(m, r, Attr::int(ROUNDED), |t| {
        Ok(Value::Int(round_pow2(weight_of(t, wc)?) as i64))
    })?;
    let m_rounded = fold_sum(m, &rounded, ROUNDED)? as u64;
    if m_rounded >= 2 * total {
        return Err(Error::InternalSchedule(format!(
            "rounded total {m_rounded} is not below {}",
            2 * total
        )));
    }
    let mut dummy = vec![Value::Null; rounded.schema.arity()];
    dummy[wc] = Value::Int(0);
    dummy[rounded.schema.arity() - 1] = Value::Int((2 * total - m_rounded) as i64);
    let dummy = m.load((*rounded.schema).clone(), &[Tuple::new(dummy)])?;
    let padded = gen_union(m, &rounded, &dummy)?;
    m.free(&rounded);
    m.free(&dummy);

    let dist = RoundedDistribution::from_fold(&tm_fold(m, &padded, &Fold::Histogram(ROUNDED.into()))?)?;
    let _dist_held = m.tm.alloc(dist.words())?;
    let with_id = grouping_identity::<&str>(m, &padded, &[], &SortKey::default(), ID)?;
    m.free(&padded);
    let ordered = reorder_barely_prefix_heavy(m, &with_id, ROUNDED, ID, &dist)?;
    m.free(&with_id);
    let (expanded, counters) = expand_prefix_heavy(m, &ordered, ROUNDED, 2 * total, false).map_err(|e| match e {
        Error::NotPrefixHeavy { step } => {
            Error::InternalSchedule(format!("reordered sequence ran out of counters at step {step}"))
        }
        e => e,
    })?;
    m.free(&ordered);

    let ranked = grouping_identity(m, &expanded, &[ID], &SortKey::default(), RANK)?;
    m.free(&expanded);
    let rank = ranked.schema.index_of(RANK)?;
    let kept = filter_by(
        m,
        &ranked,
        |t| matches!((&t[rank], &t[wc]), (Value::Int(k), Value::Int(w)) if k <= w),
        total as usize,
    )?;
    m.free(&ranked);
    let out = obl_project(m, &kept, &r.schema.names())?;
    m.free(&kept);
    Ok((
        out,
        ExpandStats {
            output_len: total,
            counters,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memsim::TraceMode;
    use crate::relmodel::Schema;

    fn seq(ws: &[(&'static str, u64)]) -> WeightedSeq<&'static str> {
        WeightedSeq(ws.to_vec())
    }

    #[test]
    fn fixed_three_row_schedule() {
        let (out, stats) = seq(&[("a", 4), ("b", 1), ("c", 2)]).expand(true).unwrap();
        assert_eq!(out, vec!["a", "a", "b", "a", "a", "c", "c"]);
        let steps = stats.steps.unwrap();
        assert_eq!(steps[0].emitted, vec![0, 0]);
        assert_eq!(steps[0].counters, vec![(0, 2)]);
        assert_eq!(steps[1].emitted, vec![1, 0, 0]);
        assert!(steps[1].counters.is_empty());
        assert_eq!(steps[2].emitted, vec![2, 2]);
        assert!(steps[2].counters.is_empty());
        assert_eq!(stats.max_counters, 1);
    }

    #[test]
    fn prefix_heavy_examples() {
        assert!(seq(&[("a", 4), ("b", 1), ("c", 2)]).is_prefix_heavy());
        assert!(!seq(&[("b", 1), ("a", 4), ("c", 2)]).is_prefix_heavy());
        assert_eq!(prefix_heavy_violation(&[1, 4, 2]), Some(1));
        assert_eq!(prefix_heavy_violation(&[]), None);
    }

    #[test]
    fn unit_weights_need_no_counters() {
        let (out, stats) = seq(&[("a", 1), ("b", 1), ("c", 1)]).expand(false).unwrap();
        assert_eq!(out, vec!["a", "b", "c"]);
        assert_eq!(stats.max_counters, 0);
    }

    #[test]
    fn one_heavy_head() {
        let (out, stats) = seq(&[("x", 3), ("y", 0), ("z", 0)]).expand(true).unwrap();
        assert_eq!(out, vec!["x", "x", "x"]);
        assert_eq!(stats.max_counters, 1);
        let per_step: Vec<usize> = stats.steps.unwrap().iter().map(|s| s.emitted.len()).collect();
        assert_eq!(per_step, vec![1, 1, 1]);
    }

    #[test]
    fn not_prefix_heavy_is_detected() {
        let err = seq(&[("b", 1), ("a", 4), ("c", 2)]).expand(false).unwrap_err();
        assert!(matches!(err, Error::NotPrefixHeavy { step: 1 }));
    }

    #[test]
    fn quota_rounds_half_up() {
        let q: Vec<u64> = (0..=3).map(|i| cumulative_quota(i, 3, 7)).collect();
        assert_eq!(q, vec![0, 2, 5, 7]);
        assert_eq!(cumulative_quota(5, 0, 0), 0);
    }

    #[test]
    fn rounding() {
        let r: Vec<u64> = [0, 1, 2, 3, 4, 5, 8, 9].iter().map(|&w| round_pow2(w)).collect();
        assert_eq!(r, vec![0, 1, 2, 4, 4, 8, 8, 16]);
    }

    #[test]
    fn greedy_spreads_heavy_rows() {
        let mut w = vec![4u64; 8];
        w.extend(vec![0u64; 24]);
        let s = RoundedDistribution::from_weights(&w).schedule().unwrap();
        assert_eq!(&s[..8], &[4, 0, 0, 0, 4, 0, 0, 0]);
        let (_, stats) = WeightedSeq(s.iter().map(|&w| ((), w)).collect()).expand(false).unwrap();
        assert_eq!(stats.max_counters, 1);
    }

    #[test]
    fn greedy_mixed_classes() {
        let w = [8u64, 1, 1, 1, 1, 1, 1, 2];
        let s = RoundedDistribution::from_weights(&w).schedule().unwrap();
        // position 1 needs a prefix of 2, so class 2 fits before class 8
        assert_eq!(s, vec![2, 8, 1, 1, 1, 1, 1, 1]);
        assert_eq!(prefix_heavy_violation(&s), None);
        let (_, stats) = WeightedSeq(s.iter().map(|&w| ((), w)).collect()).expand(false).unwrap();
        assert!(stats.max_counters <= counter_bound(16));
    }

    fn unit(ws: &[u64]) -> WeightedSeq<()> {
        WeightedSeq(ws.iter().map(|&w| ((), w)).collect())
    }

    /// Weights as `expand` sees them: rounded, plus the dummy row.
    fn padded_rounded(ws: &[u64]) -> (Vec<u64>, u64) {
        let m: u64 = ws.iter().sum();
        let mut r: Vec<u64> = ws.iter().map(|&w| round_pow2(w)).collect();
        let mr: u64 = r.iter().sum();
        r.push(2 * m - mr);
        (r, m)
    }

    #[test]
    fn heavy_prefix_needs_many_counters() {
        let mut w = vec![4u64; 400];
        w.extend(vec![0u64; 1200]);
        let (_, direct) = unit(&w).expand(false).unwrap();
        assert!(direct.max_counters >= 240, "{}", direct.max_counters);
        let s = RoundedDistribution::from_weights(&w).schedule().unwrap();
        let (_, reordered) = unit(&s).expand(false).unwrap();
        assert!(reordered.max_counters <= counter_bound(1600));
        assert_eq!(counter_bound(1600), 14);
    }

    proptest::proptest! {
        #[test]
        fn schedule_is_prefix_heavy_and_bounded(ws in proptest::collection::vec(0u64..=40, 1..300)) {
            let (padded, m) = padded_rounded(&ws);
            proptest::prop_assume!(m > 0);
            let s = RoundedDistribution::from_weights(&padded).schedule().unwrap();
            proptest::prop_assert_eq!(prefix_heavy_violation(&s), None);
            let (_, stats) = unit(&s).expand(false).unwrap();
            proptest::prop_assert!(stats.max_counters <= counter_bound(m), "{} > {}", stats.max_counters, counter_bound(m));
        }

        #[test]
        fn skewed_schedule_is_bounded(
            ws in proptest::collection::vec(proptest::prop_oneof![3 => proptest::strategy::Just(0u64), 2 => 1u64..4, 1 => 1u64..5000], 1..2000)
        ) {
            let (padded, m) = padded_rounded(&ws);
            proptest::prop_assume!(m > 0);
            let s = RoundedDistribution::from_weights(&padded).schedule().unwrap();
            let (_, stats) = unit(&s).expand(false).unwrap();
            proptest::prop_assert!(stats.max_counters <= counter_bound(m), "{} > {}", stats.max_counters, counter_bound(m));
        }

        #[test]
        fn expand_matches_copy_oracle(ws in proptest::collection::vec(0i64..=12, 0..40)) {
            let mut m = Machine::new(TraceMode::Count);
            let names: Vec<String> = (0..ws.len()).map(|i| format!("r{i}")).collect();
            let rows: Vec<(&str, i64)> = names.iter().map(|s| s.as_str()).zip(ws.iter().copied()).collect();
            let r = load(&mut m, &rows);
            let out = expand(&mut m, &r, "W").unwrap();
            let mut want: Vec<(String, i64)> = rows
                .iter()
                .flat_map(|(a, w)| std::iter::repeat_n((a.to_string(), *w), *w as usize))
                .collect();
            want.sort();
            proptest::prop_assert_eq!(contents(&m, &out), want);
            proptest::prop_assert!(m.tm.peak() <= m.tm.budget());
        }
    }

    fn load(m: &mut Machine, rows: &[(&str, i64)]) -> RelHandle {
        let schema = Schema::new("R", vec![Attr::str("A"), Attr::int("W")]).unwrap();
        let rows: Vec<Tuple> = rows.iter().map(|(a, w)| Tuple::new(vec![(*a).into(), (*w).into()])).collect();
        m.load(schema, &rows).unwrap()
    }

    fn contents(m: &Machine, r: &RelHandle) -> Vec<(String, i64)> {
        let mut v: Vec<_> = m
            .inspect(r)
            .unwrap()
            .iter()
            .map(|t| (t[0].to_string(), t[1].as_int().unwrap()))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn expand_small() {
        let mut m = Machine::new(TraceMode::Full);
        let r = load(&mut m, &[("a", 1), ("b", 2)]);
        let (out, stats) = expand_with_stats(&mut m, &r, "W").unwrap();
        assert_eq!(contents(&m, &out), vec![("a".into(), 1), ("b".into(), 2), ("b".into(), 2)]);
        assert_eq!(out.schema.names(), vec!["A", "W"]);
        assert_eq!(stats.output_len, 3);
    }

    #[test]
    fn expand_all_zero() {
        let mut m = Machine::new(TraceMode::Full);
        let r = load(&mut m, &[("a", 0), ("b", 0)]);
        let out = expand(&mut m, &r, "W").unwrap();
        assert_eq!(out.len, 0);
    }

    #[test]
    fn expand_rejects_negative() {
        let mut m = Machine::new(TraceMode::Full);
        let r = load(&mut m, &[("a", 3), ("b", -1)]);
        assert!(expand(&mut m, &r, "W").is_err());
    }

    #[test]
    fn expand_trace_depends_on_sizes() {
        let run = |rows: &[(&str, i64)]| {
            let mut m = Machine::new(TraceMode::Digest);
            let r = load(&mut m, rows);
            let out = expand(&mut m, &r, "W").unwrap();
            (m.um.digest(), m.um.layout().to_vec(), out.len)
        };
        let a = run(&[("a", 5), ("b", 0), ("c", 1), ("d", 0)]);
        let b = run(&[("a", 1), ("b", 2), ("c", 1), ("d", 2)]);
        let c = run(&[("x", 0), ("y", 0), ("z", 0), ("w", 6)]);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
