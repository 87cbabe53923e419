use std::cmp::Ordering;

use crate::error::Result;
use crate::memsim::{Machine, RelHandle, Slot};
use crate::relmodel::{SortKey, Tuple};

fn slot_cmp<F>(cmp: &F, a: &Slot, b: &Slot) -> Ordering
where
    F: Fn(&Tuple, &Tuple) -> Ordering,
{
    match (a, b) {
        (Slot::Row(x), Slot::Row(y)) => cmp(x, y),
        (Slot::Sentinel, Slot::Sentinel) => Ordering::Equal,
        (Slot::Sentinel, _) => Ordering::Greater,
        (_, Slot::Sentinel) => Ordering::Less,
        (Slot::Vacant, Slot::Vacant) => Ordering::Equal,
        (Slot::Vacant, _) => Ordering::Greater,
        (_, Slot::Vacant) => Ordering::Less,
    }
}

/// Compare-exchange schedule of a bitonic network over `p` (a power of two)
/// slots. `ascending` tells the direction of each pair.
pub(crate) fn bitonic_pairs(p: usize, mut visit: impl FnMut(usize, usize, bool) -> Result<()>) -> Result<()> {
    let mut k = 2;
    while k <= p {
        let mut j = k / 2;
        while j > 0 {
            for i in 0..p {
                let l = i ^ j;
                if l > i {
                    visit(i, l, i & k == 0)?;
                }
            }
            j /= 2;
        }
        k *= 2;
    }
    Ok(())
}

/// Oblivious sort under an arbitrary total order on tuples.
///
/// Copies the input into a scratch arena padded with sentinels to the next
/// power of two, runs a bitonic network over it, and copies the first
/// `|R|` slots out. The trace is a function of `|R|` alone.
pub(crate) fn sort_by<F>(m: &mut Machine, r: &RelHandle, cmp: F) -> Result<RelHandle>
where
    F: Fn(&Tuple, &Tuple) -> Ordering,
{
    let n = r.len;
    let out = m.alloc_rel(r.schema.clone(), n);
    if n == 0 {
        return Ok(out);
    }
    let _held = m.tm.alloc(2 * r.schema.tuple_words())?;
    let p = n.next_power_of_two();
    let scratch = m.um.alloc(r.schema.slot_width(), p);
    for i in 0..n {
        let s = m.um.read_slot(r.arena, i)?;
        m.um.write_slot(scratch, i, s)?;
    }
    for i in n..p {
        m.um.write_slot(scratch, i, Slot::Sentinel)?;
    }
    bitonic_pairs(p, |i, l, ascending| {
        m.um.compare_exchange(scratch, i, l, |a, b| {
            let o = slot_cmp(&cmp, a, b);
            if ascending {
                o == Ordering::Greater
            } else {
                o == Ordering::Less
            }
        })
    })?;
    for i in 0..n {
        let s = m.um.read_slot(scratch, i)?;
        m.um.write_slot(out.arena, i, s)?;
    }
    m.um.free(scratch);
    Ok(out)
}

/// Sorts by `key`, breaking ties by full-tuple ascending comparison so the
/// output sequence is unique.
pub fn obl_sort(m: &mut Machine, r: &RelHandle, key: &SortKey) -> Result<RelHandle> {
    let k = key.resolve(&r.schema)?;
    sort_by(m, r, |a, b| k.cmp_total(a, b))
}
