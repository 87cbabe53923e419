//! Exact UM access counts of every engine operation, as functions of
//! public sizes only.
//!
//! Each formula follows the stage structure of the matching algorithm one
//! primitive at a time. Tests compare them with measured trace lengths.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::groupagg::AggFn;
use crate::join::JoinTree;
use crate::planner::Plan;

/// Bitonic sort of `n` rows: copy in, sentinel padding to `p`, four events
/// per compare-exchange, copy out.
pub fn sort(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let p = n.next_power_of_two();
    let k = p.trailing_zeros() as u64;
    2 * n + (p - n) + p * k * (k + 1) + 2 * n
}

/// One read and one write per row.
pub fn scan(n: u64) -> u64 {
    2 * n
}

/// Sort, copy `k` rows out, and one probe past them when rows remain.
pub fn filter(n: u64, k: u64) -> u64 {
    sort(n) + 2 * k + u64::from(k < n)
}

/// Grouping scan, sorted first unless both the group and the order keys
/// are empty.
pub fn grouping(n: u64, keyed: bool) -> u64 {
    if keyed {
        sort(n) + 2 * n
    } else {
        2 * n
    }
}

/// Semi-join aggregation of `|R| = r` against `|S| = s`.
pub fn semijoin(r: u64, s: u64) -> u64 {
    scan(r) + scan(s) + scan(r + s) + grouping(r + s, true) + filter(r + s, r) + scan(r)
}

fn reorder(n: u64) -> u64 {
    sort(n) + scan(n) + sort(n) + scan(n)
}

/// Expansion of `n` rows into `t` rows.
pub fn expand(n: u64, t: u64) -> u64 {
    let fold = n;
    if t == 0 {
        return fold;
    }
    let n1 = n + 1;
    fold + scan(n)          // rounded weights
        + n                 // rounded total
        + 1                 // dummy row
        + scan(n1)          // union
        + n1                // histogram
        + grouping(n1, false)
        + reorder(n1)
        + n1 + 2 * t        // prefix-heavy pass
        + grouping(2 * t, true)
        + filter(2 * t, t)
        + scan(t)
}

/// Binary join with `|R| = r`, `|S| = s` and `m` output rows.
pub fn binary_join(r: u64, s: u64, m: u64) -> u64 {
    let tag = |x: u64| scan(x) + grouping(x, false);
    tag(r) + tag(s)
        + semijoin(r, s)
        + semijoin(s, r)
        + grouping(s, true)
        + expand(r, m)
        + grouping(m, true)
        + expand(s, m)
        + 2 * sort(m)
        + 2 * scan(m)
        + 3 * m
        + scan(m)
}

fn sizes_ok(tree: &JoinTree, sizes: &[u64]) -> Result<()> {
    if sizes.len() != tree.len() {
        return Err(Error::InvalidQuery(format!(
            "{} sizes for a tree of {} nodes",
            sizes.len(),
            tree.len()
        )));
    }
    Ok(())
}

fn bottom_up(tree: &JoinTree, n: &[u64]) -> u64 {
    (0..tree.len())
        .map(|i| {
            let kids: u64 = tree.nodes[i].children.iter().map(|&k| semijoin(n[i], n[k])).sum();
            scan(n[i]) + kids + scan(n[i])
        })
        .sum()
}

/// Multiway join over `tree` with node sizes `n` and `m` output rows.
pub fn multiway_join(tree: &JoinTree, n: &[u64], m: u64) -> Result<u64> {
    sizes_ok(tree, n)?;
    let mut c = bottom_up(tree, n) + scan(n[0]);
    for i in 0..tree.len() {
        for &k in &tree.nodes[i].children {
            c += scan(n[i]) + semijoin(n[k], n[i]);
        }
        c += scan(n[i]);
    }
    c += n[0] + expand(n[0], m) + scan(m);
    for j in 1..tree.len() {
        let keyed = !tree.nodes[j].join_attrs.is_empty();
        c += grouping(n[j], keyed) + scan(n[j]) + expand(n[j], m);
        c += grouping(m, true) + scan(m) + scan(m) + sort(m);
        c += grouping(m, true) + scan(m) + scan(m) + sort(m);
        c += 3 * m + scan(m);
    }
    Ok(c + scan(m))
}

/// Grouping aggregation of `func` over node `a` with `groups` output rows.
pub fn group_aggregate(tree: &JoinTree, n: &[u64], a: usize, func: AggFn, grouped: bool, groups: u64) -> Result<u64> {
    sizes_ok(tree, n)?;
    let cols = if func == AggFn::Avg { 2 } else { 1 };
    let mut c = bottom_up(tree, n) + cols * scan(n[a]);
    let mut child = a;
    while let Some(i) = tree.nodes[child].parent {
        c += cols * (semijoin(n[i], n[child]) + scan(n[i]) + scan(n[i]));
        child = i;
    }
    let r = n[0];
    c += grouping(r, grouped) + grouping(r, true) + r + filter(r, groups) + scan(groups) + scan(groups);
    Ok(c)
}

/// Access count of each stage of `plan`, given the input relation sizes
/// and the result size.
pub fn plan_stages(plan: &Plan, inputs: &BTreeMap<String, u64>, out_len: u64) -> Result<Vec<(String, u64)>> {
    let size = |name: &str| {
        inputs
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidQuery(format!("no size for `{name}`")))
    };
    let mut stages = Vec::new();
    for st in &plan.fk_steps {
        let f = size(&st.fk_side)?;
        let k = size(&st.key_side)?;
        stages.push((format!("fk_join({} ⋈ {})", st.fk_side, st.key_side), binary_join(f, k, f)));
    }
    let n: Vec<u64> = plan.tree.nodes.iter().map(|x| size(&x.name)).collect::<Result<_>>()?;
    match &plan.agg {
        Some(spec) => {
            let a = plan
                .tree
                .nodes
                .iter()
                .position(|x| x.name == spec.rel)
                .ok_or_else(|| Error::InvalidQuery(format!("`{}` is not in the plan", spec.rel)))?;
            let c = group_aggregate(&plan.tree, &n, a, spec.func, !spec.group_by.is_empty(), out_len)?;
            stages.push(("group_aggregate".into(), c));
        }
        None => {
            stages.push(("multiway_join".into(), multiway_join(&plan.tree, &n, out_len)?));
            if !plan.project.is_empty() {
                stages.push(("project".into(), scan(out_len)));
            }
        }
    }
    Ok(stages)
}

/// Formula text for the sort count, printed next to measured totals.
pub const SORT_FORMULA: &str = "sort(n) = 4n + (p - n) + p·k·(k+1), p = 2^k = next_pow2(n)";
