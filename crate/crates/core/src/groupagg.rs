//! Grouping aggregation over an acyclic join, selections, and key/foreign
//! key joins.
//!
//! Bottom-up, every tuple gets `N`, the number of join tuples below it, and
//! every tuple on the path from the aggregated relation to the root gets a
//! partial aggregate `S` over those join tuples. The root then holds, per
//! tuple, everything needed to aggregate its group in one grouping scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::join::{attach_product, child_count_attr, count_bottom_up, down_attr, mask_attr, JoinTree};
use crate::memsim::{Machine, RelHandle};
use crate::primitives::{
    augment, count_by, filter_by, grouping_identity, grouping_running, int_at, obl_project, Predicate, RunKind,
    Running,
};
use crate::relmodel::{Attr, Direction, Domain, SortKey, Value};
use crate::semijoin::{semijoin_agg_on, Contribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggFn {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

/// `F(rel.attr)` grouped by `group_by`, all of which belong to the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSpec {
    #[serde(rename = "fn")]
    pub func: AggFn,
    pub rel: String,
    #[serde(default)]
    pub attr: Option<String>,
    #[serde(default)]
    pub group_by: Vec<String>,
}

impl AggSpec {
    /// Name of the aggregate column in the output.
    pub fn output_attr(&self) -> String {
        let f = match self.func {
            AggFn::Sum => "sum",
            AggFn::Count => return "count".into(),
            AggFn::Min => "min",
            AggFn::Max => "max",
            AggFn::Avg => "avg",
        };
        format!("{f}_{}", self.attr.as_deref().unwrap_or(""))
    }
}

const S: &str = "#S";
const S_CNT: &str = "#Scnt";
const ID_G: &str = "#IdG";
const RS: &str = "#RS";
const RS_N: &str = "#RSN";
const RS_CNT: &str = "#RScnt";
const TMP: &str = "#Stmp";

/// Bottom-up counts with per-relation selections applied as `N = 0` masks.
/// Each returned relation carries `#P{i}`, `#Nc{i}.{k}` and `#N{i}`.
pub fn apply_selections(
    m: &mut Machine,
    tree: &JoinTree,
    rels: &[RelHandle],
    preds: &[Predicate],
) -> Result<Vec<RelHandle>> {
    count_bottom_up(m, tree, rels, preds)
}

/// `γ_G F(R_a.X) (σ_P (R_1 ⋈ … ⋈ R_q))` with `G` inside the root relation.
///
/// Output: one row per group that has at least one join tuple, with the
/// grouping attributes followed by [`AggSpec::output_attr`]. The trace
/// depends only on the input sizes and the number of groups.
pub fn group_aggregate(
    m: &mut Machine,
    tree: &JoinTree,
    rels: &[RelHandle],
    preds: &[Predicate],
    spec: &AggSpec,
) -> Result<RelHandle> {
    let a = tree
        .nodes
        .iter()
        .position(|n| n.name == spec.rel)
        .ok_or_else(|| Error::InvalidQuery(format!("`{}` is not part of the join", spec.rel)))?;
    for g in &spec.group_by {
        if !tree.nodes[0].attrs.contains(g) {
            return Err(Error::UnsupportedGrouping(format!(
                "`{g}` is not an attribute of the root relation `{}`",
                tree.nodes[0].name
            )));
        }
    }
    let x = match (spec.func, &spec.attr) {
        (AggFn::Count, _) => None,
        (_, Some(x)) => {
            let d = rels[a].schema.attr(x)?.domain;
            if matches!(spec.func, AggFn::Sum | AggFn::Avg) && d != Domain::Int {
                return Err(Error::DomainMismatch {
                    attr: x.clone(),
                    detail: "SUM and AVG need an integer attribute".into(),
                });
            }
            Some(x.clone())
        }
        (_, None) => return Err(Error::InvalidQuery(format!("{:?} needs an attribute", spec.func))),
    };

    let mut state = count_bottom_up(m, tree, rels, preds)?;
    let run = match spec.func {
        AggFn::Min => RunKind::Min,
        AggFn::Max => RunKind::Max,
        _ => RunKind::Sum,
    };
    let with_count = spec.func == AggFn::Avg;

    // partial aggregates at the aggregated relation
    let n_a = state[a].schema.index_of(&down_attr(a))?;
    let xc = x.as_ref().map(|x| state[a].schema.index_of(x)).transpose()?;
    let s_dom = match (spec.func, xc) {
        (AggFn::Min | AggFn::Max, Some(c)) => state[a].schema.attrs[c].domain,
        _ => Domain::Int,
    };
    let func = spec.func;
    let next = augment(m, &state[a], Attr { name: S.into(), domain: s_dom }, |t| {
        let n = int_at(t, n_a);
        Ok(match (func, xc) {
            (AggFn::Count, _) => Value::Int(n),
            (AggFn::Min | AggFn::Max, Some(c)) if n > 0 => t[c].clone(),
            (AggFn::Min | AggFn::Max, _) => Value::Null,
            (_, Some(c)) => Value::Int(int_at(t, c).checked_mul(n).ok_or(Error::Overflow("partial sum"))?),
            (_, None) => unreachable!(),
        })
    })?;
    swap(m, &mut state[a], next);
    if with_count {
        let c = xc.unwrap();
        let next = augment(m, &state[a], Attr::int(S_CNT), |t| {
            Ok(Value::Int(if t[c].is_null() { 0 } else { int_at(t, n_a) }))
        })?;
        swap(m, &mut state[a], next);
    }

    // carry them up to the root
    let mut child = a;
    while let Some(i) = tree.nodes[child].parent {
        let join = tree.nodes[child].join_attrs.clone();
        let mut others = vec![mask_attr(i)];
        others.extend(
            tree.nodes[i]
                .children
                .iter()
                .filter(|&&c| c != child)
                .map(|&c| child_count_attr(i, c)),
        );
        let mut cols = vec![(S, run)];
        if with_count {
            cols.push((S_CNT, RunKind::Sum));
        }
        for (col, kind) in cols {
            let next = semijoin_agg_on(m, &state[i], &state[child], &join, TMP, Contribution::Attr(col), kind)?;
            swap(m, &mut state[i], next);
            let next = if kind == RunKind::Sum {
                let mut f = vec![TMP.to_string()];
                f.extend(others.iter().cloned());
                attach_product(m, &state[i], &f, col)?
            } else {
                let (tc, nc) = (state[i].schema.index_of(TMP)?, state[i].schema.index_of(&down_attr(i))?);
                augment(m, &state[i], Attr { name: col.into(), domain: s_dom }, |t| {
                    Ok(if int_at(t, nc) > 0 { t[tc].clone() } else { Value::Null })
                })?
            };
            swap(m, &mut state[i], next);
            let names: Vec<String> = state[i].schema.names().into_iter().filter(|n| n != TMP).collect();
            let next = obl_project(m, &state[i], &names)?;
            swap(m, &mut state[i], next);
        }
        for k in tree.nodes[i].children.iter().filter(|&&c| c == child) {
            m.free(&state[*k]);
        }
        child = i;
    }
    for (k, h) in state.iter().enumerate().skip(1) {
        if !is_on_path(tree, a, k) {
            m.free(h);
        }
    }
    let root = &state[0];

    // grouping stage on the root
    let with_id = grouping_identity(m, root, &spec.group_by, &SortKey::default(), ID_G)?;
    m.free(root);
    let mut cols = vec![
        Running::of(run, S, RS),
        Running::of(RunKind::Sum, &down_attr(0), RS_N),
    ];
    if with_count {
        cols.push(Running::of(RunKind::Sum, S_CNT, RS_CNT));
    }
    let totals = grouping_running(
        m,
        &with_id,
        &spec.group_by,
        &SortKey(vec![(ID_G.into(), Direction::Desc)]),
        &cols,
    )?;
    m.free(&with_id);
    let (id, rs_n) = (totals.schema.index_of(ID_G)?, totals.schema.index_of(RS_N)?);
    let is_group = |t: &crate::relmodel::Tuple| t[id] == Value::Int(1) && int_at(t, rs_n) > 0;
    let groups = count_by(m, &totals, is_group)?;
    m.tm.declare_sizes(0, groups as u64);
    let kept = filter_by(m, &totals, is_group, groups)?;
    m.free(&totals);

    let out_attr = spec.output_attr();
    let rs = kept.schema.index_of(RS)?;
    let cnt = kept.schema.index_of(RS_CNT).ok();
    let valued = match spec.func {
        AggFn::Avg => augment(m, &kept, Attr::str(&out_attr), |t| {
            Ok(match int_at(t, cnt.unwrap()) {
                0 => Value::Null,
                c => Value::str(&exact_mean(int_at(t, rs), c)),
            })
        })?,
        _ => augment(m, &kept, Attr { name: out_attr.clone(), domain: s_dom }, |t| Ok(t[rs].clone()))?,
    };
    m.free(&kept);
    let mut names = spec.group_by.clone();
    names.push(out_attr);
    let out = obl_project(m, &valued, &names)?;
    m.free(&valued);
    Ok(out)
}

fn swap(m: &mut Machine, slot: &mut RelHandle, next: RelHandle) {
    m.free(slot);
    *slot = next;
}

fn is_on_path(tree: &JoinTree, from: usize, k: usize) -> bool {
    let mut x = Some(from);
    while let Some(i) = x {
        if i == k {
            return true;
        }
        x = tree.nodes[i].parent;
    }
    false
}

/// `sum / count` as a decimal string with six fractional digits, rounded
/// half away from zero.
pub fn exact_mean(sum: i64, count: i64) -> String {
    let scaled = sum as i128 * 1_000_000;
    let c = count as i128;
    let q = scaled / c;
    let r = scaled % c;
    let q = if 2 * r.abs() >= c.abs() {
        q + if (scaled < 0) != (c < 0) { -1 } else { 1 }
    } else {
        q
    };
    let sign = if q < 0 { "-" } else { "" };
    let q = q.abs();
    format!("{sign}{}.{:06}", q / 1_000_000, q % 1_000_000)
}

/// Joins a foreign-key relation with the relation its key references.
///
/// Under the constraint every `fk_side` row finds exactly one partner, so
/// the output has `|fk_side|` rows and the join's output size reveals
/// nothing new; any other size is a constraint violation.
pub fn fk_join(m: &mut Machine, fk_side: &RelHandle, key_side: &RelHandle) -> Result<RelHandle> {
    let out = crate::join::binary_join(m, fk_side, key_side).map_err(|e| match e {
        Error::InvalidQuery(msg) => Error::FkViolation(msg),
        e => e,
    })?;
    if out.len != fk_side.len {
        m.free(&out);
        return Err(Error::FkViolation(format!(
            "`{}` ⋈ `{}` has {} rows, expected {}",
            fk_side.schema.name, key_side.schema.name, out.len, fk_side.len
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memsim::TraceMode;
    use crate::primitives::CmpOp;
    use crate::relmodel::{Schema, Tuple};

    fn ints(m: &mut Machine, name: &str, attrs: &[&str], rows: &[&[i64]]) -> RelHandle {
        let schema = Schema::new(name, attrs.iter().map(|a| Attr::int(a)).collect()).unwrap();
        let rows: Vec<Tuple> = rows.iter().map(|r| Tuple::new(r.iter().map(|&v| Value::Int(v)).collect())).collect();
        m.load(schema, &rows).unwrap()
    }

    fn spec(func: AggFn, rel: &str, attr: Option<&str>, g: &[&str]) -> AggSpec {
        AggSpec {
            func,
            rel: rel.into(),
            attr: attr.map(String::from),
            group_by: g.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn result(m: &Machine, r: &RelHandle) -> Vec<Vec<String>> {
        let mut v: Vec<Vec<String>> = m
            .inspect(r)
            .unwrap()
            .iter()
            .map(|t| t.values().iter().map(|x| x.to_string()).collect())
            .collect();
        v.sort();
        v
    }

    fn s(rows: &[&[&str]]) -> Vec<Vec<String>> {
        rows.iter().map(|r| r.iter().map(|x| x.to_string()).collect()).collect()
    }

    #[test]
    fn single_relation_sum() {
        let mut m = Machine::new(TraceMode::Full);
        let r = ints(&mut m, "R", &["A", "X"], &[&[1, 1], &[1, 2], &[2, 5]]);
        let tree = JoinTree::new(&[&r.schema], &[None]).unwrap();
        let out = group_aggregate(&mut m, &tree, &[r], &[], &spec(AggFn::Sum, "R", Some("X"), &["A"])).unwrap();
        assert_eq!(out.schema.names(), vec!["A", "sum_X"]);
        assert_eq!(result(&m, &out), s(&[&["1", "3"], &["2", "5"]]));
    }

    #[test]
    fn chain_all_functions() {
        // R1(G,B) ⋈ R2(B,X); G=1 joins X∈{10,20} twice (B=1 twice), G=2 joins X=7
        let mut m = Machine::new(TraceMode::Full);
        let r1 = ints(&mut m, "R1", &["G", "B"], &[&[1, 1], &[1, 1], &[2, 2], &[3, 9]]);
        let r2 = ints(&mut m, "R2", &["B", "X"], &[&[1, 10], &[1, 20], &[2, 7]]);
        let tree = JoinTree::pair(&r1.schema, &r2.schema).unwrap();
        let rels = [r1, r2];
        let mut go = |f: AggFn| {
            let out = group_aggregate(&mut m, &tree, &rels, &[], &spec(f, "R2", Some("X"), &["G"])).unwrap();
            result(&m, &out)
        };
        assert_eq!(go(AggFn::Sum), s(&[&["1", "60"], &["2", "7"]]));
        assert_eq!(go(AggFn::Count), s(&[&["1", "4"], &["2", "1"]]));
        assert_eq!(go(AggFn::Min), s(&[&["1", "10"], &["2", "7"]]));
        assert_eq!(go(AggFn::Max), s(&[&["1", "20"], &["2", "7"]]));
        assert_eq!(go(AggFn::Avg), s(&[&["1", "15.000000"], &["2", "7.000000"]]));
    }

    #[test]
    fn siblings_multiply_partial_sums() {
        // root R(G,A) with children S(A,X) and T(A,Y): each X is counted |T| times
        let mut m = Machine::new(TraceMode::Full);
        let r = ints(&mut m, "R", &["G", "A"], &[&[1, 1]]);
        let s1 = ints(&mut m, "S", &["A", "X"], &[&[1, 5], &[1, 6]]);
        let t = ints(&mut m, "T", &["A", "Y"], &[&[1, 0], &[1, 0], &[1, 0]]);
        let tree = JoinTree::new(&[&r.schema, &s1.schema, &t.schema], &[None, Some(0), Some(0)]).unwrap();
        let out =
            group_aggregate(&mut m, &tree, &[r, s1, t], &[], &spec(AggFn::Sum, "S", Some("X"), &["G"])).unwrap();
        assert_eq!(result(&m, &out), s(&[&["1", "33"]]));
    }

    #[test]
    fn selections_remove_groups() {
        let mut m = Machine::new(TraceMode::Full);
        let r = ints(&mut m, "R", &["A", "X"], &[&[1, 1], &[1, 2], &[2, 5]]);
        let tree = JoinTree::new(&[&r.schema], &[None]).unwrap();
        let sp = spec(AggFn::Sum, "R", Some("X"), &["A"]);
        let out = group_aggregate(&mut m, &tree, &[r.clone()], &[Predicate::atom("X", CmpOp::Ge, 2)], &sp).unwrap();
        assert_eq!(result(&m, &out), s(&[&["1", "2"], &["2", "5"]]));
        let out = group_aggregate(&mut m, &tree, &[r], &[Predicate::atom("X", CmpOp::Gt, 9)], &sp).unwrap();
        assert_eq!(out.len, 0);
    }

    #[test]
    fn ungrouped_and_bad_grouping() {
        let mut m = Machine::new(TraceMode::Full);
        let r1 = ints(&mut m, "R1", &["G", "B"], &[&[1, 1], &[2, 1]]);
        let r2 = ints(&mut m, "R2", &["B", "X"], &[&[1, 10], &[1, 20]]);
        let tree = JoinTree::pair(&r1.schema, &r2.schema).unwrap();
        let rels = [r1, r2];
        let out = group_aggregate(&mut m, &tree, &rels, &[], &spec(AggFn::Sum, "R2", Some("X"), &[])).unwrap();
        assert_eq!(result(&m, &out), s(&[&["60"]]));
        let err = group_aggregate(&mut m, &tree, &rels, &[], &spec(AggFn::Sum, "R2", Some("X"), &["X"])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedGrouping(_)));
    }

    #[test]
    fn mean_formatting() {
        assert_eq!(exact_mean(7, 2), "3.500000");
        assert_eq!(exact_mean(1, 3), "0.333333");
        assert_eq!(exact_mean(2, 3), "0.666667");
        assert_eq!(exact_mean(-2, 3), "-0.666667");
        assert_eq!(exact_mean(-1, 4), "-0.250000");
    }

    #[test]
    fn fk_join_sizes() {
        let mut m = Machine::new(TraceMode::Full);
        let patient = ints(&mut m, "Patient", &["PatId", "City"], &[&[1, 100], &[2, 200]]);
        let visit = ints(&mut m, "Visit", &["VisitId", "PatId"], &[&[10, 1], &[11, 1], &[12, 2]]);
        let j = fk_join(&mut m, &visit, &patient).unwrap();
        assert_eq!(j.len, 3);
        assert_eq!(j.schema.names(), vec!["VisitId", "PatId", "City"]);
        let dangling = ints(&mut m, "Visit", &["VisitId", "PatId"], &[&[10, 1], &[11, 3]]);
        assert!(matches!(fk_join(&mut m, &dangling, &patient), Err(Error::FkViolation(_))));
    }
}
