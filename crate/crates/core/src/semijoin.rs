//! Semi-join aggregation `R.(X ⟵⋉ Sum(S.Y))`.
//!
//! Pipeline: tag R rows with `Src = 1` and a neutral `Y`, tag S rows with
//! `Src = 0`, take the generalized union, run a grouped running aggregate
//! over the join attributes ordered by `Src` (so every S row of a group
//! precedes the R rows), and keep the `Src = 1` rows.

use crate::error::{Error, Result};
use crate::memsim::{Machine, RelHandle};
use crate::primitives::{filter_by, grouping_running, map_rows, obl_project, RunKind, Running};
use crate::relmodel::{Attr, Domain, Schema, SortKey, Tuple, Value};

const SRC: &str = "#src";
const VAL: &str = "#y";

/// What each S row contributes.
#[derive(Debug, Clone, Copy)]
pub enum Contribution<'a> {
    Attr(&'a str),
    Const(i64),
}

/// Semi-join aggregation on an explicit set of join attributes.
///
/// `kind` selects the aggregate (`Sum`, `Min` or `Max`); an R row with no
/// partner gets 0 for `Sum` and Null for `Min`/`Max`. Every R row is kept,
/// duplicates included, so `|out| = |R|`.
pub fn semijoin_agg_on<S: AsRef<str>>(
    m: &mut Machine,
    r: &RelHandle,
    s: &RelHandle,
    join: &[S],
    x: &str,
    y: Contribution<'_>,
    kind: RunKind,
) -> Result<RelHandle> {
    if kind == RunKind::Identity {
        return Err(Error::InvalidQuery("semi-join aggregate must be Sum, Min or Max".into()));
    }
    let join: Vec<String> = join.iter().map(|j| j.as_ref().to_string()).collect();
    let rj: Vec<usize> = join.iter().map(|j| r.schema.index_of(j)).collect::<Result<_>>()?;
    let sj: Vec<usize> = join.iter().map(|j| s.schema.index_of(j)).collect::<Result<_>>()?;
    for (&a, &b) in rj.iter().zip(&sj) {
        if !r.schema.attrs[a].domain.same_tag(&s.schema.attrs[b].domain) {
            return Err(Error::DomainMismatch {
                attr: r.schema.attrs[a].name.clone(),
                detail: "join attribute domains differ".into(),
            });
        }
    }
    if r.schema.has(x) {
        return Err(Error::DuplicateAttribute(x.to_string()));
    }
    let (ycol, ydom) = match y {
        Contribution::Attr(name) => {
            let c = s.schema.index_of(name)?;
            (Some(c), s.schema.attrs[c].domain)
        }
        Contribution::Const(_) => (None, Domain::Int),
    };
    if kind == RunKind::Sum && ydom != Domain::Int {
        return Err(Error::DomainMismatch {
            attr: x.to_string(),
            detail: "sum over a non-integer attribute".into(),
        });
    }
    let neutral = match kind {
        RunKind::Sum => Value::Int(0),
        _ => Value::Null,
    };

    let r_tagged = r
        .schema
        .extended(Attr { name: VAL.into(), domain: ydom })?
        .extended(Attr::int(SRC))?;
    let r1 = map_rows(m, r, r_tagged, |t| {
        let mut v = t.values().to_vec();
        v.push(neutral.clone());
        v.push(Value::Int(1));
        Ok(Tuple::new(v))
    })?;

    let mut s_attrs: Vec<Attr> = sj.iter().map(|&c| s.schema.attrs[c].clone()).collect();
    s_attrs.push(Attr { name: VAL.into(), domain: ydom });
    s_attrs.push(Attr::int(SRC));
    let s_tagged = Schema::new(&s.schema.name, s_attrs)?;
    let s1 = map_rows(m, s, s_tagged, |t| {
        let mut v: Vec<Value> = sj.iter().map(|&c| t[c].clone()).collect();
        v.push(match (ycol, y) {
            (Some(c), _) => t[c].clone(),
            (None, Contribution::Const(k)) => Value::Int(k),
            (None, Contribution::Attr(_)) => unreachable!(),
        });
        v.push(Value::Int(0));
        Ok(Tuple::new(v))
    })?;

    let u = crate::primitives::gen_union(m, &r1, &s1)?;
    m.free(&r1);
    m.free(&s1);
    let summed = grouping_running(m, &u, &join, &SortKey::asc(&[SRC]), &[Running::of(kind, VAL, x)])?;
    m.free(&u);
    let src = summed.schema.index_of(SRC)?;
    let kept = filter_by(m, &summed, |t| t[src] == Value::Int(1), r.len)?;
    m.free(&summed);
    let mut names = r.schema.names();
    names.push(x.to_string());
    let out = obl_project(m, &kept, &names)?;
    m.free(&kept);
    Ok(out)
}

/// `R.(X ⟵⋉ Sum(S.Y))` joining on `Attr(R) ∩ Attr(S)`.
pub fn semijoin_agg(m: &mut Machine, r: &RelHandle, s: &RelHandle, x: &str, y: &str) -> Result<RelHandle> {
    let join = r.schema.shared_with(&s.schema);
    if join.is_empty() {
        return Err(Error::InvalidQuery(format!(
            "`{}` and `{}` share no attributes",
            r.schema.name, s.schema.name
        )));
    }
    semijoin_agg_on(m, r, s, &join, x, Contribution::Attr(y), RunKind::Sum)
}

/// Degree of each R tuple in `R ⋈ S`.
pub fn degree(m: &mut Machine, r: &RelHandle, s: &RelHandle, new_attr: &str) -> Result<RelHandle> {
    let join = r.schema.shared_with(&s.schema);
    if join.is_empty() {
        return Err(Error::InvalidQuery(format!(
            "`{}` and `{}` share no attributes",
            r.schema.name, s.schema.name
        )));
    }
    semijoin_agg_on(m, r, s, &join, new_attr, Contribution::Const(1), RunKind::Sum)
}
