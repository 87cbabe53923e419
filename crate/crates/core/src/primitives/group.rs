use std::sync::Arc;

use crate::error::{Error, Result};
use crate::memsim::{Machine, RelHandle};
use crate::relmodel::{Attr, Direction, SortKey, Tuple, Value};

use super::sort::sort_by;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    /// 1, 2, ... within the group.
    Identity,
    /// Inclusive prefix sum; Null counts as 0.
    Sum,
    /// Inclusive prefix minimum, ignoring Null.
    Min,
    /// Inclusive prefix maximum, ignoring Null.
    Max,
}

/// One derived column of a grouping scan.
#[derive(Debug, Clone)]
pub struct Running {
    pub new_attr: String,
    pub kind: RunKind,
    pub src: Option<String>,
}

impl Running {
    pub fn identity(new_attr: &str) -> Running {
        Running {
            new_attr: new_attr.to_string(),
            kind: RunKind::Identity,
            src: None,
        }
    }

    pub fn of(kind: RunKind, src: &str, new_attr: &str) -> Running {
        Running {
            new_attr: new_attr.to_string(),
            kind,
            src: Some(src.to_string()),
        }
    }
}

/// Sorts by (`group` asc, `order`, full tuple) and appends the `cols`
/// computed by one scan with the current group key held in TM.
///
/// With both `group` and `order` empty there is nothing to sort by and the
/// existing sequence order is used as is.
pub fn grouping_running<S: AsRef<str>>(
    m: &mut Machine,
    r: &RelHandle,
    group: &[S],
    order: &SortKey,
    cols: &[Running],
) -> Result<RelHandle> {
    let schema = &r.schema;
    let mut key = SortKey::default();
    for g in group {
        key = key.then(g.as_ref(), Direction::Asc);
    }
    key.0.extend(order.0.iter().cloned());
    let resolved = key.resolve(schema)?;
    let gcols: Vec<usize> = group
        .iter()
        .map(|g| schema.index_of(g.as_ref()))
        .collect::<Result<_>>()?;

    let mut out_schema = (**schema).clone();
    let mut srcs = Vec::with_capacity(cols.len());
    for c in &cols[..] {
        let src = match &c.src {
            Some(s) => Some(schema.index_of(s)?),
            None if c.kind == RunKind::Identity => None,
            None => return Err(Error::InvalidQuery(format!("`{}` needs a source", c.new_attr))),
        };
        let domain = match (c.kind, src) {
            (RunKind::Min | RunKind::Max, Some(s)) => schema.attrs[s].domain,
            _ => crate::relmodel::Domain::Int,
        };
        out_schema = out_schema.extended(Attr {
            name: c.new_attr.clone(),
            domain,
        })?;
        srcs.push(src);
    }
    out_schema.name = schema.name.clone();

    let sorted = if key.is_empty() {
        None
    } else {
        Some(sort_by(m, r, |a, b| resolved.cmp_total(a, b))?)
    };
    let input = sorted.as_ref().unwrap_or(r);

    let _held = m
        .tm
        .alloc(2 * schema.tuple_words() + gcols.len() + 2 * cols.len())?;
    let out = m.alloc_rel(Arc::new(out_schema), r.len);
    let mut prev: Option<Tuple> = None;
    let mut acc: Vec<Value> = vec![Value::Null; cols.len()];
    for i in 0..input.len {
        let t = m.um.read(input.arena, i)?;
        let gk = t.pick(&gcols);
        let fresh = prev.as_ref() != Some(&gk);
        if fresh {
            for (a, c) in acc.iter_mut().zip(cols) {
                *a = match c.kind {
                    RunKind::Identity | RunKind::Sum => Value::Int(0),
                    RunKind::Min | RunKind::Max => Value::Null,
                };
            }
            prev = Some(gk);
        }
        let mut values = t.into_vec();
        for ((a, c), src) in acc.iter_mut().zip(cols).zip(&srcs) {
            let v = src.map(|s| &values[s]);
            *a = match (c.kind, v) {
                (RunKind::Identity, _) => Value::Int(a.as_int().unwrap() + 1),
                (RunKind::Sum, Some(v)) => Value::Int(
                    a.as_int()
                        .unwrap()
                        .checked_add(v.as_int().unwrap_or(0))
                        .ok_or(Error::Overflow("running sum"))?,
                ),
                (RunKind::Min, Some(v)) if !v.is_null() && (a.is_null() || v < a) => v.clone(),
                (RunKind::Max, Some(v)) if !v.is_null() && (a.is_null() || v > a) => v.clone(),
                _ => a.clone(),
            };
        }
        values.extend(acc.iter().cloned());
        m.um.write(out.arena, i, Tuple::new(values))?;
    }
    if let Some(s) = sorted {
        m.free(&s);
    }
    Ok(out)
}

/// `R.(new_attr ← ID_G^O)`.
pub fn grouping_identity<S: AsRef<str>>(
    m: &mut Machine,
    r: &RelHandle,
    group: &[S],
    order: &SortKey,
    new_attr: &str,
) -> Result<RelHandle> {
    grouping_running(m, r, group, order, &[Running::identity(new_attr)])
}

/// `R.(new_attr ← RSum_G^O(src))`.
pub fn grouping_running_sum<S: AsRef<str>>(
    m: &mut Machine,
    r: &RelHandle,
    group: &[S],
    order: &SortKey,
    src: &str,
    new_attr: &str,
) -> Result<RelHandle> {
    grouping_running(m, r, group, order, &[Running::of(RunKind::Sum, src, new_attr)])
}
