use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memsim::{Machine, RelHandle};
use crate::relmodel::{Attr, Domain, Schema, Tuple, Value};

use super::sort::sort_by;

/// One read and one write per tuple, in slot order.
pub(crate) fn map_rows(
    m: &mut Machine,
    r: &RelHandle,
    out_schema: Schema,
    mut f: impl FnMut(&Tuple) -> Result<Tuple>,
) -> Result<RelHandle> {
    let _held = m
        .tm
        .alloc(r.schema.tuple_words() + out_schema.tuple_words())?;
    let out = m.alloc_rel(Arc::new(out_schema), r.len);
    for i in 0..r.len {
        let t = m.um.read(r.arena, i)?;
        m.um.write(out.arena, i, f(&t)?)?;
    }
    Ok(out)
}

/// Adds `new_attr` computed by `f` from each tuple.
pub fn augment(
    m: &mut Machine,
    r: &RelHandle,
    new_attr: Attr,
    f: impl Fn(&Tuple) -> Result<Value>,
) -> Result<RelHandle> {
    let schema = r.schema.extended(new_attr)?;
    map_rows(m, r, schema, |t| Ok(t.with_appended(f(t)?)))
}

/// Adds a constant column.
pub fn augment_const(m: &mut Machine, r: &RelHandle, name: &str, v: i64) -> Result<RelHandle> {
    augment(m, r, Attr::int(name), |_| Ok(Value::Int(v)))
}

/// Duplicate-preserving projection onto `attrs` (kept in schema order).
pub fn obl_project<S: AsRef<str>>(m: &mut Machine, r: &RelHandle, attrs: &[S]) -> Result<RelHandle> {
    let names: Vec<String> = attrs.iter().map(|a| a.as_ref().to_string()).collect();
    let schema = r.schema.restricted(&names)?;
    let cols: Vec<usize> = schema
        .attrs
        .iter()
        .map(|a| r.schema.index_of(&a.name))
        .collect::<Result<_>>()?;
    map_rows(m, r, schema, |t| Ok(t.pick(&cols)))
}

pub(crate) fn int_at(t: &Tuple, col: usize) -> i64 {
    t[col].as_int().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn holds(self, lhs: &Value, rhs: &Value) -> bool {
        if lhs.is_null() || rhs.is_null() {
            return false;
        }
        let o = lhs.cmp(rhs);
        match self {
            CmpOp::Eq => o.is_eq(),
            CmpOp::Ne => o.is_ne(),
            CmpOp::Lt => o.is_lt(),
            CmpOp::Le => o.is_le(),
            CmpOp::Gt => o.is_gt(),
            CmpOp::Ge => o.is_ge(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub attr: String,
    pub op: CmpOp,
    pub value: Value,
}

/// Conjunction of `attr op constant` atoms; the empty conjunction is true.
/// Comparisons involving Null are false.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Predicate(pub Vec<Atom>);

impl Predicate {
    pub fn always() -> Predicate {
        Predicate(Vec::new())
    }

    pub fn atom(attr: &str, op: CmpOp, value: impl Into<Value>) -> Predicate {
        Predicate(vec![Atom {
            attr: attr.to_string(),
            op,
            value: value.into(),
        }])
    }

    pub fn and(mut self, other: Predicate) -> Predicate {
        self.0.extend(other.0);
        self
    }

    pub fn bind(&self, schema: &Schema) -> Result<BoundPredicate> {
        let atoms = self
            .0
            .iter()
            .map(|a| {
                let col = schema.index_of(&a.attr)?;
                let dom = schema.attrs[col].domain;
                let ok = match (&a.value, dom) {
                    (Value::Null, _) => true,
                    (Value::Int(_), Domain::Int) => true,
                    (Value::Str(_), Domain::Str { .. }) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::DomainMismatch {
                        attr: a.attr.clone(),
                        detail: format!("constant {:?} vs domain {:?}", a.value, dom),
                    });
                }
                Ok((col, a.op, a.value.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(BoundPredicate { atoms })
    }
}

/// A predicate resolved against a schema; lives in TM.
#[derive(Debug, Clone)]
pub struct BoundPredicate {
    atoms: Vec<(usize, CmpOp, Value)>,
}

impl BoundPredicate {
    pub fn eval(&self, t: &Tuple) -> bool {
        self.atoms.iter().all(|(c, op, v)| op.holds(&t[*c], v))
    }

    pub fn words(&self) -> usize {
        self.atoms.len() * 2
    }
}

/// Satisfying tuples first, then a scan that copies exactly `out_len`.
pub(crate) fn filter_by(
    m: &mut Machine,
    r: &RelHandle,
    pred: impl Fn(&Tuple) -> bool,
    out_len: usize,
) -> Result<RelHandle> {
    if out_len > r.len {
        return Err(Error::SizeMismatch(format!(
            "requested {out_len} rows from a relation of {}",
            r.len
        )));
    }
    let sorted = sort_by(m, r, |a, b| pred(b).cmp(&pred(a)).then_with(|| a.cmp(b)))?;
    let _held = m.tm.alloc(r.schema.tuple_words())?;
    let out = m.alloc_rel(r.schema.clone(), out_len);
    for i in 0..out_len {
        let t = m.um.read(sorted.arena, i)?;
        if !pred(&t) {
            return Err(Error::SizeMismatch(format!(
                "only {i} rows satisfy the predicate, {out_len} expected"
            )));
        }
        m.um.write(out.arena, i, t)?;
    }
    if out_len < r.len {
        let t = m.um.read(sorted.arena, out_len)?;
        if pred(&t) {
            return Err(Error::SizeMismatch(format!(
                "more than {out_len} rows satisfy the predicate"
            )));
        }
    }
    m.free(&sorted);
    Ok(out)
}

/// Oblivious selection. `out_len` must equal `|σ_p(R)|`; obtain it with
/// [`tm_fold`] and [`Fold::CountWhere`] when it is not known from the plan.
pub fn obl_filter(m: &mut Machine, r: &RelHandle, p: &Predicate, out_len: usize) -> Result<RelHandle> {
    let bound = p.bind(&r.schema)?;
    let _consts = m.tm.alloc(bound.words())?;
    filter_by(m, r, |t| bound.eval(t), out_len)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fold {
    Sum(String),
    Count,
    CountWhere(Predicate),
    Histogram(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FoldResult {
    Scalar(i64),
    Histogram(BTreeMap<Value, u64>),
}

impl FoldResult {
    pub fn scalar(&self) -> Option<i64> {
        match self {
            FoldResult::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

/// Reads every slot once and accumulates into TM. Writes nothing to UM.
pub fn tm_fold(m: &mut Machine, r: &RelHandle, fold: &Fold) -> Result<FoldResult> {
    let _held = m.tm.alloc(r.schema.tuple_words() + 1)?;
    match fold {
        Fold::Sum(attr) => {
            let c = r.schema.index_of(attr)?;
            let mut acc: i64 = 0;
            for i in 0..r.len {
                let t = m.um.read(r.arena, i)?;
                acc = acc.checked_add(int_at(&t, c)).ok_or(Error::Overflow("sum fold"))?;
            }
            Ok(FoldResult::Scalar(acc))
        }
        Fold::Count => {
            for i in 0..r.len {
                m.um.read(r.arena, i)?;
            }
            Ok(FoldResult::Scalar(r.len as i64))
        }
        Fold::CountWhere(p) => {
            let bound = p.bind(&r.schema)?;
            let _consts = m.tm.alloc(bound.words())?;
            let mut acc = 0;
            for i in 0..r.len {
                let t = m.um.read(r.arena, i)?;
                acc += bound.eval(&t) as i64;
            }
            Ok(FoldResult::Scalar(acc))
        }
        Fold::Histogram(attr) => {
            let c = r.schema.index_of(attr)?;
            let mut bins: BTreeMap<Value, u64> = BTreeMap::new();
            let mut held = m.tm.alloc(0)?;
            for i in 0..r.len {
                let t = m.um.read(r.arena, i)?;
                *bins.entry(t[c].clone()).or_default() += 1;
                held.resize(2 * bins.len())?;
            }
            Ok(FoldResult::Histogram(bins))
        }
    }
}

pub(crate) fn fold_sum(m: &mut Machine, r: &RelHandle, attr: &str) -> Result<i64> {
    Ok(tm_fold(m, r, &Fold::Sum(attr.to_string()))?.scalar().unwrap())
}

/// Number of rows satisfying an arbitrary TM-side test, in one read pass.
pub(crate) fn count_by(m: &mut Machine, r: &RelHandle, pred: impl Fn(&Tuple) -> bool) -> Result<usize> {
    let _held = m.tm.alloc(r.schema.tuple_words() + 1)?;
    let mut acc = 0;
    for i in 0..r.len {
        let t = m.um.read(r.arena, i)?;
        acc += pred(&t) as usize;
    }
    Ok(acc)
}
