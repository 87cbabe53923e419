use std::sync::Arc;

use crate::error::{Error, Result};
use crate::memsim::{Machine, RelHandle};
use crate::relmodel::{Attr, Domain, Schema, Tuple, Value};

/// `Attr(R) ∪ Attr(S)`: R's attributes, then S's new ones. Shared string
/// attributes take the wider of the two widths.
fn union_schema(r: &Schema, s: &Schema) -> Result<Schema> {
    let mut attrs: Vec<Attr> = r.attrs.clone();
    for a in &mut attrs {
        if let Ok(b) = s.attr(&a.name) {
            if !a.domain.same_tag(&b.domain) {
                return Err(Error::DomainMismatch {
                    attr: a.name.clone(),
                    detail: format!("{:?} vs {:?}", a.domain, b.domain),
                });
            }
            if let (Domain::Str { width: w1 }, Domain::Str { width: w2 }) = (a.domain, b.domain) {
                a.domain = Domain::Str { width: w1.max(w2) };
            }
        }
    }
    attrs.extend(s.attrs.iter().filter(|b| !r.has(&b.name)).cloned());
    let mut out = Schema::new(&r.name, attrs)?;
    out.name = r.name.clone();
    Ok(out)
}

/// Generalized union: R rows first, then S rows, each padded with Null on
/// the other side's attributes.
pub fn gen_union(m: &mut Machine, r: &RelHandle, s: &RelHandle) -> Result<RelHandle> {
    let schema = union_schema(&r.schema, &s.schema)?;
    let from_s: Vec<Option<usize>> = schema.attrs.iter().map(|a| s.schema.index_of(&a.name).ok()).collect();
    let pad = schema.arity() - r.schema.arity();
    let _held = m.tm.alloc(schema.tuple_words())?;
    let out = m.alloc_rel(Arc::new(schema), r.len + s.len);
    for i in 0..r.len {
        let mut v = m.um.read(r.arena, i)?.into_vec();
        v.extend(std::iter::repeat_n(Value::Null, pad));
        m.um.write(out.arena, i, Tuple::new(v))?;
    }
    for i in 0..s.len {
        let t = m.um.read(s.arena, i)?;
        let v = from_s
            .iter()
            .map(|c| c.map_or(Value::Null, |c| t[c].clone()))
            .collect();
        m.um.write(out.arena, r.len + i, Tuple::new(v))?;
    }
    Ok(out)
}

/// Positional concatenation of two equal-length sequences. The i-th tuples
/// must agree on the shared attributes.
pub fn stitch(m: &mut Machine, r: &RelHandle, s: &RelHandle) -> Result<RelHandle> {
    if r.len != s.len {
        return Err(Error::StitchMismatch {
            position: r.len.min(s.len),
            detail: format!("lengths {} and {}", r.len, s.len),
        });
    }
    let schema = union_schema(&r.schema, &s.schema)?;
    let shared: Vec<(usize, usize)> = r
        .schema
        .attrs
        .iter()
        .enumerate()
        .filter_map(|(i, a)| s.schema.index_of(&a.name).ok().map(|j| (i, j)))
        .collect();
    let extra: Vec<usize> = s
        .schema
        .attrs
        .iter()
        .enumerate()
        .filter(|(_, a)| !r.schema.has(&a.name))
        .map(|(j, _)| j)
        .collect();
    let _held = m
        .tm
        .alloc(r.schema.tuple_words() + s.schema.tuple_words())?;
    let out = m.alloc_rel(Arc::new(schema), r.len);
    for i in 0..r.len {
        let a = m.um.read(r.arena, i)?;
        let b = m.um.read(s.arena, i)?;
        if let Some(&(x, y)) = shared.iter().find(|&&(x, y)| a[x] != b[y]) {
            return Err(Error::StitchMismatch {
                position: i,
                detail: format!(
                    "`{}` is {:?} on the left and {:?} on the right",
                    r.schema.attrs[x].name, a[x], b[y]
                ),
            });
        }
        let mut v = a.into_vec();
        v.extend(extra.iter().map(|&j| b[j].clone()));
        m.um.write(out.arena, i, Tuple::new(v))?;
    }
    Ok(out)
}
