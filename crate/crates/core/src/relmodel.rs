//! Schemas, values, tuples and the fixed-width record encoding.
//!
//! Relations are bags of tuples. Every tuple of a schema encodes to the same
//! number of bytes, which is what makes an untrusted-memory slot index a
//! meaningful observable.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STR_WIDTH: usize = 32;
pub const MAX_STR_WIDTH: usize = 255;

/// Scalar attribute value.
///
/// The derived ordering is the total order the engine sorts by:
/// `Null < Int < Str`, integers numerically, strings bytewise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Int(i64),
    Str(Arc<str>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::str(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Int,
    Str {
        #[serde(default = "default_str_width")]
        width: usize,
    },
}

fn default_str_width() -> usize {
    DEFAULT_STR_WIDTH
}

impl Domain {
    pub fn str() -> Domain {
        Domain::Str {
            width: DEFAULT_STR_WIDTH,
        }
    }

    /// Encoded size of one attribute value: a presence tag plus payload.
    pub fn encoded_width(&self) -> usize {
        match self {
            Domain::Int => 1 + 8,
            Domain::Str { width } => 2 + width,
        }
    }

    /// Same tag, ignoring string width.
    pub fn same_tag(&self, other: &Domain) -> bool {
        matches!(
            (self, other),
            (Domain::Int, Domain::Int) | (Domain::Str { .. }, Domain::Str { .. })
        )
    }

    pub fn admits(&self, v: &Value) -> bool {
        match (self, v) {
            (_, Value::Null) => true,
            (Domain::Int, Value::Int(_)) => true,
            (Domain::Str { width }, Value::Str(s)) => s.len() <= *width,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attr {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

impl Attr {
    pub fn int(name: &str) -> Attr {
        Attr {
            name: name.to_string(),
            domain: Domain::Int,
        }
    }

    pub fn str(name: &str) -> Attr {
        Attr {
            name: name.to_string(),
            domain: Domain::str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub attrs: Vec<String>,
    pub references: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub attrs: Vec<Attr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foreign_keys: Vec<ForeignKey>,
}

impl Schema {
    pub fn new(name: &str, attrs: Vec<Attr>) -> Result<Schema> {
        let schema = Schema {
            name: name.to_string(),
            attrs,
            key: None,
            foreign_keys: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_key(mut self, key: &[&str]) -> Result<Schema> {
        self.key = Some(key.iter().map(|s| s.to_string()).collect());
        self.validate()?;
        Ok(self)
    }

    pub fn with_foreign_key(mut self, attrs: &[&str], references: &str) -> Result<Schema> {
        self.foreign_keys.push(ForeignKey {
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
            references: references.to_string(),
        });
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.attrs.iter().enumerate() {
            if self.attrs[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::DuplicateAttribute(a.name.clone()));
            }
            if let Domain::Str { width } = a.domain {
                if width == 0 || width > MAX_STR_WIDTH {
                    return Err(Error::InvalidSchema(format!(
                        "string width {width} of `{}` outside 1..={MAX_STR_WIDTH}",
                        a.name
                    )));
                }
            }
        }
        if let Some(key) = &self.key {
            for k in key {
                self.index_of(k)?;
            }
        }
        for fk in &self.foreign_keys {
            for k in &fk.attrs {
                self.index_of(k)?;
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.attrs.len()
    }

    pub fn has(&self, name: &str) -> bool {
        self.attrs.iter().any(|a| a.name == name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attrs
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attr(&self, name: &str) -> Result<&Attr> {
        Ok(&self.attrs[self.index_of(name)?])
    }

    pub fn names(&self) -> Vec<String> {
        self.attrs.iter().map(|a| a.name.clone()).collect()
    }

    /// Attribute names shared with `other`, in this schema's order.
    pub fn shared_with(&self, other: &Schema) -> Vec<String> {
        self.attrs
            .iter()
            .filter(|a| other.has(&a.name))
            .map(|a| a.name.clone())
            .collect()
    }

    /// Bytes per encoded tuple.
    pub fn slot_width(&self) -> usize {
        self.attrs.iter().map(|a| a.domain.encoded_width()).sum()
    }

    /// TM words needed to hold one tuple (8-byte words).
    pub fn tuple_words(&self) -> usize {
        self.slot_width().div_ceil(8).max(1)
    }

    /// Schema extended by one trailing attribute.
    pub fn extended(&self, attr: Attr) -> Result<Schema> {
        if self.has(&attr.name) {
            return Err(Error::DuplicateAttribute(attr.name));
        }
        let mut attrs = self.attrs.clone();
        attrs.push(attr);
        Ok(Schema {
            name: self.name.clone(),
            attrs,
            key: None,
            foreign_keys: Vec::new(),
        })
    }

    /// Sub-schema over `names`, kept in this schema's attribute order.
    pub fn restricted(&self, names: &[String]) -> Result<Schema> {
        for n in names {
            self.index_of(n)?;
        }
        let attrs = self
            .attrs
            .iter()
            .filter(|a| names.contains(&a.name))
            .cloned()
            .collect();
        Ok(Schema {
            name: self.name.clone(),
            attrs,
            key: None,
            foreign_keys: Vec::new(),
        })
    }

    pub fn renamed(mut self, name: &str) -> Schema {
        self.name = name.to_string();
        self
    }

    pub fn check_tuple(&self, t: &Tuple) -> Result<()> {
        if t.arity() != self.arity() {
            return Err(Error::DomainMismatch {
                attr: self.name.clone(),
                detail: format!("arity {} != schema arity {}", t.arity(), self.arity()),
            });
        }
        for (a, v) in self.attrs.iter().zip(t.values()) {
            if !a.domain.admits(v) {
                return Err(Error::DomainMismatch {
                    attr: a.name.clone(),
                    detail: format!("value `{v:?}` not in domain {:?}", a.domain),
                });
            }
        }
        Ok(())
    }

    pub fn encode(&self, t: &Tuple, out: &mut Vec<u8>) -> Result<()> {
        self.check_tuple(t)?;
        for (a, v) in self.attrs.iter().zip(t.values()) {
            match (a.domain, v) {
                (Domain::Int, Value::Null) => out.extend_from_slice(&[0u8; 9]),
                (Domain::Int, Value::Int(x)) => {
                    out.push(1);
                    out.extend_from_slice(&x.to_le_bytes());
                }
                (Domain::Str { width }, Value::Null) => {
                    out.extend(std::iter::repeat_n(0u8, width + 2));
                }
                (Domain::Str { width }, Value::Str(s)) => {
                    out.push(1);
                    out.push(s.len() as u8);
                    out.extend_from_slice(s.as_bytes());
                    out.extend(std::iter::repeat_n(0u8, width - s.len()));
                }
                _ => unreachable!("checked by check_tuple"),
            }
        }
        Ok(())
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Tuple> {
        if bytes.len() != self.slot_width() {
            return Err(Error::Io(format!(
                "record of {} bytes, expected {}",
                bytes.len(),
                self.slot_width()
            )));
        }
        let mut values = Vec::with_capacity(self.arity());
        let mut pos = 0;
        for a in &self.attrs {
            let w = a.domain.encoded_width();
            let field = &bytes[pos..pos + w];
            pos += w;
            let v = match (field[0], a.domain) {
                (0, _) => Value::Null,
                (1, Domain::Int) => Value::Int(i64::from_le_bytes(field[1..9].try_into().unwrap())),
                (1, Domain::Str { width }) => {
                    let len = field[1] as usize;
                    if len > width {
                        return Err(Error::Io(format!("string length {len} exceeds width {width}")));
                    }
                    let s = std::str::from_utf8(&field[2..2 + len])
                        .map_err(|e| Error::Io(e.to_string()))?;
                    Value::str(s)
                }
                (tag, _) => return Err(Error::Io(format!("bad presence tag {tag}"))),
            };
            values.push(v);
        }
        Ok(Tuple::new(values))
    }
}

/// A fixed-arity row. The schema it belongs to travels separately.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tuple(Box<[Value]>);

impl Tuple {
    pub fn new(values: Vec<Value>) -> Tuple {
        Tuple(values.into_boxed_slice())
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> &Value {
        &self.0[i]
    }

    pub fn into_vec(self) -> Vec<Value> {
        self.0.into_vec()
    }

    pub fn with_appended(&self, v: Value) -> Tuple {
        let mut values = Vec::with_capacity(self.0.len() + 1);
        values.extend_from_slice(&self.0);
        values.push(v);
        Tuple::new(values)
    }

    pub fn pick(&self, cols: &[usize]) -> Tuple {
        Tuple::new(cols.iter().map(|&c| self.0[c].clone()).collect())
    }
}

impl std::ops::Index<usize> for Tuple {
    type Output = Value;
    fn index(&self, i: usize) -> &Value {
        &self.0[i]
    }
}

/// `t` restricted to `attrs`, values in schema order.
pub fn restrict(schema: &Schema, t: &Tuple, attrs: &[String]) -> Result<Tuple> {
    for a in attrs {
        schema.index_of(a)?;
    }
    let cols: Vec<usize> = schema
        .attrs
        .iter()
        .enumerate()
        .filter(|(_, a)| attrs.contains(&a.name))
        .map(|(i, _)| i)
        .collect();
    Ok(t.pick(&cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Asc,
    Desc,
}

/// Ordered list of `(attr, direction)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SortKey(pub Vec<(String, Direction)>);

impl SortKey {
    pub fn asc(attrs: &[&str]) -> SortKey {
        SortKey(attrs.iter().map(|a| (a.to_string(), Direction::Asc)).collect())
    }

    pub fn then(mut self, attr: &str, dir: Direction) -> SortKey {
        self.0.push((attr.to_string(), dir));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn resolve(&self, schema: &Schema) -> Result<ResolvedKey> {
        let cols = self
            .0
            .iter()
            .map(|(a, d)| Ok((schema.index_of(a)?, *d)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResolvedKey { cols })
    }
}

/// A sort key bound to column positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedKey {
    pub cols: Vec<(usize, Direction)>,
}

impl ResolvedKey {
    pub fn cmp(&self, a: &Tuple, b: &Tuple) -> Ordering {
        for &(c, d) in &self.cols {
            let o = a[c].cmp(&b[c]);
            let o = if d == Direction::Desc { o.reverse() } else { o };
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    }

    /// Key comparison followed by full-tuple ascending tiebreak.
    pub fn cmp_total(&self, a: &Tuple, b: &Tuple) -> Ordering {
        self.cmp(a, b).then_with(|| a.cmp(b))
    }
}

pub fn tuple_compare(schema: &Schema, t1: &Tuple, t2: &Tuple, key: &SortKey) -> Result<Ordering> {
    Ok(key.resolve(schema)?.cmp(t1, t2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab() -> Schema {
        Schema::new("R", vec![Attr::int("A"), Attr::int("B")]).unwrap()
    }

    fn t(vals: &[i64]) -> Tuple {
        Tuple::new(vals.iter().map(|&v| Value::Int(v)).collect())
    }

    #[test]
    fn value_order() {
        assert!(Value::Null < Value::Int(i64::MIN));
        assert!(Value::Int(i64::MAX) < Value::str(""));
        assert!(Value::str("a") < Value::str("b"));
        assert_eq!(Value::Null, Value::Null);
    }

    #[test]
    fn restrict_examples() {
        let s = ab();
        assert_eq!(restrict(&s, &t(&[1, 2]), &["A".into()]).unwrap(), t(&[1]));
        assert_eq!(
            restrict(&s, &t(&[1, 2]), &["B".into(), "A".into()]).unwrap(),
            t(&[1, 2])
        );
        assert_eq!(
            restrict(&s, &t(&[1, 2]), &["Z".into()]),
            Err(Error::UnknownAttribute("Z".into()))
        );

        let fig7 = Schema::new(
            "R",
            vec![Attr::int("Id"), Attr::str("A"), Attr::int("N"), Attr::int("N_S")],
        )
        .unwrap();
        let row = Tuple::new(vec![1.into(), "a".into(), 1.into(), 3.into()]);
        assert_eq!(
            restrict(&fig7, &row, &["A".into(), "N_S".into()]).unwrap(),
            Tuple::new(vec!["a".into(), 3.into()])
        );
    }

    #[test]
    fn compare_examples() {
        let s = ab();
        let asc_a = SortKey::asc(&["A"]);
        assert_eq!(tuple_compare(&s, &t(&[1, 0]), &t(&[2, 0]), &asc_a).unwrap(), Ordering::Less);
        let mixed = SortKey::asc(&["A"]).then("B", Direction::Desc);
        assert_eq!(tuple_compare(&s, &t(&[1, 9]), &t(&[1, 3]), &mixed).unwrap(), Ordering::Less);
        assert_eq!(tuple_compare(&s, &t(&[4, 4]), &t(&[4, 4]), &mixed).unwrap(), Ordering::Equal);
        assert!(tuple_compare(&s, &t(&[1, 1]), &t(&[1, 1]), &SortKey::asc(&["C"])).is_err());
    }

    #[test]
    fn schema_validation() {
        assert_eq!(
            Schema::new("R", vec![Attr::int("A"), Attr::int("A")]),
            Err(Error::DuplicateAttribute("A".into()))
        );
        assert!(ab().with_key(&["C"]).is_err());
        assert!(ab().with_foreign_key(&["B"], "S").is_ok());
    }

    #[test]
    fn encoding_is_fixed_width() {
        let s = Schema::new(
            "R",
            vec![Attr::int("A"), Attr { name: "S".into(), domain: Domain::Str { width: 4 } }],
        )
        .unwrap();
        let mut buf = Vec::new();
        s.encode(&Tuple::new(vec![7.into(), "ab".into()]), &mut buf).unwrap();
        assert_eq!(buf.len(), s.slot_width());
        s.encode(&Tuple::new(vec![Value::Null, Value::Null]), &mut buf).unwrap();
        assert_eq!(buf.len(), 2 * s.slot_width());
        assert!(s.encode(&Tuple::new(vec![7.into(), "abcde".into()]), &mut buf).is_err());
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            (-5i64..5).prop_map(Value::Int),
            "[a-c]{0,3}".prop_map(|s| Value::str(&s)),
        ]
    }

    fn arb_tuple() -> impl Strategy<Value = Tuple> {
        prop::collection::vec(arb_value(), 3).prop_map(Tuple::new)
    }

    fn three() -> Schema {
        Schema::new(
            "T",
            vec![
                Attr { name: "X".into(), domain: Domain::str() },
                Attr { name: "Y".into(), domain: Domain::str() },
                Attr { name: "Z".into(), domain: Domain::str() },
            ],
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn compare_is_total_order(a in arb_tuple(), b in arb_tuple(), c in arb_tuple(),
                                  dirs in prop::collection::vec(any::<bool>(), 3)) {
            let s = three();
            let mut key = SortKey::default();
            for (name, desc) in ["Z", "X", "Y"].iter().zip(&dirs) {
                key = key.then(name, if *desc { Direction::Desc } else { Direction::Asc });
            }
            let k = key.resolve(&s).unwrap();
            prop_assert_eq!(k.cmp(&a, &b), k.cmp(&b, &a).reverse());
            if k.cmp(&a, &b) != Ordering::Greater && k.cmp(&b, &c) != Ordering::Greater {
                prop_assert_ne!(k.cmp(&a, &c), Ordering::Greater);
            }
            prop_assert_eq!(k.cmp(&a, &a), Ordering::Equal);
        }

        #[test]
        fn restrict_composes(a in arb_tuple(), xmask in 0u8..8, ymask in 0u8..8) {
            let s = three();
            let names = ["X", "Y", "Z"];
            let x: Vec<String> = (0..3).filter(|i| xmask >> i & 1 == 1).map(|i| names[i].to_string()).collect();
            let y: Vec<String> = x.iter().enumerate().filter(|(i, _)| ymask >> i & 1 == 1).map(|(_, n)| n.clone()).collect();
            let inner = restrict(&s, &a, &x).unwrap();
            let sx = s.restricted(&x).unwrap();
            prop_assert_eq!(restrict(&sx, &inner, &y).unwrap(), restrict(&s, &a, &y).unwrap());
        }

        #[test]
        fn encode_decode_roundtrip(x in prop::option::of(any::<i64>()), y in prop::option::of("[a-z]{0,32}")) {
            let s = Schema::new("T", vec![Attr::int("X"), Attr::str("Y")]).unwrap();
            let a = Tuple::new(vec![
                x.map_or(Value::Null, Value::Int),
                y.map_or(Value::Null, |y| Value::str(&y)),
            ]);
            let mut buf = Vec::new();
            s.encode(&a, &mut buf).unwrap();
            prop_assert_eq!(s.decode(&buf).unwrap(), a);
        }
    }
}
