//! Query templates, planning and plan execution.
//!
//! Planning looks only at schemas and the template, never at data, so two
//! databases with the same schemas get the same plan.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groupagg::{fk_join, group_aggregate, AggFn, AggSpec};
use crate::join::{multiway_join, JoinTree};
use crate::memsim::{Machine, RelHandle};
use crate::primitives::{obl_project, Atom, CmpOp, Predicate};
use crate::relmodel::{Domain, ForeignKey, Schema, Value};

/// A query with its constants abstracted into `?name` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub relations: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub predicates: BTreeMap<String, Vec<AtomTemplate>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agg: Option<AggTemplate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub project: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomTemplate {
    pub attr: String,
    pub op: CmpOp,
    /// `"?k"` for a placeholder, otherwise a literal number or string.
    #[serde(rename = "const")]
    pub constant: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggTemplate {
    #[serde(rename = "fn")]
    pub func: AggFn,
    pub rel: String,
    #[serde(default)]
    pub attr: Option<String>,
}

impl QueryTemplate {
    pub fn from_json(text: &str) -> Result<QueryTemplate> {
        Ok(serde_json::from_str(text)?)
    }

    /// Placeholder names in first-use order.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for atoms in self.predicates.values() {
            for a in atoms {
                if let Some(p) = placeholder(&a.constant) {
                    if !out.iter().any(|x| x == p) {
                        out.push(p.to_string());
                    }
                }
            }
        }
        out
    }
}

fn placeholder(v: &serde_json::Value) -> Option<&str> {
    v.as_str().filter(|s| s.starts_with('?'))
}

/// Values for a template's placeholders, as given on the command line
/// (`?1=5`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(pub BTreeMap<String, String>);

impl Bindings {
    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Bindings> {
        let mut map = BTreeMap::new();
        for it in items {
            let (k, v) = it
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::InvalidQuery(format!("binding `{}` is not ?name=value", it.as_ref())))?;
            let k = k.trim();
            if !k.starts_with('?') {
                return Err(Error::InvalidQuery(format!("placeholder `{k}` must start with ?")));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::InvalidQuery(format!("`{k}` bound twice")));
            }
        }
        Ok(Bindings(map))
    }
}

/// One key/foreign-key collapse: `fk_side ⋈ key_side`, stored under
/// `fk_side`'s name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FkStep {
    pub fk_side: String,
    pub key_side: String,
}

/// An atom together with the domain of the attribute it tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub atom: AtomTemplate,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub fk_steps: Vec<FkStep>,
    pub tree: JoinTree,
    /// Original relations folded into each tree node.
    pub members: Vec<Vec<String>>,
    /// Selection skeleton of each tree node.
    pub selections: Vec<Vec<Selection>>,
    pub agg: Option<AggSpec>,
    pub project: Vec<String>,
    /// Placeholder names the plan expects, with the domain they compare to.
    pub params: BTreeMap<String, Domain>,
}

#[derive(Debug, Clone)]
struct Virtual {
    schema: Schema,
    members: Vec<String>,
}

fn same_set(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

/// The foreign key of `fk` that joins `key` on exactly its key.
fn fk_edge(fk: &Virtual, key: &Virtual) -> Option<ForeignKey> {
    let k = key.schema.key.as_ref()?;
    let shared = fk.schema.shared_with(&key.schema);
    fk.schema
        .foreign_keys
        .iter()
        .find(|f| key.members.contains(&f.references) && same_set(&f.attrs, k) && same_set(&f.attrs, &shared))
        .cloned()
}

fn merge(fk: &Virtual, key: &Virtual, used: &ForeignKey) -> Result<Virtual> {
    let mut attrs = fk.schema.attrs.clone();
    for a in &key.schema.attrs {
        if !fk.schema.has(&a.name) {
            attrs.push(a.clone());
        }
    }
    let mut schema = Schema::new(&fk.schema.name, attrs)?;
    schema.key = fk.schema.key.clone();
    schema.foreign_keys = fk.schema.foreign_keys.iter().filter(|f| *f != used).cloned().collect();
    schema.foreign_keys.extend(key.schema.foreign_keys.iter().cloned());
    let mut members = fk.members.clone();
    members.extend(key.members.iter().cloned());
    Ok(Virtual { schema, members })
}

/// Rooted join tree over `schemas` by ear removal, re-verified against the
/// running-intersection property.
pub fn build_join_tree(schemas: &[&Schema], root: usize) -> Result<(JoinTree, Vec<usize>)> {
    let q = schemas.len();
    if q == 0 {
        return Err(Error::InvalidQuery("no relations".into()));
    }
    let mut alive: Vec<usize> = (0..q).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); q];
    while alive.len() > 1 {
        let ear = alive.iter().enumerate().find_map(|(pos, &e)| {
            let shared: Vec<&String> = schemas[e]
                .attrs
                .iter()
                .map(|a| &a.name)
                .filter(|a| alive.iter().any(|&o| o != e && schemas[o].has(a)))
                .collect();
            alive
                .iter()
                .copied()
                .find(|&f| f != e && shared.iter().all(|a| schemas[f].has(a)))
                .map(|f| (pos, e, f))
        });
        let Some((pos, e, f)) = ear else {
            let names: Vec<&str> = alive.iter().map(|&i| schemas[i].name.as_str()).collect();
            return Err(Error::CyclicJoin(format!("no join tree exists over {}", names.join(", "))));
        };
        adj[e].push(f);
        adj[f].push(e);
        alive.remove(pos);
    }
    // pre-order from the root, children in input order
    let mut order = Vec::with_capacity(q);
    let mut parent_of: Vec<Option<usize>> = vec![None; q];
    let mut stack = vec![root];
    let mut seen = vec![false; q];
    seen[root] = true;
    while let Some(x) = stack.pop() {
        order.push(x);
        let mut kids: Vec<usize> = adj[x].iter().copied().filter(|&k| !seen[k]).collect();
        kids.sort_unstable();
        for &k in kids.iter().rev() {
            seen[k] = true;
            parent_of[k] = Some(x);
            stack.push(k);
        }
    }
    let pos: Vec<usize> = {
        let mut p = vec![0; q];
        for (i, &x) in order.iter().enumerate() {
            p[x] = i;
        }
        p
    };
    let ordered: Vec<&Schema> = order.iter().map(|&i| schemas[i]).collect();
    let parents: Vec<Option<usize>> = order.iter().map(|&i| parent_of[i].map(|p| pos[p])).collect();
    Ok((JoinTree::new(&ordered, &parents)?, order))
}

/// Plans `t` over `schemas`: collapses key/foreign-key joins, roots the
/// join tree at the relation holding the grouping attributes and checks
/// that the rest of the join is acyclic.
pub fn plan(t: &QueryTemplate, schemas: &BTreeMap<String, Schema>) -> Result<Plan> {
    if t.relations.is_empty() {
        return Err(Error::InvalidQuery("the query names no relations".into()));
    }
    let mut rels: Vec<Virtual> = Vec::new();
    for name in &t.relations {
        let s = schemas
            .get(name)
            .ok_or_else(|| Error::InvalidQuery(format!("unknown relation `{name}`")))?;
        if rels.iter().any(|r| r.members.contains(name)) {
            return Err(Error::InvalidQuery(format!("`{name}` listed twice")));
        }
        if let Some(a) = s.attrs.iter().find(|a| a.name.starts_with('#')) {
            return Err(Error::InvalidSchema(format!("attribute `{}` uses the reserved # prefix", a.name)));
        }
        rels.push(Virtual {
            schema: s.clone(),
            members: vec![name.clone()],
        });
    }
    for r in t.predicates.keys() {
        if !t.relations.contains(r) {
            return Err(Error::InvalidQuery(format!("predicate on `{r}`, which the query does not use")));
        }
    }

    let mut fk_steps = Vec::new();
    'collapse: loop {
        for j in 0..rels.len() {
            for i in 0..rels.len() {
                if i == j {
                    continue;
                }
                if let Some(fk) = fk_edge(&rels[j], &rels[i]) {
                    fk_steps.push(FkStep {
                        fk_side: rels[j].schema.name.clone(),
                        key_side: rels[i].schema.name.clone(),
                    });
                    let merged = merge(&rels[j], &rels[i], &fk)?;
                    rels[j] = merged;
                    rels.remove(i);
                    continue 'collapse;
                }
            }
        }
        break;
    }

    let (agg, root) = match (&t.agg, t.group_by.is_empty()) {
        (None, false) => return Err(Error::InvalidQuery("group_by without an aggregate".into())),
        (None, true) => (None, 0),
        (Some(a), _) => {
            let holders: Vec<usize> = (0..rels.len())
                .filter(|&i| t.group_by.iter().all(|g| rels[i].schema.has(g)))
                .collect();
            let Some(&root) = holders.first() else {
                for g in &t.group_by {
                    if !rels.iter().any(|r| r.schema.has(g)) {
                        return Err(Error::UnknownAttribute(g.clone()));
                    }
                }
                return Err(Error::UnsupportedGrouping(format!(
                    "grouping attributes {:?} span relations not connected by foreign keys",
                    t.group_by
                )));
            };
            let node = rels
                .iter()
                .position(|r| r.members.contains(&a.rel))
                .ok_or_else(|| Error::InvalidQuery(format!("aggregate over unknown relation `{}`", a.rel)))?;
            if let Some(x) = &a.attr {
                rels[node].schema.index_of(x)?;
            }
            (Some((a.clone(), node)), root)
        }
    };
    if agg.is_some() && !t.project.is_empty() {
        return Err(Error::InvalidQuery("project and aggregate cannot be combined".into()));
    }

    let refs: Vec<&Schema> = rels.iter().map(|r| &r.schema).collect();
    let (tree, order) = build_join_tree(&refs, root)?;
    let members: Vec<Vec<String>> = order.iter().map(|&i| rels[i].members.clone()).collect();

    let mut params: BTreeMap<String, Domain> = BTreeMap::new();
    let mut selections = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        let mut atoms = Vec::new();
        for mname in &members[k] {
            for a in t.predicates.get(mname).into_iter().flatten() {
                let d = rels[i].schema.attr(&a.attr)?.domain;
                match placeholder(&a.constant) {
                    Some(p) => {
                        if let Some(prev) = params.insert(p.to_string(), d) {
                            if !prev.same_tag(&d) {
                                return Err(Error::InvalidQuery(format!("`{p}` compared with two domains")));
                            }
                        }
                    }
                    None => {
                        literal(&a.constant, d)?;
                    }
                }
                atoms.push(Selection {
                    atom: a.clone(),
                    domain: d,
                });
            }
        }
        selections.push(atoms);
    }

    let agg = agg.map(|(a, node)| AggSpec {
        func: a.func,
        rel: rels[node].schema.name.clone(),
        attr: a.attr,
        group_by: t.group_by.clone(),
    });
    let all: Vec<String> = tree.nodes.iter().flat_map(|n| n.attrs.iter().cloned()).collect();
    for p in &t.project {
        if !all.contains(p) {
            return Err(Error::UnknownAttribute(p.clone()));
        }
    }
    Ok(Plan {
        fk_steps,
        tree,
        members,
        selections,
        agg,
        project: t.project.clone(),
        params,
    })
}

fn literal(v: &serde_json::Value, d: Domain) -> Result<Value> {
    match (v, d) {
        (serde_json::Value::Number(n), Domain::Int) => n
            .as_i64()
            .map(Value::Int)
            .ok_or_else(|| Error::InvalidQuery(format!("{n} is not a 64-bit integer"))),
        (serde_json::Value::String(s), Domain::Int) => parse_const(s, d),
        (serde_json::Value::String(s), Domain::Str { .. }) => parse_const(s, d),
        (serde_json::Value::Null, _) => Ok(Value::Null),
        (v, d) => Err(Error::InvalidQuery(format!("constant {v} does not fit {d:?}"))),
    }
}

fn parse_const(s: &str, d: Domain) -> Result<Value> {
    let v = match d {
        Domain::Int => Value::Int(
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidQuery(format!("`{s}` is not an integer")))?,
        ),
        Domain::Str { .. } => Value::str(s),
    };
    if !d.admits(&v) {
        return Err(Error::InvalidQuery(format!("`{s}` does not fit {d:?}")));
    }
    Ok(v)
}

impl Plan {
    /// Binds placeholders, producing one predicate per tree node. The
    /// constants stay in TM-side plan state.
    pub fn bind(&self, b: &Bindings) -> Result<Vec<Predicate>> {
        for k in b.0.keys() {
            if !self.params.contains_key(k) {
                return Err(Error::InvalidQuery(format!("`{k}` is not a placeholder of this query")));
            }
        }
        self.selections
            .iter()
            .map(|sels| {
                let atoms = sels.iter().map(|s| bind_atom(&s.atom, s.domain, b)).collect::<Result<_>>()?;
                Ok(Predicate(atoms))
            })
            .collect()
    }

    /// Node holding each original relation.
    pub fn node_of(&self, rel: &str) -> Option<usize> {
        self.members.iter().position(|m| m.iter().any(|x| x == rel))
    }
}

/// Resolves one atom's constant against the domain of its attribute.
pub fn bind_atom(a: &AtomTemplate, d: Domain, b: &Bindings) -> Result<Atom> {
    let value = match placeholder(&a.constant) {
        Some(ph) => {
            let raw = b.0.get(ph).ok_or_else(|| Error::InvalidQuery(format!("`{ph}` is unbound")))?;
            parse_const(raw, d)?
        }
        None => literal(&a.constant, d)?,
    };
    Ok(Atom {
        attr: a.attr.clone(),
        op: a.op,
        value,
    })
}

/// Binds the atoms of one relation's selection against its schema.
pub fn bind_predicate(atoms: &[AtomTemplate], schema: &Schema, b: &Bindings) -> Result<Predicate> {
    let atoms = atoms
        .iter()
        .map(|a| bind_atom(a, schema.attr(&a.attr)?.domain, b))
        .collect::<Result<_>>()?;
    Ok(Predicate(atoms))
}

/// Runs `plan` over relations loaded into `m`, keyed by relation name.
pub fn execute(
    m: &mut Machine,
    plan: &Plan,
    inputs: &BTreeMap<String, RelHandle>,
    bindings: &Bindings,
) -> Result<RelHandle> {
    let preds = plan.bind(bindings)?;
    let mut current: BTreeMap<String, RelHandle> = inputs.clone();
    let mut owned: Vec<RelHandle> = Vec::new();
    for step in &plan.fk_steps {
        let fk = current
            .get(&step.fk_side)
            .ok_or_else(|| Error::InvalidQuery(format!("relation `{}` not loaded", step.fk_side)))?;
        let key = current
            .get(&step.key_side)
            .ok_or_else(|| Error::InvalidQuery(format!("relation `{}` not loaded", step.key_side)))?;
        let joined = fk_join(m, fk, key)?;
        owned.push(joined.clone());
        current.remove(&step.key_side);
        current.insert(step.fk_side.clone(), joined);
    }
    let rels: Vec<RelHandle> = plan
        .tree
        .nodes
        .iter()
        .map(|n| {
            current
                .get(&n.name)
                .cloned()
                .ok_or_else(|| Error::InvalidQuery(format!("relation `{}` not loaded", n.name)))
        })
        .collect::<Result<_>>()?;
    let rels: Vec<RelHandle> = rels
        .into_iter()
        .zip(&plan.tree.nodes)
        .map(|(r, n)| {
            if r.schema.names() == n.attrs {
                Ok(r)
            } else {
                Err(Error::InvalidQuery(format!("relation `{}` does not match the planned schema", n.name)))
            }
        })
        .collect::<Result<_>>()?;
    let out = match &plan.agg {
        Some(spec) => group_aggregate(m, &plan.tree, &rels, &preds, spec)?,
        None => {
            let j = multiway_join(m, &plan.tree, &rels, &preds)?;
            if plan.project.is_empty() {
                j
            } else {
                let p = obl_project(m, &j, &plan.project)?;
                m.free(&j);
                p
            }
        }
    };
    for h in &owned {
        m.free(h);
    }
    Ok(out)
}
