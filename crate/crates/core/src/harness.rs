//! Ground truth, matched instance pairs, and the obliviousness check.
//!
//! Two runs are indistinguishable when their layout logs and access traces
//! are equal. The engine is deterministic, so one run per side decides it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion::expand;
use crate::groupagg::{exact_mean, AggFn, AggSpec};
use crate::join::binary_join;
use crate::memsim::{AccessEvent, Machine, RelHandle, TraceMode, TrustedMemory, DEFAULT_TM_CONSTANT};
use crate::planner::{bind_predicate, build_join_tree, execute, plan, AtomTemplate, Bindings, Plan, QueryTemplate};
use crate::relmodel::{Attr, Domain, Schema, Tuple, Value};
use crate::semijoin::semijoin_agg;
use crate::storage::{Database, Table};

/// A result as named columns and a bag of rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultSet {
    pub fn from_tuples(columns: Vec<String>, tuples: &[Tuple]) -> ResultSet {
        ResultSet {
            columns,
            rows: tuples.iter().map(|t| t.values().to_vec()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Columns sorted by name, rows sorted; two results are the same bag iff
    /// their canonical forms are equal.
    pub fn canonical(&self) -> ResultSet {
        let mut order: Vec<usize> = (0..self.columns.len()).collect();
        order.sort_by(|&a, &b| self.columns[a].cmp(&self.columns[b]));
        let mut rows: Vec<Vec<Value>> = self
            .rows
            .iter()
            .map(|r| order.iter().map(|&c| r[c].clone()).collect())
            .collect();
        rows.sort();
        ResultSet {
            columns: order.iter().map(|&c| self.columns[c].clone()).collect(),
            rows,
        }
    }

    pub fn same_bag(&self, other: &ResultSet) -> bool {
        self.canonical() == other.canonical()
    }
}

fn table<'a>(db: &'a Database, name: &str) -> Result<&'a Table> {
    db.get(name)
        .ok_or_else(|| Error::InvalidQuery(format!("relation `{name}` is not in the database")))
}

fn selected(t: &Table, atoms: &[AtomTemplate], b: &Bindings) -> Result<Vec<Tuple>> {
    let p = bind_predicate(atoms, &t.schema, b)?.bind(&t.schema)?;
    Ok(t.rows.iter().filter(|r| p.eval(r)).cloned().collect())
}

/// Natural join by nested loops in the given relation order, after the
/// per-relation selections of `preds`.
pub fn oracle_join(
    db: &Database,
    relations: &[String],
    preds: &BTreeMap<String, Vec<AtomTemplate>>,
    b: &Bindings,
) -> Result<ResultSet> {
    let mut cols: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Value>> = vec![Vec::new()];
    for name in relations {
        let t = table(db, name)?;
        let sel = selected(t, preds.get(name).map(Vec::as_slice).unwrap_or(&[]), b)?;
        let names = t.schema.names();
        let shared: Vec<(usize, usize)> = names
            .iter()
            .enumerate()
            .filter_map(|(j, a)| cols.iter().position(|c| c == a).map(|i| (i, j)))
            .collect();
        let fresh: Vec<usize> = (0..names.len()).filter(|&j| !cols.contains(&names[j])).collect();
        let mut next = Vec::new();
        for row in &rows {
            for s in &sel {
                if shared.iter().all(|&(i, j)| row[i] == s[j]) {
                    let mut v = row.clone();
                    v.extend(fresh.iter().map(|&j| s[j].clone()));
                    next.push(v);
                }
            }
        }
        cols.extend(fresh.iter().map(|&j| names[j].clone()));
        rows = next;
    }
    if relations.is_empty() {
        rows.clear();
    }
    Ok(ResultSet { columns: cols, rows })
}

#[derive(Default)]
struct Acc {
    count: i64,
    sum: i64,
    nn_count: i64,
    min: Option<Value>,
    max: Option<Value>,
}

/// Brute-force evaluation of a bound template: nested-loop join, direct
/// filters, hash grouping.
pub fn oracle_eval(db: &Database, t: &QueryTemplate, b: &Bindings) -> Result<ResultSet> {
    let j = oracle_join(db, &t.relations, &t.predicates, b)?;
    let col = |a: &str| {
        j.columns
            .iter()
            .position(|c| c == a)
            .ok_or_else(|| Error::UnknownAttribute(a.to_string()))
    };
    match &t.agg {
        None if t.project.is_empty() => Ok(j),
        None => {
            let idx: Vec<usize> = t.project.iter().map(|a| col(a)).collect::<Result<_>>()?;
            Ok(ResultSet {
                columns: t.project.clone(),
                rows: j.rows.iter().map(|r| idx.iter().map(|&c| r[c].clone()).collect()).collect(),
            })
        }
        Some(a) => {
            let spec = AggSpec {
                func: a.func,
                rel: a.rel.clone(),
                attr: a.attr.clone(),
                group_by: t.group_by.clone(),
            };
            let g: Vec<usize> = t.group_by.iter().map(|x| col(x)).collect::<Result<_>>()?;
            let x = a.attr.as_deref().map(col).transpose()?;
            let mut groups: HashMap<Vec<Value>, Acc> = HashMap::new();
            for r in &j.rows {
                let acc = groups.entry(g.iter().map(|&c| r[c].clone()).collect()).or_default();
                acc.count += 1;
                if let Some(v) = x.map(|c| &r[c]) {
                    if !v.is_null() {
                        acc.nn_count += 1;
                        acc.sum = acc
                            .sum
                            .checked_add(v.as_int().unwrap_or(0))
                            .ok_or(Error::Overflow("oracle sum"))?;
                        if acc.min.as_ref().is_none_or(|m| v < m) {
                            acc.min = Some(v.clone());
                        }
                        if acc.max.as_ref().is_none_or(|m| v > m) {
                            acc.max = Some(v.clone());
                        }
                    }
                }
            }
            let mut columns = t.group_by.clone();
            columns.push(spec.output_attr());
            let rows = groups
                .into_iter()
                .map(|(mut key, acc)| {
                    key.push(match a.func {
                        AggFn::Sum => Value::Int(acc.sum),
                        AggFn::Count => Value::Int(acc.count),
                        AggFn::Min => acc.min.unwrap_or(Value::Null),
                        AggFn::Max => acc.max.unwrap_or(Value::Null),
                        AggFn::Avg if acc.nn_count == 0 => Value::Null,
                        AggFn::Avg => Value::str(&exact_mean(acc.sum, acc.nn_count)),
                    });
                    key
                })
                .collect();
            Ok(ResultSet { columns, rows })
        }
    }
}

/// Result size of a bound template by counting over a join tree, without
/// materializing the join. Falls back to [`oracle_eval`] when no single
/// relation holds the grouping attributes.
pub fn output_size(db: &Database, t: &QueryTemplate, b: &Bindings) -> Result<usize> {
    let tables: Vec<&Table> = t.relations.iter().map(|n| table(db, n)).collect::<Result<_>>()?;
    let schemas: Vec<&Schema> = tables.iter().map(|x| &x.schema).collect();
    let root = if t.agg.is_some() {
        match schemas.iter().position(|s| t.group_by.iter().all(|g| s.has(g))) {
            Some(r) => r,
            None => return Ok(oracle_eval(db, t, b)?.len()),
        }
    } else {
        0
    };
    let (tree, order) = build_join_tree(&schemas, root)?;
    let mut rows: Vec<Vec<Tuple>> = Vec::with_capacity(order.len());
    for &i in &order {
        rows.push(selected(tables[i], t.predicates.get(&t.relations[i]).map(Vec::as_slice).unwrap_or(&[]), b)?);
    }
    let key = |s: &Schema, r: &Tuple, attrs: &[String]| -> Vec<Value> {
        attrs.iter().map(|a| r[s.index_of(a).unwrap()].clone()).collect()
    };
    let mut counts: Vec<Vec<u128>> = vec![Vec::new(); tree.len()];
    let mut up_maps: Vec<HashMap<Vec<Value>, u128>> = vec![HashMap::new(); tree.len()];
    for i in (0..tree.len()).rev() {
        let s = schemas[order[i]];
        let c: Vec<u128> = rows[i]
            .iter()
            .map(|r| {
                tree.nodes[i].children.iter().fold(1u128, |acc, &k| {
                    let jk = key(s, r, &tree.nodes[k].join_attrs);
                    acc.saturating_mul(up_maps[k].get(&jk).copied().unwrap_or(0))
                })
            })
            .collect();
        let mut map: HashMap<Vec<Value>, u128> = HashMap::new();
        for (r, &n) in rows[i].iter().zip(&c) {
            *map.entry(key(s, r, &tree.nodes[i].join_attrs)).or_default() += n;
        }
        up_maps[i] = map;
        counts[i] = c;
    }
    let s0 = schemas[order[0]];
    if t.agg.is_some() {
        let groups: BTreeSet<Vec<Value>> = rows[0]
            .iter()
            .zip(&counts[0])
            .filter(|(_, &n)| n > 0)
            .map(|(r, _)| key(s0, r, &t.group_by))
            .collect();
        Ok(groups.len())
    } else {
        let total: u128 = counts[0].iter().sum();
        usize::try_from(total).map_err(|_| Error::Overflow("output size"))
    }
}

/// The operations the verifier knows how to run.
#[derive(Debug, Clone)]
pub enum Operation {
    /// `R.(X ⟵⋉ Sum(S.Y))`.
    SemijoinAgg { r: String, s: String, x: String, y: String },
    /// Every row of `rel` repeated `weight` times.
    Expand { rel: String, weight: String },
    BinaryJoin { r: String, s: String },
    /// A planned template: multiway join, selections, grouping, FK collapse.
    Query { template: QueryTemplate, plan: Box<Plan> },
    /// Textbook nested-loop join that writes a row whenever a pair matches.
    /// Not oblivious; shipped to show the verifier can fail.
    NestedLoopFoil { r: String, s: String },
}

impl Operation {
    pub fn query(template: QueryTemplate, schemas: &BTreeMap<String, Schema>) -> Result<Operation> {
        let p = plan(&template, schemas)?;
        Ok(Operation::Query {
            template,
            plan: Box::new(p),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Operation::SemijoinAgg { .. } => "semijoin_agg",
            Operation::Expand { .. } => "expand",
            Operation::BinaryJoin { .. } => "binary_join",
            Operation::Query { plan, .. } if plan.agg.is_some() => "group_aggregate",
            Operation::Query { .. } => "multiway_join",
            Operation::NestedLoopFoil { .. } => "nested_loop_foil",
        }
    }

    /// Relations in load order.
    pub fn relations(&self) -> Vec<String> {
        match self {
            Operation::SemijoinAgg { r, s, .. } | Operation::BinaryJoin { r, s } | Operation::NestedLoopFoil { r, s } => {
                vec![r.clone(), s.clone()]
            }
            Operation::Expand { rel, .. } => vec![rel.clone()],
            Operation::Query { template, .. } => template.relations.clone(),
        }
    }

    fn join_template(&self) -> QueryTemplate {
        QueryTemplate {
            relations: self.relations(),
            predicates: BTreeMap::new(),
            group_by: Vec::new(),
            agg: None,
            project: Vec::new(),
        }
    }

    pub fn run(&self, m: &mut Machine, inputs: &BTreeMap<String, RelHandle>, b: &Bindings) -> Result<RelHandle> {
        let get = |n: &str| {
            inputs
                .get(n)
                .ok_or_else(|| Error::InvalidQuery(format!("relation `{n}` not loaded")))
        };
        match self {
            Operation::SemijoinAgg { r, s, x, y } => semijoin_agg(m, get(r)?, get(s)?, x, y),
            Operation::Expand { rel, weight } => expand(m, get(rel)?, weight),
            Operation::BinaryJoin { r, s } => binary_join(m, get(r)?, get(s)?),
            Operation::Query { plan, .. } => execute(m, plan, inputs, b),
            Operation::NestedLoopFoil { r, s } => nested_loop_join(m, get(r)?, get(s)?),
        }
    }

    pub fn oracle(&self, db: &Database, b: &Bindings) -> Result<ResultSet> {
        match self {
            Operation::SemijoinAgg { r, s, x, y } => {
                let (r, s) = (table(db, r)?, table(db, s)?);
                let shared: Vec<(usize, usize)> = r
                    .schema
                    .shared_with(&s.schema)
                    .iter()
                    .map(|a| Ok((r.schema.index_of(a)?, s.schema.index_of(a)?)))
                    .collect::<Result<_>>()?;
                let yc = s.schema.index_of(y)?;
                let mut columns = r.schema.names();
                columns.push(x.clone());
                let mut rows = Vec::with_capacity(r.rows.len());
                for rt in &r.rows {
                    let mut sum = 0i64;
                    for st in &s.rows {
                        if shared.iter().all(|&(i, j)| rt[i] == st[j]) {
                            sum = sum
                                .checked_add(st[yc].as_int().unwrap_or(0))
                                .ok_or(Error::Overflow("oracle sum"))?;
                        }
                    }
                    let mut v = rt.values().to_vec();
                    v.push(Value::Int(sum));
                    rows.push(v);
                }
                Ok(ResultSet { columns, rows })
            }
            Operation::Expand { rel, weight } => {
                let t = table(db, rel)?;
                let w = t.schema.index_of(weight)?;
                let mut rows = Vec::new();
                for r in &t.rows {
                    let k = r[w].as_int().unwrap_or(0);
                    if k < 0 {
                        return Err(Error::InvalidQuery(format!("negative weight {k}")));
                    }
                    rows.extend(std::iter::repeat_n(r.values().to_vec(), k as usize));
                }
                Ok(ResultSet {
                    columns: t.schema.names(),
                    rows,
                })
            }
            Operation::BinaryJoin { .. } | Operation::NestedLoopFoil { .. } => {
                oracle_eval(db, &self.join_template(), b)
            }
            Operation::Query { template, .. } => oracle_eval(db, template, b),
        }
    }

    /// Output size without running the engine; cheap enough to drive the
    /// pair generator.
    pub fn output_size(&self, db: &Database, b: &Bindings) -> Result<usize> {
        match self {
            Operation::SemijoinAgg { r, .. } => Ok(table(db, r)?.rows.len()),
            Operation::Expand { rel, weight } => {
                let t = table(db, rel)?;
                let w = t.schema.index_of(weight)?;
                let s: i64 = t.rows.iter().map(|r| r[w].as_int().unwrap_or(0).max(0)).sum();
                Ok(s as usize)
            }
            Operation::BinaryJoin { .. } | Operation::NestedLoopFoil { .. } => {
                output_size(db, &self.join_template(), b)
            }
            Operation::Query { template, .. } => output_size(db, template, b),
        }
    }

    pub fn placeholders(&self) -> BTreeMap<String, Domain> {
        match self {
            Operation::Query { plan, .. } => plan.params.clone(),
            _ => BTreeMap::new(),
        }
    }
}

/// Reads every `(r, s)` pair and writes each match as it is found, so the
/// write positions reveal the join graph.
pub fn nested_loop_join(m: &mut Machine, r: &RelHandle, s: &RelHandle) -> Result<RelHandle> {
    let join = r.schema.shared_with(&s.schema);
    let rj: Vec<usize> = join.iter().map(|a| r.schema.index_of(a)).collect::<Result<_>>()?;
    let sj: Vec<usize> = join.iter().map(|a| s.schema.index_of(a)).collect::<Result<_>>()?;
    let fresh: Vec<usize> = (0..s.schema.arity())
        .filter(|&j| !r.schema.has(&s.schema.attrs[j].name))
        .collect();
    let mut attrs: Vec<Attr> = r.schema.attrs.clone();
    attrs.extend(fresh.iter().map(|&j| s.schema.attrs[j].clone()));
    let schema = Schema::new(&r.schema.name, attrs)?;
    let _held = m.tm.alloc(r.schema.tuple_words() + s.schema.tuple_words() + 1)?;
    let mut matches = Vec::new();
    for i in 0..r.len {
        let a = m.um.read(r.arena, i)?;
        for j in 0..s.len {
            let b = m.um.read(s.arena, j)?;
            if rj.iter().zip(&sj).all(|(&x, &y)| a[x] == b[y]) {
                matches.push((i, j));
            }
        }
    }
    let out = m.alloc_rel(std::sync::Arc::new(schema), matches.len());
    let mut k = 0;
    for i in 0..r.len {
        let a = m.um.read(r.arena, i)?;
        for j in 0..s.len {
            let b = m.um.read(s.arena, j)?;
            if rj.iter().zip(&sj).all(|(&x, &y)| a[x] == b[y]) {
                let mut v = a.values().to_vec();
                v.extend(fresh.iter().map(|&c| b[c].clone()));
                m.um.write(out.arena, k, Tuple::new(v))?;
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Two databases with the same schemas and sizes and equal output size
/// under `op`, each with its own constant bindings.
#[derive(Debug, Clone)]
pub struct InstancePair {
    pub id: String,
    pub seed: u64,
    pub left: Database,
    pub right: Database,
    pub left_bindings: Bindings,
    pub right_bindings: Bindings,
}

impl InstancePair {
    pub fn trivial(id: &str, db: Database, b: Bindings) -> InstancePair {
        InstancePair {
            id: id.to_string(),
            seed: 0,
            left: db.clone(),
            right: db,
            left_bindings: b.clone(),
            right_bindings: b,
        }
    }

    /// Confirms equal schemas, equal relation sizes and equal oracle output
    /// sizes.
    pub fn check_matched(&self, op: &Operation) -> Result<()> {
        for name in op.relations() {
            let (a, b) = (table(&self.left, &name)?, table(&self.right, &name)?);
            if a.schema != b.schema || a.rows.len() != b.rows.len() {
                return Err(Error::SizeMismatch(format!("`{name}` differs in schema or size between sides")));
            }
        }
        let l = op.oracle(&self.left, &self.left_bindings)?.len();
        let r = op.oracle(&self.right, &self.right_bindings)?.len();
        if l != r {
            return Err(Error::SizeMismatch(format!("output sizes {l} and {r} differ")));
        }
        Ok(())
    }
}

/// Everything observable about one engine run, plus its result.
#[derive(Debug, Clone)]
pub struct SideRun {
    pub digest: [u8; 32],
    pub trace_len: u64,
    pub layout: Vec<(usize, usize)>,
    pub result: ResultSet,
    pub tm_peak: usize,
    pub tm_budget: usize,
    pub counters: usize,
    pub trace: Option<Vec<AccessEvent>>,
}

/// Loads the relations of `op` in order, runs it and reads the result out.
pub fn run_side(op: &Operation, db: &Database, b: &Bindings, mode: TraceMode) -> Result<SideRun> {
    let mut m = Machine::with_tm(mode, TrustedMemory::new(DEFAULT_TM_CONSTANT));
    let mut inputs = BTreeMap::new();
    for name in op.relations() {
        let t = table(db, &name)?;
        inputs.insert(name, m.load(t.schema.clone(), &t.rows)?);
    }
    let out = op.run(&mut m, &inputs, b)?;
    let rows = m.unload(&out)?;
    Ok(SideRun {
        digest: m.um.digest().unwrap_or([0; 32]),
        trace_len: m.um.trace_len(),
        layout: m.um.layout().to_vec(),
        result: ResultSet::from_tuples(out.schema.names(), &rows),
        tm_peak: m.tm.peak(),
        tm_budget: m.tm.budget(),
        counters: m.tm.counter_high_water(),
        trace: (mode == TraceMode::Full).then(|| m.um.trace().to_vec()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub pair_id: String,
    pub seed: u64,
    pub op: String,
    pub verdict: Verdict,
    /// Index of the first differing access event.
    pub first_divergence: Option<u64>,
    pub traces_equal: bool,
    pub layouts_equal: bool,
    pub oracle_match: [bool; 2],
    /// Total input rows, equal on both sides.
    pub input_len: usize,
    pub output_len: [usize; 2],
    pub trace_len: [u64; 2],
    pub counter_high_water: [usize; 2],
    pub tm_peak: [usize; 2],
    pub tm_budget: [usize; 2],
}

impl VerdictReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn first_difference(a: &[AccessEvent], b: &[AccessEvent]) -> u64 {
    a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len())) as u64
}

/// Runs `op` on both sides of `pair` and compares layouts and traces; on a
/// digest mismatch both sides are rerun with full traces to locate the
/// first differing event. Each result is also checked against the oracle.
pub fn verify_oblivious(pair: &InstancePair, op: &Operation) -> Result<VerdictReport> {
    pair.check_matched(op)?;
    let l = run_side(op, &pair.left, &pair.left_bindings, TraceMode::Digest)?;
    let r = run_side(op, &pair.right, &pair.right_bindings, TraceMode::Digest)?;
    let traces_equal = l.digest == r.digest && l.trace_len == r.trace_len;
    let layouts_equal = l.layout == r.layout;
    let first_divergence = if traces_equal {
        None
    } else {
        let lf = run_side(op, &pair.left, &pair.left_bindings, TraceMode::Full)?;
        let rf = run_side(op, &pair.right, &pair.right_bindings, TraceMode::Full)?;
        Some(first_difference(lf.trace.as_deref().unwrap(), rf.trace.as_deref().unwrap()))
    };
    let oracle_match = [
        op.oracle(&pair.left, &pair.left_bindings)?.same_bag(&l.result),
        op.oracle(&pair.right, &pair.right_bindings)?.same_bag(&r.result),
    ];
    let pass = traces_equal && layouts_equal && oracle_match[0] && oracle_match[1];
    Ok(VerdictReport {
        pair_id: pair.id.clone(),
        seed: pair.seed,
        op: op.name().to_string(),
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        first_divergence,
        traces_equal,
        layouts_equal,
        oracle_match,
        input_len: op.relations().iter().map(|n| pair.left[n].rows.len()).sum(),
        output_len: [l.result.len(), r.result.len()],
        trace_len: [l.trace_len, r.trace_len],
        counter_high_water: [l.counters, r.counters],
        tm_peak: [l.tm_peak, r.tm_peak],
        tm_budget: [l.tm_budget, r.tm_budget],
    })
}

/// Shape of generated instances.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub sizes: BTreeMap<String, usize>,
    /// Values come from `0..domain` unless `ranges` names the attribute.
    pub domain: i64,
    pub ranges: BTreeMap<String, i64>,
    /// Chance of Null in attributes that are neither keys nor shared.
    pub null_rate: f64,
    pub max_edits: usize,
}

impl GenSpec {
    pub fn uniform(op: &Operation, n: usize, domain: i64) -> GenSpec {
        GenSpec {
            sizes: op.relations().into_iter().map(|r| (r, n)).collect(),
            domain,
            ranges: BTreeMap::new(),
            null_rate: 0.0,
            max_edits: 20_000,
        }
    }

    fn range(&self, attr: &str) -> i64 {
        self.ranges.get(attr).copied().unwrap_or(self.domain).max(1)
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Uniform,
    Skewed,
}

fn draw(rng: &mut ChaCha8Rng, range: i64, shape: Shape) -> i64 {
    match shape {
        Shape::Uniform => rng.gen_range(0..range),
        Shape::Skewed => {
            let u: f64 = rng.gen();
            ((u * u * range as f64) as i64).min(range - 1)
        }
    }
}

fn as_value(k: i64, d: Domain) -> Value {
    match d {
        Domain::Int => Value::Int(k),
        Domain::Str { width } => {
            let s = format!("v{k}");
            Value::str(&s[..s.len().min(width)])
        }
    }
}

struct Layout {
    /// `(relation, column)` pairs the hill climb may rewrite.
    editable: Vec<(String, usize)>,
    /// Foreign-key columns and the referenced relation's key columns.
    fks: Vec<(String, Vec<usize>, String, Vec<usize>)>,
}

fn layout(names: &[String], schemas: &BTreeMap<String, Schema>) -> Result<Layout> {
    let mut editable = Vec::new();
    let mut fks = Vec::new();
    for n in names {
        let s = schemas.get(n).ok_or_else(|| Error::InvalidQuery(format!("unknown relation `{n}`")))?;
        let key: &[String] = s.key.as_deref().unwrap_or(&[]);
        for (c, a) in s.attrs.iter().enumerate() {
            if !key.contains(&a.name) {
                editable.push((n.clone(), c));
            }
        }
        for fk in &s.foreign_keys {
            let Some(target) = schemas.get(&fk.references).filter(|_| names.contains(&fk.references)) else {
                continue;
            };
            let Some(tkey) = &target.key else { continue };
            let from = fk.attrs.iter().map(|a| s.index_of(a)).collect::<Result<_>>()?;
            let to = tkey.iter().map(|a| target.index_of(a)).collect::<Result<_>>()?;
            fks.push((n.clone(), from, fk.references.clone(), to));
        }
    }
    Ok(Layout { editable, fks })
}

fn random_db(
    names: &[String],
    schemas: &BTreeMap<String, Schema>,
    spec: &GenSpec,
    lay: &Layout,
    shape: Shape,
    rng: &mut ChaCha8Rng,
) -> Result<Database> {
    let shared = |rel: &str, a: &str| names.iter().any(|o| o != rel && schemas[o].has(a));
    let mut db = Database::new();
    for n in names {
        let s = &schemas[n];
        let len = spec.sizes.get(n).copied().unwrap_or(0);
        let key: Vec<String> = s.key.clone().unwrap_or_default();
        let mut unique: Vec<i64> = (0..len as i64).collect();
        unique.shuffle(rng);
        let rows = (0..len)
            .map(|i| {
                let values = s
                    .attrs
                    .iter()
                    .map(|a| {
                        if key.first() == Some(&a.name) {
                            as_value(unique[i], a.domain)
                        } else if !key.contains(&a.name) && !shared(n, &a.name) && rng.gen_bool(spec.null_rate) {
                            Value::Null
                        } else {
                            as_value(draw(rng, spec.range(&a.name), shape), a.domain)
                        }
                    })
                    .collect();
                Tuple::new(values)
            })
            .collect();
        db.insert(n.clone(), Table::new(s.clone(), rows)?);
    }
    for (from_rel, from, to_rel, to) in &lay.fks {
        let targets: Vec<Vec<Value>> = db[to_rel]
            .rows
            .iter()
            .map(|r| to.iter().map(|&c| r[c].clone()).collect())
            .collect();
        if targets.is_empty() {
            continue;
        }
        let t = db.get_mut(from_rel).unwrap();
        for r in t.rows.iter_mut() {
            let pick = &targets[rng.gen_range(0..targets.len())];
            let mut v = r.values().to_vec();
            for (&c, x) in from.iter().zip(pick) {
                v[c] = x.clone();
            }
            *r = Tuple::new(v);
        }
    }
    Ok(db)
}

fn random_bindings(params: &BTreeMap<String, Domain>, spec: &GenSpec, rng: &mut ChaCha8Rng) -> Bindings {
    Bindings(
        params
            .iter()
            .map(|(k, d)| (k.clone(), as_value(rng.gen_range(0..spec.domain.max(1)), *d).to_string()))
            .collect(),
    )
}

/// One random instance of `op`'s relations with uniform values, plus
/// random bindings for its placeholders.
pub fn gen_instance(
    op: &Operation,
    schemas: &BTreeMap<String, Schema>,
    spec: &GenSpec,
    seed: u64,
) -> Result<(Database, Bindings)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = op.relations();
    let lay = layout(&names, schemas)?;
    let db = random_db(&names, schemas, spec, &lay, Shape::Uniform, &mut rng)?;
    let b = random_bindings(&op.placeholders(), spec, &mut rng);
    Ok((db, b))
}

/// Generates a matched pair: the left side uniform, the right side skewed
/// and then edited one value at a time until its output size equals the
/// left's. The final sizes are confirmed with the oracle.
pub fn gen_matched_pair(
    op: &Operation,
    schemas: &BTreeMap<String, Schema>,
    spec: &GenSpec,
    seed: u64,
) -> Result<InstancePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = op.relations();
    let lay = layout(&names, schemas)?;
    let left = random_db(&names, schemas, spec, &lay, Shape::Uniform, &mut rng)?;
    let mut right = random_db(&names, schemas, spec, &lay, Shape::Skewed, &mut rng)?;
    let params = op.placeholders();
    let lb = random_bindings(&params, spec, &mut rng);
    let rb = random_bindings(&params, spec, &mut rng);
    let target = op.output_size(&left, &lb)? as i64;
    let mut cur = op.output_size(&right, &rb)? as i64;

    let fk_cols: Vec<(String, usize)> = lay
        .fks
        .iter()
        .flat_map(|(r, cols, _, _)| cols.iter().map(move |&c| (r.clone(), c)))
        .collect();
    let editable: Vec<&(String, usize)> = lay
        .editable
        .iter()
        .filter(|(r, _)| !right[r].rows.is_empty())
        .collect();
    let mut edits = 0;
    while cur != target && edits < spec.max_edits && !editable.is_empty() {
        edits += 1;
        let (rel, col) = editable[rng.gen_range(0..editable.len())].clone();
        let row = rng.gen_range(0..right[&rel].rows.len());
        let old = right[&rel].rows[row].clone();
        let mut v = old.values().to_vec();
        if let Some((_, from, to_rel, to)) = lay.fks.iter().find(|(r, from, _, _)| *r == rel && from.contains(&col)) {
            let t = &right[to_rel].rows;
            if t.is_empty() {
                continue;
            }
            let pick = &t[rng.gen_range(0..t.len())];
            for (&c, &k) in from.iter().zip(to) {
                v[c] = pick[k].clone();
            }
        } else if !fk_cols.contains(&(rel.clone(), col)) {
            let a = &right[&rel].schema.attrs[col];
            v[col] = as_value(rng.gen_range(0..spec.range(&a.name)), a.domain);
        }
        right.get_mut(&rel).unwrap().rows[row] = Tuple::new(v);
        let next = op.output_size(&right, &rb)? as i64;
        if (next - target).abs() <= (cur - target).abs() {
            cur = next;
        } else {
            right.get_mut(&rel).unwrap().rows[row] = old;
        }
    }
    if cur != target {
        return Err(Error::GenerationTimeout(edits));
    }
    let pair = InstancePair {
        id: format!("{}-{seed}", op.name()),
        seed,
        left,
        right,
        left_bindings: lb,
        right_bindings: rb,
    };
    pair.check_matched(op)?;
    Ok(pair)
}

fn int_table(name: &str, attrs: &[&str], rows: &[Vec<i64>]) -> Table {
    let s = Schema::new(name, attrs.iter().map(|a| Attr::int(a)).collect()).unwrap();
    let rows = rows
        .iter()
        .map(|r| Tuple::new(r.iter().map(|&v| Value::Int(v)).collect()))
        .collect();
    Table::new(s, rows).unwrap()
}

fn db_of(tables: Vec<Table>) -> Database {
    tables.into_iter().map(|t| (t.schema.name.clone(), t)).collect()
}

/// Two join instances over `R(A, B)` and `S(B, C)` with `|R| = |S| = 16`
/// and 16 join rows each: the left is a perfect matching on `B`, the right
/// is one `4 × 4` block plus unmatched rows.
pub fn sixteen_row_pair() -> (Operation, InstancePair) {
    let matching = db_of(vec![
        int_table("R", &["A", "B"], &(0..16).map(|i| vec![i, i]).collect::<Vec<_>>()),
        int_table("S", &["B", "C"], &(0..16).map(|i| vec![i, 100 + i]).collect::<Vec<_>>()),
    ]);
    let block = db_of(vec![
        int_table(
            "R",
            &["A", "B"],
            &(0..16).map(|i| vec![i, if i < 4 { 0 } else { 100 + i }]).collect::<Vec<_>>(),
        ),
        int_table(
            "S",
            &["B", "C"],
            &(0..16).map(|i| vec![if i < 4 { 0 } else { 200 + i }, 100 + i]).collect::<Vec<_>>(),
        ),
    ]);
    let op = Operation::BinaryJoin {
        r: "R".into(),
        s: "S".into(),
    };
    let pair = InstancePair {
        id: "sixteen-row-join".into(),
        seed: 0,
        left: matching,
        right: block,
        left_bindings: Bindings::default(),
        right_bindings: Bindings::default(),
    };
    (op, pair)
}

/// Weights `[k; k]` against one row of weight `k²` followed by zeros.
pub fn skewed_weights_pair(k: i64) -> (Operation, InstancePair) {
    let flat: Vec<Vec<i64>> = (0..k).map(|i| vec![i, k]).collect();
    let spike: Vec<Vec<i64>> = (0..k).map(|i| vec![i, if i == 0 { k * k } else { 0 }]).collect();
    let op = Operation::Expand {
        rel: "R".into(),
        weight: "W".into(),
    };
    let pair = InstancePair {
        id: format!("skewed-weights-{k}"),
        seed: 0,
        left: db_of(vec![int_table("R", &["A", "W"], &flat)]),
        right: db_of(vec![int_table("R", &["A", "W"], &spike)]),
        left_bindings: Bindings::default(),
        right_bindings: Bindings::default(),
    };
    (op, pair)
}

/// A selection `R.A < ?1` before `R ⋈ S` where the two sides pass disjoint
/// sets of row positions, four rows each.
pub fn selection_pair() -> Result<(Operation, InstancePair)> {
    let s = int_table("S", &["B", "C"], &(0..8).map(|i| vec![i, 10 * i]).collect::<Vec<_>>());
    let low_first = db_of(vec![
        int_table("R", &["A", "B"], &(0..8).map(|i| vec![i, i]).collect::<Vec<_>>()),
        s.clone(),
    ]);
    let high_first = db_of(vec![
        int_table("R", &["A", "B"], &(0..8).map(|i| vec![7 - i, i]).collect::<Vec<_>>()),
        s,
    ]);
    let t = QueryTemplate::from_json(
        r#"{"relations":["R","S"],"predicates":{"R":[{"attr":"A","op":"<","const":"?1"}]}}"#,
    )?;
    let op = Operation::query(t, &crate::storage::schemas_of(&low_first))?;
    let b = Bindings::parse(&["?1=4"])?;
    let pair = InstancePair {
        id: "selection-disjoint-rows".into(),
        seed: 0,
        left: low_first,
        right: high_first,
        left_bindings: b.clone(),
        right_bindings: b,
    };
    Ok((op, pair))
}

/// Binary join workload for scaling runs: `|R| = |S| = n` joining one to
/// one on `B`, so `m = n`. Returns the UM access count and the TM peak.
pub fn bench_binary_join(n: usize, seed: u64) -> Result<(u64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<i64> = (0..n as i64).collect();
    keys.shuffle(&mut rng);
    let r = int_table("R", &["A", "B"], &keys.iter().enumerate().map(|(i, &k)| vec![i as i64, k]).collect::<Vec<_>>());
    let s = int_table("S", &["B", "C"], &(0..n as i64).map(|k| vec![k, -k]).collect::<Vec<_>>());
    let mut m = Machine::new(TraceMode::Count);
    let rh = m.load(r.schema, &r.rows)?;
    let sh = m.load(s.schema, &s.rows)?;
    let out = binary_join(&mut m, &rh, &sh)?;
    if out.len != n {
        return Err(Error::SizeMismatch(format!("bench join produced {} rows, expected {n}", out.len)));
    }
    Ok((m.um.trace_len(), m.tm.peak()))
}
