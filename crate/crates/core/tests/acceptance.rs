//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use oblivq::expansion::{expand_prefix_heavy, reorder_barely_prefix_heavy, counter_bound, RoundedDistribution};
use oblivq::groupagg::AggFn;
use oblivq::harness::{
    bench_binary_join, gen_instance, gen_matched_pair, run_side, sixteen_row_pair, verify_oblivious, GenSpec,
    InstancePair, Operation,
};
use oblivq::join::{binary_join_stages, ID, JID, N, N_R, N_S};
use oblivq::memsim::{ceil_log2, Machine, RelHandle, TraceMode, TrustedMemory, DEFAULT_TM_CONSTANT};
use oblivq::planner::{execute, plan, Bindings, QueryTemplate};
use oblivq::primitives::{augment, grouping_identity, grouping_running_sum};
use oblivq::relmodel::{Attr, Schema, SortKey, Tuple, Value};
use oblivq::semijoin::{degree, semijoin_agg, semijoin_agg_on, Contribution};
use oblivq::storage::{schemas_of, Database, Table};
use oblivq::{Error, Result};

const GOLDEN_LIMIT: Duration = Duration::from_secs(1);
const OBLIVIOUS_LIMIT: Duration = Duration::from_secs(600);
const ORACLE_LIMIT: Duration = Duration::from_secs(300);
const PAIRS_PER_OP: usize = 100;
const SEEDS_PER_CLASS: u64 = 200;
const MAX_ORACLE_N: u64 = 200;
const TM_SCOPE: u64 = 1 << 17;
const GROWTH: (f64, f64) = (2.0, 2.6);

struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn absorb(&mut self, what: &str, r: Result<()>) {
        if let Err(e) = r {
            self.failures.push(format!("{what}: {e}"));
        }
    }
}

/// TM observations gathered from every engine run in the suite.
#[derive(Default)]
struct TmLog {
    runs: Vec<(String, u64, u64, usize)>,
}

impl TmLog {
    fn record(&mut self, label: &str, n: u64, m: u64, peak: usize) {
        self.runs.push((label.to_string(), n, m, peak));
    }
}

fn tm_bound(n: u64, m: u64) -> usize {
    DEFAULT_TM_CONSTANT * ceil_log2(n + m + 2) as usize
}

fn ints(name: &str, attrs: &[&str]) -> Schema {
    Schema::new(name, attrs.iter().map(|a| Attr::int(a)).collect()).unwrap()
}

fn load(m: &mut Machine, schema: Schema, rows: Vec<Vec<Value>>) -> RelHandle {
    let rows: Vec<Tuple> = rows.into_iter().map(Tuple::new).collect();
    m.load(schema, &rows).unwrap()
}

fn column(m: &Machine, r: &RelHandle, cols: &[&str]) -> Result<Vec<Vec<Value>>> {
    let idx: Vec<usize> = cols.iter().map(|c| r.schema.index_of(c)).collect::<Result<_>>()?;
    Ok(m.inspect(r)?.iter().map(|t| idx.iter().map(|&i| t[i].clone()).collect()).collect())
}

fn sorted_by_first(mut v: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    v.sort_by(|a, b| a[0].as_int().cmp(&b[0].as_int()));
    v
}

fn iv(rows: &[&[i64]]) -> Vec<Vec<Value>> {
    rows.iter().map(|r| r.iter().map(|&x| Value::Int(x)).collect()).collect()
}

// ---- criterion 1 ----

fn derived_columns(o: &mut Outcome) -> Result<()> {
    let mut m = Machine::new(TraceMode::Full);
    let r = load(&mut m, ints("R", &["A"]), iv(&[&[1], &[2], &[1]]));
    let empty: [&str; 0] = [];
    let r = grouping_identity(&mut m, &r, &empty, &SortKey::default(), "Id")?;
    let r = augment(&mut m, &r, Attr::int("B"), |t| Ok(Value::Int(2 * t[0].as_int().unwrap_or(0))))?;
    let r = grouping_identity(&mut m, &r, &["A"], &SortKey::asc(&["Id"]), "C")?;
    let r = grouping_running_sum(&mut m, &r, &empty, &SortKey::asc(&["Id"]), "B", "D")?;
    let s = load(&mut m, ints("S", &["A", "B"]), iv(&[&[1, 1], &[2, 1], &[2, 1]]));
    let r = semijoin_agg_on(&mut m, &r, &s, &["A"], "E", Contribution::Attr("B"), oblivq::primitives::RunKind::Sum)?;
    let got = sorted_by_first(column(&m, &r, &["Id", "B", "C", "D", "E"])?);
    let want = iv(&[&[1, 2, 1, 2, 1], &[2, 4, 1, 6, 2], &[3, 2, 2, 8, 1]]);
    o.check(got == want, format!("derived columns B..E: got {got:?}"));
    Ok(())
}

fn semijoin_sums(o: &mut Outcome) -> Result<()> {
    let mut m = Machine::new(TraceMode::Full);
    let r = load(
        &mut m,
        Schema::new("R", vec![Attr::int("Id"), Attr::str("A")])?,
        vec![vec![1.into(), "a".into()], vec![2.into(), "b".into()]],
    );
    let s = load(
        &mut m,
        Schema::new("S", vec![Attr::str("A"), Attr::int("Y")])?,
        vec![vec!["a".into(), 2.into()], vec!["b".into(), 3.into()], vec!["a".into(), 4.into()]],
    );
    let out = semijoin_agg(&mut m, &r, &s, "X", "Y")?;
    let got = sorted_by_first(column(&m, &out, &["Id", "X"])?);
    o.check(got == iv(&[&[1, 6], &[2, 3]]), format!("semijoin X column: got {got:?}"));
    Ok(())
}

fn expansion_steps(o: &mut Outcome) -> Result<()> {
    let mut m = Machine::new(TraceMode::Full);
    let r = load(
        &mut m,
        Schema::new("R", vec![Attr::str("A"), Attr::int("W")])?,
        vec![vec!["a".into(), 4.into()], vec!["b".into(), 1.into()], vec!["c".into(), 2.into()]],
    );
    let (out, stats) = expand_prefix_heavy(&mut m, &r, "W", 7, true)?;
    let names: Vec<String> = column(&m, &out, &["A"])?.iter().map(|v| v[0].to_string()).collect();
    o.check(names == ["a", "a", "b", "a", "a", "c", "c"], format!("expansion output: got {names:?}"));
    let steps = stats.steps.unwrap_or_default();
    let emitted: Vec<Vec<usize>> = steps.iter().map(|s| s.emitted.clone()).collect();
    o.check(
        emitted == vec![vec![0, 0], vec![1, 0, 0], vec![2, 2]],
        format!("expansion steps: got {emitted:?}"),
    );
    let counters: Vec<Vec<(usize, u64)>> = steps.iter().map(|s| s.counters.clone()).collect();
    o.check(
        counters.len() == 3 && counters[0] == vec![(0, 2)] && counters[1].is_empty() && counters[2].is_empty(),
        format!("counter trajectory: got {counters:?}"),
    );
    Ok(())
}

fn three_by_four_join(o: &mut Outcome) -> Result<()> {
    let mut m = Machine::new(TraceMode::Full);
    let a = |v: &[&str]| v.iter().map(|s| vec![Value::from(*s)]).collect::<Vec<_>>();
    let r = load(&mut m, Schema::new("R", vec![Attr::str("A")])?, a(&["a", "b", "a"]));
    let s = load(&mut m, Schema::new("S", vec![Attr::str("A")])?, a(&["a", "b", "a", "a"]));

    let d = degree(&mut m, &r, &s, "N_S")?;
    let mut ns: Vec<i64> = column(&m, &d, &["N_S"])?
        .iter()
        .map(|v| v[0].as_int().unwrap())
        .collect();
    ns.sort();
    o.check(ns == [1, 3, 3], format!("degrees into S: got {ns:?}"));

    let (out, st) = binary_join_stages(&mut m, &r, &s)?;
    o.check(out.len == 7, format!("join has {} rows, expected 7", out.len));
    let (x, y) = (Value::from("a"), Value::from("b"));
    let i = Value::Int;
    let rt = sorted_by_first(column(&m, &st.r_tilde, &[ID, "A", N, N_S])?);
    o.check(
        rt == vec![
            vec![i(1), x.clone(), i(1), i(3)],
            vec![i(2), y.clone(), i(1), i(1)],
            vec![i(3), x.clone(), i(1), i(3)],
        ],
        format!("annotated R: got {rt:?}"),
    );
    let stt = sorted_by_first(column(&m, &st.s_tilde, &[ID, "A", N, N_R, JID])?);
    o.check(
        stt == vec![
            vec![i(1), x.clone(), i(1), i(2), i(1)],
            vec![i(2), y.clone(), i(1), i(1), i(1)],
            vec![i(3), x.clone(), i(1), i(2), i(2)],
            vec![i(4), x.clone(), i(1), i(2), i(3)],
        ],
        format!("annotated S: got {stt:?}"),
    );
    let seq = |h: &RelHandle| -> Result<Vec<(i64, String, i64)>> {
        Ok(column(&m, h, &[ID, "A", JID])?
            .iter()
            .map(|v| (v[0].as_int().unwrap(), v[1].to_string(), v[2].as_int().unwrap()))
            .collect())
    };
    let tri = |v: &[(i64, &str, i64)]| v.iter().map(|(a, b, c)| (*a, b.to_string(), *c)).collect::<Vec<_>>();
    let re = seq(&st.r_exp)?;
    o.check(
        re == tri(&[(1, "a", 1), (3, "a", 1), (1, "a", 2), (3, "a", 2), (1, "a", 3), (3, "a", 3), (2, "b", 1)]),
        format!("expanded R: got {re:?}"),
    );
    let se = seq(&st.s_exp)?;
    o.check(
        se == tri(&[(1, "a", 1), (1, "a", 1), (3, "a", 2), (3, "a", 2), (4, "a", 3), (4, "a", 3), (2, "b", 1)]),
        format!("expanded S: got {se:?}"),
    );
    let mut joined: Vec<String> = column(&m, &out, &["A"])?.iter().map(|v| v[0].to_string()).collect();
    joined.sort();
    o.check(
        joined == ["a", "a", "a", "a", "a", "a", "b"],
        format!("join rows: got {joined:?}"),
    );
    Ok(())
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let r = derived_columns(&mut o);
    o.absorb("derived columns", r);
    let r = semijoin_sums(&mut o);
    o.absorb("semijoin sums", r);
    let r = expansion_steps(&mut o);
    o.absorb("expansion steps", r);
    let r = three_by_four_join(&mut o);
    o.absorb("3x4 join", r);
    let el = t.elapsed();
    o.check(el < GOLDEN_LIMIT, format!("took {el:?}, limit {GOLDEN_LIMIT:?}"));
    o
}

// ---- shared operation catalogue ----

fn schemas(list: &[Schema]) -> BTreeMap<String, Schema> {
    list.iter().map(|s| (s.name.clone(), s.clone())).collect()
}

fn two_way() -> BTreeMap<String, Schema> {
    schemas(&[ints("R", &["A", "B"]), ints("S", &["B", "C"])])
}

fn chain() -> BTreeMap<String, Schema> {
    schemas(&[ints("R", &["A", "B"]), ints("S", &["B", "C"]), ints("T", &["C", "D"])])
}

fn template(json: &str) -> QueryTemplate {
    QueryTemplate::from_json(json).unwrap()
}

fn agg_template(f: AggFn, grouped: bool) -> QueryTemplate {
    let name = serde_json::to_value(f).unwrap();
    let attr = if f == AggFn::Count { "null".to_string() } else { "\"C\"".to_string() };
    let group = if grouped { r#","group_by":["A"]"# } else { "" };
    template(&format!(
        r#"{{"relations":["R","S"]{group},"agg":{{"fn":{name},"rel":"S","attr":{attr}}}}}"#
    ))
}

fn selection_template() -> QueryTemplate {
    template(
        r#"{"relations":["R","S"],
            "predicates":{"R":[{"attr":"A","op":"<","const":"?1"}],"S":[{"attr":"C","op":">=","const":"?2"}]}}"#,
    )
}

/// An operation class with its schemas and per-size generator settings.
struct Class {
    name: String,
    op: Operation,
    schemas: BTreeMap<String, Schema>,
    spec: fn(&Operation, usize) -> GenSpec,
}

fn join_spec(op: &Operation, n: usize) -> GenSpec {
    GenSpec::uniform(op, n, n.max(2) as i64)
}

fn expand_spec(op: &Operation, n: usize) -> GenSpec {
    let mut g = GenSpec::uniform(op, n, n.max(2) as i64);
    g.ranges.insert("W".into(), 4);
    g
}

fn group_spec(op: &Operation, n: usize) -> GenSpec {
    let mut g = GenSpec::uniform(op, n, n.max(2) as i64);
    g.ranges.insert("A".into(), (n as i64 / 4).max(2));
    g.ranges.insert("C".into(), 100);
    g
}

fn classes() -> Vec<Class> {
    let q = |t: QueryTemplate, s: &BTreeMap<String, Schema>| Operation::query(t, s).unwrap();
    let sj = schemas(&[ints("R", &["A", "B"]), ints("S", &["B", "Y"])]);
    let ex = schemas(&[ints("R", &["A", "W"])]);
    vec![
        Class {
            name: "semijoin_agg".into(),
            op: Operation::SemijoinAgg {
                r: "R".into(),
                s: "S".into(),
                x: "X".into(),
                y: "Y".into(),
            },
            schemas: sj,
            spec: join_spec,
        },
        Class {
            name: "expand".into(),
            op: Operation::Expand {
                rel: "R".into(),
                weight: "W".into(),
            },
            schemas: ex,
            spec: expand_spec,
        },
        Class {
            name: "binary_join".into(),
            op: Operation::BinaryJoin {
                r: "R".into(),
                s: "S".into(),
            },
            schemas: two_way(),
            spec: join_spec,
        },
        Class {
            name: "multiway_join".into(),
            op: q(template(r#"{"relations":["R","S","T"]}"#), &chain()),
            schemas: chain(),
            spec: join_spec,
        },
        Class {
            name: "group_aggregate".into(),
            op: q(agg_template(AggFn::Sum, true), &two_way()),
            schemas: two_way(),
            spec: group_spec,
        },
        Class {
            name: "selections+join".into(),
            op: q(selection_template(), &two_way()),
            schemas: two_way(),
            spec: join_spec,
        },
    ]
}

// ---- criterion 2 ----

fn pair_size(i: usize) -> usize {
    match i {
        0 | 50 | 99 => 4096,
        _ if i % 10 == 9 => 1024,
        _ => [1, 2, 5, 16, 33, 64, 100, 200, 256][i % 10 % 9],
    }
}

fn criterion_2(tm: &mut TmLog) -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let foil = Operation::NestedLoopFoil {
        r: "R".into(),
        s: "S".into(),
    };
    let foil_on = |pair: &InstancePair| verify_oblivious(pair, &foil);
    let mut foil_failures = 0;

    let (op, pair) = sixteen_row_pair();
    match verify_oblivious(&pair, &op) {
        Ok(rep) => o.check(rep.passed(), format!("16-row pair fails binary_join: {rep:?}")),
        Err(e) => o.check(false, format!("16-row pair: {e}")),
    }
    match foil_on(&pair) {
        Ok(rep) if !rep.passed() => foil_failures += 1,
        Ok(_) => {}
        Err(e) => o.check(false, format!("foil on 16-row pair: {e}")),
    }

    for c in classes() {
        let mut verified = 0;
        let mut skipped = 0;
        let mut largest = 0;
        for i in 0..PAIRS_PER_OP {
            let n = pair_size(i);
            let spec = (c.spec)(&c.op, n);
            let mut pair = None;
            for attempt in 0..5u64 {
                let seed = 1_000 * attempt + i as u64;
                match gen_matched_pair(&c.op, &c.schemas, &spec, seed) {
                    Ok(p) => {
                        pair = Some(p);
                        break;
                    }
                    Err(Error::GenerationTimeout(_)) => skipped += 1,
                    Err(e) => {
                        o.check(false, format!("{} pair {i}: {e}", c.name));
                        break;
                    }
                }
            }
            let Some(pair) = pair else {
                o.check(false, format!("{} pair {i} (n={n}): no matched pair after retries", c.name));
                continue;
            };
            match verify_oblivious(&pair, &c.op) {
                Ok(rep) => {
                    o.check(rep.passed(), format!("{} {} diverged: {rep:?}", c.name, rep.pair_id));
                    for s in 0..2 {
                        tm.record(&c.name, rep.input_len as u64, rep.output_len[s] as u64, rep.tm_peak[s]);
                    }
                    verified += 1;
                    largest = largest.max(n);
                }
                Err(e) => o.check(false, format!("{} {}: {e}", c.name, pair.id)),
            }
            if c.name == "binary_join" && foil_failures < 3 && n <= 256 {
                if let Ok(rep) = foil_on(&pair) {
                    if !rep.passed() {
                        foil_failures += 1;
                    }
                }
            }
        }
        o.check(verified == PAIRS_PER_OP, format!("{}: {verified}/{PAIRS_PER_OP} pairs verified", c.name));
        o.note(format!("{} {verified} pairs (n<={largest}, {skipped} regenerated)", c.name));
    }
    o.check(foil_failures >= 1, "nested-loop foil passed every pair");
    o.note(format!("foil failed {foil_failures} pairs"));
    let el = t.elapsed();
    o.check(el < OBLIVIOUS_LIMIT, format!("took {el:?}, limit {OBLIVIOUS_LIMIT:?}"));
    o
}

// ---- criterion 3 ----

fn total_rows(db: &Database) -> u64 {
    db.values().map(|t| t.rows.len() as u64).sum()
}

fn oracle_class(o: &mut Outcome, tm: &mut TmLog, c: &Class, zero_every: Option<u64>) -> usize {
    let mut empty_outputs = 0;
    for seed in 0..SEEDS_PER_CLASS {
        let n = ((seed * 37 + 11) % (MAX_ORACLE_N + 1)) as usize;
        let mut spec = (c.spec)(&c.op, n);
        spec.null_rate = 0.1;
        let (db, mut b) = match gen_instance(&c.op, &c.schemas, &spec, seed) {
            Ok(x) => x,
            Err(e) => {
                o.check(false, format!("{} seed {seed}: {e}", c.name));
                continue;
            }
        };
        if zero_every.is_some_and(|k| seed % k == 0) {
            b = Bindings::parse(&["?1=0", "?2=0"]).unwrap();
        }
        let run = run_side(&c.op, &db, &b, TraceMode::Count);
        let want = c.op.oracle(&db, &b);
        match (run, want) {
            (Ok(run), Ok(want)) => {
                o.check(
                    want.same_bag(&run.result),
                    format!("{} seed {seed} (n={n}): engine {} rows, oracle {} rows", c.name, run.result.len(), want.len()),
                );
                if want.is_empty() {
                    empty_outputs += 1;
                }
                tm.record(&c.name, total_rows(&db), run.result.len() as u64, run.tm_peak);
            }
            (Err(e), _) | (_, Err(e)) => o.check(false, format!("{} seed {seed}: {e}", c.name)),
        }
    }
    empty_outputs
}

fn criterion_3(tm: &mut TmLog) -> Outcome {
    let mut o = Outcome::new();
    let t = Instant::now();
    let mut list = classes();
    list.retain(|c| c.name != "group_aggregate");
    for f in [AggFn::Sum, AggFn::Count, AggFn::Min, AggFn::Max, AggFn::Avg] {
        for grouped in [true, false] {
            list.push(Class {
                name: format!("{f:?}{}", if grouped { " grouped" } else { "" }).to_lowercase(),
                op: Operation::query(agg_template(f, grouped), &two_way()).unwrap(),
                schemas: two_way(),
                spec: group_spec,
            });
        }
    }
    let mut zero = 0;
    for c in &list {
        let zero_every = (c.name == "selections+join").then_some(4);
        let e = oracle_class(&mut o, tm, c, zero_every);
        if zero_every.is_some() {
            zero = e;
        }
    }
    o.check(zero > 0, "no zero-selectivity selection was exercised");
    o.note(format!("{} classes x {SEEDS_PER_CLASS} seeds, {zero} empty selections", list.len()));
    let el = t.elapsed();
    o.check(el < ORACLE_LIMIT, format!("took {el:?}, limit {ORACLE_LIMIT:?}"));
    o
}

// ---- criterion 4 ----

fn criterion_4(tm: &mut TmLog) -> Outcome {
    let mut o = Outcome::new();
    let r = (|| -> Result<()> {
        let n = 1600usize;
        let w: Vec<u64> = (0..n).map(|i| if i < 400 { 4 } else { 0 }).collect();
        let rows: Vec<Vec<Value>> = w.iter().enumerate().map(|(i, &x)| vec![Value::Int(i as i64), Value::Int(x as i64)]).collect();
        let total: u64 = w.iter().sum();

        // the direct feed needs more TM than the budget allows, by design
        let mut m = Machine::with_tm(TraceMode::Count, TrustedMemory::with_budget(usize::MAX / 2));
        let r = load(&mut m, ints("R", &["Id", "W"]), rows.clone());
        let (_, direct) = expand_prefix_heavy(&mut m, &r, "W", total, false)?;
        o.check(direct.max_counters >= 240, format!("direct feed used {} counters, need >= 240", direct.max_counters));

        let mut m = Machine::new(TraceMode::Count);
        m.tm.declare_sizes(0, total);
        let r = load(&mut m, ints("R", &["Id", "W"]), rows);
        let re = reorder_barely_prefix_heavy(&mut m, &r, "W", "Id", &RoundedDistribution::from_weights(&w))?;
        let (out, reordered) = expand_prefix_heavy(&mut m, &re, "W", total, false)?;
        let bound = counter_bound(total);
        o.check(bound == 14, format!("counter bound for m={total} is {bound}, expected 14"));
        o.check(
            reordered.max_counters <= 14,
            format!("reordered feed used {} counters, bound 14", reordered.max_counters),
        );
        tm.record("reordered expansion", n as u64, out.len as u64, m.tm.peak());
        o.note(format!("counters {} direct, {} reordered", direct.max_counters, reordered.max_counters));
        Ok(())
    })();
    o.absorb("counter bounds", r);
    o
}

// ---- criterion 5 ----

fn criterion_5(tm: &TmLog) -> Outcome {
    let mut o = Outcome::new();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for (label, n, m, peak) in &tm.runs {
        if n + m > TM_SCOPE {
            continue;
        }
        let b = tm_bound(*n, *m);
        checked += 1;
        worst = worst.max(*peak as f64 / b as f64);
        o.check(*peak <= b, format!("{label} n={n} m={m}: TM peak {peak} > {b}"));
    }
    o.check(checked > 0, "no runs recorded");
    o.note(format!("{checked} runs, worst peak/bound {worst:.3}"));
    o
}

// ---- criterion 6 ----

fn criterion_6(tm: &mut TmLog) -> Outcome {
    let mut o = Outcome::new();
    let mut prev: Option<u64> = None;
    let mut ratios = Vec::new();
    for k in 10..=16 {
        let n = 1usize << k;
        match bench_binary_join(n, k as u64) {
            Ok((acc, peak)) => {
                tm.record("bench binary_join", 2 * n as u64, n as u64, peak);
                if let Some(p) = prev {
                    let ratio = acc as f64 / p as f64;
                    o.check(
                        (GROWTH.0..=GROWTH.1).contains(&ratio),
                        format!("n=2^{k}: growth {ratio:.4} outside [{}, {}]", GROWTH.0, GROWTH.1),
                    );
                    ratios.push(format!("{ratio:.3}"));
                }
                prev = Some(acc);
            }
            Err(e) => o.check(false, format!("bench n=2^{k}: {e}")),
        }
    }
    o.note(format!("ratios {}", ratios.join(" ")));
    o
}

// ---- criterion 7 ----

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let tri = schemas(&[ints("R", &["A", "B"]), ints("S", &["B", "C"]), ints("T", &["C", "A"])]);
    let r = plan(&template(r#"{"relations":["R","S","T"]}"#), &tri);
    o.check(matches!(r, Err(Error::CyclicJoin(_))), format!("triangle: {r:?}"));

    let t = template(r#"{"relations":["R","S"],"group_by":["A","C"],"agg":{"fn":"COUNT","rel":"R"}}"#);
    let r = plan(&t, &two_way());
    o.check(matches!(r, Err(Error::UnsupportedGrouping(_))), format!("cross-relation grouping: {r:?}"));

    let r = (|| -> Result<()> {
        let c = ints("C", &["c", "z"]).with_key(&["c"])?;
        let b = ints("B", &["b", "c"]).with_key(&["b"])?.with_foreign_key(&["c"], "C")?;
        let a = ints("A", &["a", "b"]).with_foreign_key(&["b"], "B")?;
        let q = template(r#"{"relations":["A","B","C"]}"#);
        let p = plan(&q, &schemas(&[a.clone(), b.clone(), c.clone()]))?;
        o.check(p.fk_steps.len() == 2 && p.tree.len() == 1, format!("chain kept {} nodes", p.tree.len()));

        let run = |ra: &[[i64; 2]], rb: &[[i64; 2]], rc: &[[i64; 2]]| -> Result<usize> {
            let mut m = Machine::new(TraceMode::Count);
            let mut inputs = BTreeMap::new();
            for (s, rows) in [(&a, ra), (&b, rb), (&c, rc)] {
                let rows: Vec<Vec<Value>> = rows.iter().map(|r| r.iter().map(|&x| Value::Int(x)).collect()).collect();
                inputs.insert(s.name.clone(), load(&mut m, s.clone(), rows));
            }
            Ok(execute(&mut m, &p, &inputs, &Bindings::default())?.len)
        };
        let ra = [[1, 10], [2, 10], [3, 11], [4, 12], [5, 12]];
        let rb = [[10, 100], [11, 100], [12, 101]];
        let rc = [[100, 7], [101, 8]];
        let got = run(&ra, &rb, &rc)?;
        o.check(got == ra.len(), format!("collapsed chain gave {got} rows, expected {}", ra.len()));
        let dangling_first = run(&[[1, 99], [2, 10]], &rb, &rc);
        o.check(
            matches!(dangling_first, Err(Error::FkViolation(_))),
            format!("dangling A.b accepted: {dangling_first:?}"),
        );
        let dangling_second = run(&ra, &[[10, 100], [11, 999], [12, 101]], &rc);
        o.check(
            matches!(dangling_second, Err(Error::FkViolation(_))),
            format!("dangling B.c accepted: {dangling_second:?}"),
        );
        let db: Database = [("A", &a, &ra[..]), ("B", &b, &rb[..]), ("C", &c, &rc[..])]
            .iter()
            .map(|(n, s, rows)| {
                let rows = rows.iter().map(|r| Tuple::new(r.iter().map(|&x| Value::Int(x)).collect())).collect();
                (n.to_string(), Table::new((*s).clone(), rows).unwrap())
            })
            .collect();
        let op = Operation::query(q, &schemas_of(&db))?;
        let want = op.oracle(&db, &Bindings::default())?;
        let got = run_side(&op, &db, &Bindings::default(), TraceMode::Count)?;
        o.check(want.same_bag(&got.result), "collapsed chain differs from the oracle");
        Ok(())
    })();
    o.absorb("FK chain", r);
    o
}

fn main() {
    let names = [
        "golden tables",
        "obliviousness",
        "oracle equivalence",
        "counter bounds",
        "TM budget",
        "access growth",
        "planner",
    ];
    let mut tm = TmLog::default();
    let mut results: Vec<(Outcome, Duration)> = Vec::new();
    let timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed())
    };
    results.push(timed(&mut criterion_1));
    results.push(timed(&mut || criterion_2(&mut tm)));
    results.push(timed(&mut || criterion_3(&mut tm)));
    results.push(timed(&mut || criterion_4(&mut tm)));
    let six = timed(&mut || criterion_6(&mut tm));
    results.push(timed(&mut || criterion_5(&tm)));
    results.push(six);
    results.push(timed(&mut criterion_7));

    let mut failed = 0;
    for (i, ((o, el), name)) in results.iter().zip(names).enumerate() {
        let verdict = if o.failures.is_empty() { "PASS" } else { "FAIL" };
        let notes = if o.notes.is_empty() { String::new() } else { format!(" [{}]", o.notes.join("; ")) };
        println!("criterion {} {name}: {verdict} ({:.2}s){notes}", i + 1, el.as_secs_f64());
        for f in o.failures.iter().take(10) {
            println!("    {f}");
        }
        if o.failures.len() > 10 {
            println!("    ... {} more", o.failures.len() - 10);
        }
        if !o.failures.is_empty() {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", names.len());
        std::process::exit(1);
    }
}
