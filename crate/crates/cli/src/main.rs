use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use oblivq::cost;
use oblivq::harness::{
    bench_binary_join, gen_matched_pair, oracle_eval, selection_pair, sixteen_row_pair, skewed_weights_pair,
    GenSpec, InstancePair, Operation, ResultSet, VerdictReport,
};
use oblivq::memsim::{Machine, TraceMode, TrustedMemory, DEFAULT_TM_CONSTANT};
use oblivq::planner::{execute, plan, Bindings, Plan, QueryTemplate};
use oblivq::relmodel::Value;
use oblivq::storage::{self, Database, SchemaFile};
use oblivq::Error;

const EXIT_VERIFY_FAIL: u8 = 2;
const EXIT_PLAN_REJECTED: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "oblivq", version, about = "Oblivious query processing over a simulated TM/UM machine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert `<relation>.csv` files into a fixed-width database.
    Ingest {
        #[arg(long)]
        csv_dir: PathBuf,
        /// JSON file `{"relations": [schema, ...]}`.
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        db: PathBuf,
    },
    /// Print the plan for a query template. Reads only the manifest.
    Plan {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        query: PathBuf,
    },
    /// Run a query and print its result as CSV.
    Run {
        #[command(flatten)]
        q: QueryArgs,
        /// Result CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the full access trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write run statistics as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run a query on the engine and the brute-force oracle and compare.
    OracleCheck {
        #[command(flatten)]
        q: QueryArgs,
    },
    /// Check that matched instance pairs produce identical traces.
    Verify {
        /// A bundled pair: sixteen-row, skewed-weights, selection.
        #[arg(long, conflicts_with_all = ["query", "db"])]
        bundled: Option<String>,
        /// Query template; pairs are generated over the schemas of `--db`.
        #[arg(long, requires = "db")]
        query: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Right-hand database; when given, `--db` is the left side and the
        /// pair is checked as is.
        #[arg(long, requires = "query")]
        other_db: Option<PathBuf>,
        #[arg(long = "bind")]
        bind: Vec<String>,
        #[arg(long = "other-bind")]
        other_bind: Vec<String>,
        /// Number of generated pairs.
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        /// Rows per relation in generated pairs.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append one verdict JSON object per line here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Measure UM accesses of the binary join for n = 2^from ..= 2^to.
    Bench {
        #[arg(long, default_value_t = 10)]
        from: u32,
        #[arg(long, default_value_t = 16)]
        to: u32,
        /// Largest accepted growth factor per doubling.
        #[arg(long, default_value_t = 2.6)]
        max_ratio: f64,
    },
}

#[derive(clap::Args)]
struct QueryArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    query: PathBuf,
    /// Placeholder binding `?name=value`; repeatable.
    #[arg(long = "bind")]
    bind: Vec<String>,
    /// TM budget constant c in c·⌈log2(n+m+2)⌉.
    #[arg(long, default_value_t = DEFAULT_TM_CONSTANT)]
    tm_c: usize,
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |err| Failure { code, err }
}

fn data_err(e: Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        err: e.into(),
    }
}

fn plan_err(e: Error) -> Failure {
    Failure {
        code: EXIT_PLAN_REJECTED,
        err: e.into(),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Ingest { csv_dir, schema, db } => ingest(&csv_dir, &schema, &db),
        Cmd::Plan { db, query } => plan_cmd(&db, &query),
        Cmd::Run { q, out, trace, stats } => run(&q, out.as_deref(), trace.as_deref(), stats.as_deref()),
        Cmd::OracleCheck { q } => oracle_check(&q),
        Cmd::Verify {
            bundled,
            query,
            db,
            other_db,
            bind,
            other_bind,
            pairs,
            size,
            seed,
            report,
        } => verify(VerifyArgs {
            bundled,
            query,
            db,
            other_db,
            bind,
            other_bind,
            pairs,
            size,
            seed,
            report,
        }),
        Cmd::Bench { from, to, max_ratio } => bench(from, to, max_ratio),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn ingest(csv_dir: &Path, schema: &Path, db: &Path) -> CmdResult {
    let text = fs::read_to_string(schema)
        .with_context(|| format!("reading {}", schema.display()))
        .map_err(fail(EXIT_DATA))?;
    let schemas: SchemaFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", schema.display()))
        .map_err(fail(EXIT_DATA))?;
    let manifest = storage::ingest(csv_dir, &schemas, db).map_err(data_err)?;
    for e in &manifest.relations {
        println!("{}\t{} rows\t{}", e.schema.name, e.rows, e.file);
    }
    Ok(0)
}

fn load_template(path: &Path) -> Result<QueryTemplate, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(fail(EXIT_PLAN_REJECTED))?;
    QueryTemplate::from_json(&text).map_err(plan_err)
}

fn plan_for(db: &Path, query: &Path) -> Result<(QueryTemplate, Plan, storage::Manifest), Failure> {
    let manifest = storage::read_manifest(db).map_err(data_err)?;
    let t = load_template(query)?;
    let p = plan(&t, &manifest.schemas()).map_err(plan_err)?;
    Ok((t, p, manifest))
}

fn plan_cmd(db: &Path, query: &Path) -> CmdResult {
    let (_, p, _) = plan_for(db, query)?;
    let text = serde_json::to_string_pretty(&p).map_err(|e| fail(1)(e.into()))?;
    // a closed pipe (`| head`) is not an error here
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(0)
}

fn bindings_for(p: &Plan, items: &[String]) -> Result<Bindings, Failure> {
    let b = Bindings::parse(items).map_err(plan_err)?;
    let missing: Vec<&String> = p.params.keys().filter(|k| !b.0.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(plan_err(Error::InvalidQuery(format!("unbound placeholders {missing:?}"))));
    }
    Ok(b)
}

fn write_csv(res: &ResultSet, w: impl Write) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(&res.columns)?;
    for r in &res.rows {
        wtr.write_record(r.iter().map(Value::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

struct Executed {
    result: ResultSet,
    machine: Machine,
    predicted: Vec<(String, u64)>,
}

fn execute_query(q: &QueryArgs, mode: TraceMode) -> Result<(QueryTemplate, Database, Bindings, Executed), Failure> {
    let (t, p, manifest) = plan_for(&q.db, &q.query)?;
    let b = bindings_for(&p, &q.bind)?;
    let db = storage::read_database(&q.db, Some(&t.relations)).map_err(data_err)?;
    let mut m = Machine::with_tm(mode, TrustedMemory::new(q.tm_c));
    let mut inputs = BTreeMap::new();
    let mut predicted = Vec::new();
    for name in &t.relations {
        let table = &db[name];
        inputs.insert(name.clone(), m.load(table.schema.clone(), &table.rows).map_err(data_err)?);
        predicted.push((format!("load {name}"), table.rows.len() as u64));
    }
    let out = execute(&mut m, &p, &inputs, &b).map_err(|e| match e {
        Error::FkViolation(_) | Error::DomainMismatch { .. } | Error::Overflow(_) => data_err(e),
        e => fail(1)(anyhow!(e).context("executing the plan")),
    })?;
    predicted.extend(cost::plan_stages(&p, &manifest.sizes(), out.len as u64).map_err(plan_err)?);
    let rows = m.unload(&out).map_err(|e| fail(1)(e.into()))?;
    predicted.push(("unload result".into(), out.len as u64));
    let result = ResultSet::from_tuples(out.schema.names(), &rows);
    Ok((
        t,
        db,
        b,
        Executed {
            result,
            machine: m,
            predicted,
        },
    ))
}

fn run(q: &QueryArgs, out: Option<&Path>, trace: Option<&Path>, stats: Option<&Path>) -> CmdResult {
    let mode = if trace.is_some() { TraceMode::Full } else { TraceMode::Digest };
    let (_, _, _, ex) = execute_query(q, mode)?;
    let m = &ex.machine;
    match out {
        Some(p) => {
            let f = fs::File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(fail(1))?;
            write_csv(&ex.result, f).map_err(fail(1))?;
        }
        None => write_csv(&ex.result, std::io::stdout().lock()).map_err(fail(1))?,
    }
    if let Some(p) = trace {
        let f = fs::File::create(p)
            .with_context(|| format!("creating {}", p.display()))
            .map_err(fail(1))?;
        m.um.export_jsonl(std::io::BufWriter::new(f)).map_err(|e| fail(1)(e.into()))?;
    }

    let predicted: u64 = ex.predicted.iter().map(|(_, c)| c).sum();
    let measured = m.um.trace_len();
    eprintln!("UM accesses by stage ({}):", cost::SORT_FORMULA);
    for (stage, c) in &ex.predicted {
        eprintln!("  {stage:<40} {c}");
    }
    eprintln!("  {:<40} {predicted}", "predicted total");
    eprintln!("  {:<40} {measured}", "measured total");
    eprintln!(
        "TM peak {} of {} words, counter high-water {}, {} arenas",
        m.tm.peak(),
        m.tm.budget(),
        m.tm.counter_high_water(),
        m.um.layout().len()
    );
    if let Some(p) = stats {
        let s = serde_json::json!({
            "um_accesses": measured,
            "predicted_accesses": predicted,
            "stages": ex.predicted,
            "tm_peak_words": m.tm.peak(),
            "tm_budget_words": m.tm.budget(),
            "counter_high_water": m.tm.counter_high_water(),
            "arenas": m.um.layout(),
            "trace_sha256": m.um.digest().map(hex_of),
        });
        fs::write(p, serde_json::to_string_pretty(&s).unwrap() + "\n")
            .with_context(|| format!("writing {}", p.display()))
            .map_err(fail(1))?;
    }
    if predicted != measured {
        return Err(fail(1)(anyhow!(
            "measured {measured} UM accesses, the size formula predicts {predicted}"
        )));
    }
    Ok(0)
}

fn hex_of(d: [u8; 32]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn oracle_check(q: &QueryArgs) -> CmdResult {
    let (t, db, b, ex) = execute_query(q, TraceMode::Count)?;
    let want = oracle_eval(&db, &t, &b).map_err(data_err)?;
    if want.same_bag(&ex.result) {
        println!("match: {} rows", want.len());
        Ok(0)
    } else {
        println!("MISMATCH: engine {} rows, oracle {} rows", ex.result.len(), want.len());
        Ok(EXIT_VERIFY_FAIL)
    }
}

struct VerifyArgs {
    bundled: Option<String>,
    query: Option<PathBuf>,
    db: Option<PathBuf>,
    other_db: Option<PathBuf>,
    bind: Vec<String>,
    other_bind: Vec<String>,
    pairs: usize,
    size: usize,
    seed: u64,
    report: Option<PathBuf>,
}

fn verify(a: VerifyArgs) -> CmdResult {
    let mut jobs: Vec<(Operation, InstancePair)> = Vec::new();
    if let Some(name) = &a.bundled {
        jobs.push(match name.as_str() {
            "sixteen-row" => sixteen_row_pair(),
            "skewed-weights" => skewed_weights_pair(8),
            "selection" => selection_pair().map_err(|e| fail(1)(e.into()))?,
            other => {
                return Err(fail(1)(anyhow!(
                    "unknown bundled pair `{other}` (sixteen-row, skewed-weights, selection)"
                )))
            }
        });
    } else {
        let (query, db) = match (&a.query, &a.db) {
            (Some(q), Some(d)) => (q, d),
            _ => return Err(fail(1)(anyhow!("give --bundled, or --query with --db"))),
        };
        let (t, _, manifest) = plan_for(db, query)?;
        let schemas = manifest.schemas();
        let op = Operation::query(t.clone(), &schemas).map_err(plan_err)?;
        if let Some(other) = &a.other_db {
            let left = storage::read_database(db, Some(&t.relations)).map_err(data_err)?;
            let right = storage::read_database(other, Some(&t.relations)).map_err(data_err)?;
            let pair = InstancePair {
                id: "given".into(),
                seed: 0,
                left,
                right,
                left_bindings: Bindings::parse(&a.bind).map_err(plan_err)?,
                right_bindings: Bindings::parse(&a.other_bind).map_err(plan_err)?,
            };
            jobs.push((op, pair));
        } else {
            let spec = GenSpec::uniform(&op, a.size, a.size.max(2) as i64);
            for i in 0..a.pairs as u64 {
                match gen_matched_pair(&op, &schemas, &spec, a.seed + i) {
                    Ok(p) => jobs.push((op.clone(), p)),
                    Err(e) => eprintln!("skipped seed {}: {e}", a.seed + i),
                }
            }
        }
    }
    let reports: Vec<Result<VerdictReport, Error>> = jobs
        .par_iter()
        .map(|(op, pair)| oblivq::harness::verify_oblivious(pair, op))
        .collect();
    let mut sink: Option<fs::File> = match &a.report {
        Some(p) => Some(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))
                .map_err(fail(1))?,
        ),
        None => None,
    };
    let mut failed = 0;
    for r in reports {
        let r = r.map_err(data_err)?;
        let line = serde_json::to_string(&r).unwrap();
        println!("{line}");
        if let Some(f) = sink.as_mut() {
            writeln!(f, "{line}").map_err(|e| fail(1)(e.into()))?;
        }
        failed += usize::from(!r.passed());
    }
    eprintln!("{} pairs, {failed} failed", jobs.len());
    Ok(if failed == 0 { 0 } else { EXIT_VERIFY_FAIL })
}

fn bench(from: u32, to: u32, max_ratio: f64) -> CmdResult {
    if from > to || to > 24 {
        return Err(fail(1)(anyhow!("need from <= to <= 24")));
    }
    let runs: Vec<(usize, Result<(u64, usize), Error>)> = (from..=to)
        .into_par_iter()
        .map(|k| (1usize << k, bench_binary_join(1 << k, u64::from(k))))
        .collect();
    println!("n\tum_accesses\ttm_peak\tratio");
    let mut prev: Option<u64> = None;
    let mut ok = true;
    for (n, r) in runs {
        let (c, peak) = r.map_err(|e| fail(1)(e.into()))?;
        let ratio = prev.map(|p| c as f64 / p as f64);
        if ratio.is_some_and(|x| x > max_ratio) {
            ok = false;
        }
        println!(
            "{n}\t{c}\t{peak}\t{}",
            ratio.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
        );
        prev = Some(c);
    }
    Ok(if ok { 0 } else { EXIT_VERIFY_FAIL })
}
