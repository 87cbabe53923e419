//! On-disk databases: one fixed-width `.rel` file per relation plus a
//! `manifest.json` holding the schemas and row counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relmodel::{Domain, Schema, Tuple, Value};

/// A relation held in ordinary memory, outside the simulated machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Tuple>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Tuple>) -> Result<Table> {
        for t in &rows {
            schema.check_tuple(t)?;
        }
        Ok(Table { schema, rows })
    }
}

pub type Database = BTreeMap<String, Table>;

pub fn schemas_of(db: &Database) -> BTreeMap<String, Schema> {
    db.iter().map(|(k, t)| (k.clone(), t.schema.clone())).collect()
}

/// The schema file given to `ingest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub relations: Vec<Schema>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema: Schema,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub relations: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Parses CSV text into rows of `schema`. Header names must be the schema's
/// attributes in any order; an empty field is Null. Rows and columns in
/// errors are 1-based, counting the header as row 1.
pub fn parse_csv(schema: &Schema, text: &str) -> Result<Vec<Tuple>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_err(1, 0, e))?.clone();
    let mut cols = Vec::with_capacity(schema.arity());
    for a in &schema.attrs {
        let c = header
            .iter()
            .position(|h| h.trim() == a.name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                column: 0,
                message: format!("missing column `{}`", a.name),
            })?;
        cols.push(c);
    }
    if let Some((i, extra)) = header.iter().enumerate().find(|(_, h)| !schema.has(h.trim())) {
        return Err(Error::Parse {
            row: 1,
            column: i + 1,
            message: format!("column `{extra}` is not in schema `{}`", schema.name),
        });
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| csv_err(row, 0, e))?;
        let mut values = Vec::with_capacity(schema.arity());
        for (a, &c) in schema.attrs.iter().zip(&cols) {
            let field = rec.get(c).ok_or_else(|| Error::Parse {
                row,
                column: c + 1,
                message: "missing field".into(),
            })?;
            values.push(parse_field(field, a.domain).map_err(|message| Error::Parse {
                row,
                column: c + 1,
                message,
            })?);
        }
        rows.push(Tuple::new(values));
    }
    Ok(rows)
}

fn csv_err(row: usize, column: usize, e: csv::Error) -> Error {
    Error::Parse {
        row,
        column,
        message: e.to_string(),
    }
}

fn parse_field(field: &str, d: Domain) -> std::result::Result<Value, String> {
    if field.is_empty() {
        return Ok(Value::Null);
    }
    match d {
        Domain::Int => field
            .trim()
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| format!("`{field}` is not a 64-bit integer")),
        Domain::Str { width } => {
            if field.len() > width {
                Err(format!("`{field}` is {} bytes, wider than {width}", field.len()))
            } else {
                Ok(Value::str(field))
            }
        }
    }
}

/// Reads `<name>.csv` for every relation of `schemas` from `csv_dir` and
/// writes the database to `out_dir`.
pub fn ingest(csv_dir: &Path, schemas: &SchemaFile, out_dir: &Path) -> Result<Manifest> {
    let mut db = Database::new();
    for s in &schemas.relations {
        s.validate()?;
        let path = csv_dir.join(format!("{}.csv", s.name));
        let text = fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let rows = parse_csv(s, &text)?;
        if db.insert(s.name.clone(), Table::new(s.clone(), rows)?).is_some() {
            return Err(Error::InvalidSchema(format!("relation `{}` declared twice", s.name)));
        }
    }
    write_database(&db, out_dir)
}

/// Writes each table as fixed-width records in name order, then the manifest.
pub fn write_database(db: &Database, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(db.len());
    for (name, t) in db {
        let file = format!("{name}.rel");
        let mut bytes = Vec::with_capacity(t.rows.len() * t.schema.slot_width());
        for r in &t.rows {
            t.schema.encode(r, &mut bytes)?;
        }
        fs::write(dir.join(&file), &bytes)?;
        entries.push(ManifestEntry {
            schema: t.schema.clone(),
            file,
            rows: t.rows.len(),
        });
    }
    let manifest = Manifest { relations: entries };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads only the manifest; relation files are not opened.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

impl Manifest {
    pub fn schemas(&self) -> BTreeMap<String, Schema> {
        self.relations.iter().map(|e| (e.schema.name.clone(), e.schema.clone())).collect()
    }

    pub fn sizes(&self) -> BTreeMap<String, u64> {
        self.relations.iter().map(|e| (e.schema.name.clone(), e.rows as u64)).collect()
    }

    pub fn path_of(&self, dir: &Path, rel: &str) -> Option<PathBuf> {
        self.relations.iter().find(|e| e.schema.name == rel).map(|e| dir.join(&e.file))
    }
}

/// Loads the named relations (all when `only` is `None`).
pub fn read_database(dir: &Path, only: Option<&[String]>) -> Result<Database> {
    let manifest = read_manifest(dir)?;
    let mut db = Database::new();
    for e in &manifest.relations {
        if only.is_some_and(|o| !o.contains(&e.schema.name)) {
            continue;
        }
        let bytes = fs::read(dir.join(&e.file))?;
        let w = e.schema.slot_width();
        if bytes.len() != w * e.rows {
            return Err(Error::Io(format!(
                "`{}` holds {} bytes, expected {} rows of {w}",
                e.file,
                bytes.len(),
                e.rows
            )));
        }
        let rows = bytes.chunks(w.max(1)).take(e.rows).map(|c| e.schema.decode(c)).collect::<Result<_>>()?;
        db.insert(e.schema.name.clone(), Table::new(e.schema.clone(), rows)?);
    }
    Ok(db)
}
