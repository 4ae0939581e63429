//! Reading and writing on-disk artifacts. Every file written here carries
//! provenance: a `#` comment line for CSV, a `provenance` key for JSON, and a
//! leading `{"provenance": ...}` record for JSONL.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use utlab::executor::GoldResult;
use utlab::report::Provenance;
use utlab::reward::VerdictMatrix;

use crate::Failure;

pub fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fails with a message naming the missing artifact and the stage that makes it.
pub fn require(path: &Path, producer: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Config(anyhow!(
            "missing upstream artifact {} (produced by `utlab {producer}`)",
            path.display()
        )))
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Config)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Config)
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(anyhow!("writing {}: {e}", path.display()))
}

/// Writes `value` as pretty JSON with a `provenance` key added at the top.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> Result<(), Failure> {
    let mut object = serde_json::Map::new();
    object.insert("provenance".into(), serde_json::to_value(prov).expect("provenance serializes"));
    match serde_json::to_value(value).expect("report serializes") {
        Value::Object(fields) => object.extend(fields),
        other => {
            object.insert("data".into(), other);
        }
    }
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &Value::Object(object)).map_err(|e| io_failure(path)(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_failure(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, prov: &Provenance, rows: &[T]) -> Result<(), Failure> {
    let mut w = create(path)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, &serde_json::json!({ "provenance": prov }))?;
        writeln!(w)?;
        for row in rows {
            serde_json::to_writer(&mut *w, row)?;
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_failure(path))
}

/// Writes a CSV whose body comes from `body`, after the provenance line.
pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let mut w = create(path)?;
    prov.write_comment(&mut w)
        .and_then(|_| body(&mut w))
        .and_then(|_| w.flush())
        .map_err(io_failure(path))
}

/// Reads a JSONL artifact, skipping the provenance record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Failure::Config)?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Config)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid JSON", path.display(), idx + 1))
            .map_err(Failure::Config)?;
        if value.get("provenance").is_some() {
            continue;
        }
        rows.push(
            serde_json::from_value(value)
                .with_context(|| format!("{}:{}: unexpected record", path.display(), idx + 1))
                .map_err(Failure::Config)?,
        );
    }
    Ok(rows)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Config)
}

/// Gold-suite results of one problem, in solution-pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub problem_id: String,
    pub results: Vec<GoldResult>,
}

impl GoldRecord {
    pub fn pass_rate(&self) -> Option<f64> {
        if self.results.is_empty() {
            return None;
        }
        Some(self.results.iter().filter(|r| r.passed).count() as f64 / self.results.len() as f64)
    }
}

pub fn read_matrices(path: &Path) -> Result<Vec<VerdictMatrix>, Failure> {
    require(path, "execute")?;
    read_jsonl(path)
}

pub fn read_gold(path: &Path) -> Result<BTreeMap<String, GoldRecord>, Failure> {
    require(path, "execute")?;
    Ok(read_jsonl::<GoldRecord>(path)?
        .into_iter()
        .map(|g| (g.problem_id.clone(), g))
        .collect())
}

/// Per-solution gold outcomes aligned with the matrix's solution order.
pub fn gold_for(matrix: &VerdictMatrix, gold: &GoldRecord) -> Result<Vec<bool>, Failure> {
    let by_id: BTreeMap<&str, bool> = gold.results.iter().map(|r| (r.solution_id.as_str(), r.passed)).collect();
    matrix
        .solution_ids()
        .iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| {
                Failure::Config(anyhow!(
                    "gold results for {} have no entry for solution {id}",
                    matrix.problem_id()
                ))
            })
        })
        .collect()
}

/// Standard artifact locations under the output directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}
