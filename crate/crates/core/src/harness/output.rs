//! CSV and manifest writing. Every CSV starts with a `schema` column whose
//! value names the table and its version, so files stay self-describing
//! when they travel alone.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::allocator::Allocation;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

pub const SCHEMA_DQN_LOG: &str = "dqn_log/1";
pub const SCHEMA_DDPG_STEPS: &str = "ddpg_steps/1";
pub const SCHEMA_DDPG_EPISODES: &str = "ddpg_episodes/1";
pub const SCHEMA_ALLOCATION: &str = "allocation/1";
pub const SCHEMA_METHODS: &str = "methods/1";
pub const SCHEMA_SWEEP: &str = "sweep/1";
pub const SCHEMA_SWEEP_SUMMARY: &str = "sweep_summary/1";
pub const SCHEMA_COMPARISON: &str = "comparison/1";
pub const SCHEMA_COMPARISON_SUMMARY: &str = "comparison_summary/1";
pub const SCHEMA_ORACLE: &str = "oracle/1";

/// Rows of display-formatted cells under a header; the schema column is
/// prepended to both.
pub struct Table {
    pub schema: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, header: &[&'static str]) -> Self {
        Table {
            schema,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("schema").chain(self.header.iter().copied()))?;
        for r in &self.rows {
            w.write_record(std::iter::once(self.schema).chain(r.iter().map(String::as_str)))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Shortest decimal that reads back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-user rows of an allocation.
pub fn allocation_table(s: &Scenario, a: &Allocation) -> Table {
    let mut t = Table::new(
        SCHEMA_ALLOCATION,
        &["user", "x", "y", "power", "blocks", "rate_bps", "served"],
    );
    for (i, u) in s.users.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            num(u.x),
            num(u.y),
            num(a.powers[i]),
            a.blocks[i].to_string(),
            num(a.rates_bps[i]),
            a.served[i].to_string(),
        ]);
    }
    t
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `manifest.toml` listing the command, seeds, config hash, crate
/// version and the hash of every file written before it.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    seeds: &[u64],
    config_hash: &str,
    files: &[&str],
) -> Result<()> {
    let mut m = toml::Table::new();
    m.insert("command".into(), command.into());
    m.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("config_sha256".into(), config_hash.into());
    m.insert(
        "seeds".into(),
        toml::Value::Array(seeds.iter().map(|&s| toml::Value::Integer(s as i64)).collect()),
    );
    let mut hashes = toml::Table::new();
    for f in files {
        hashes.insert((*f).into(), sha256_hex(&fs::read(dir.join(f))?).into());
    }
    m.insert("files".into(), toml::Value::Table(hashes));
    let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}
