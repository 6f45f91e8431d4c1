//! Run manifests: resolved configuration plus artifact hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{write_json, CliResult, Failure};

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Artifact {
    sha256: String,
    /// Columns covered by the hash when not the whole file.
    #[serde(skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<String>>,
    /// Contents vary between runs (timings); no hash recorded.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    volatile: bool,
}

#[derive(Debug)]
pub struct Manifest {
    command: &'static str,
    dir: PathBuf,
    artifacts: BTreeMap<String, Artifact>,
}

impl Manifest {
    pub fn new(command: &'static str, dir: &Path) -> Self {
        Manifest {
            command,
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str) -> CliResult<()> {
        let bytes = fs::read(self.dir.join(name))?;
        self.insert(name, hex(&Sha256::digest(&bytes)), None);
        Ok(())
    }

    /// Hashes only the named CSV columns, line by line.
    pub fn add_columns(&mut self, name: &str, columns: &[&str]) -> CliResult<()> {
        let text = fs::read_to_string(self.dir.join(name))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| Failure::usage(format!("{name} has no column `{c}`")))
            })
            .collect::<CliResult<_>>()?;
        let mut hasher = Sha256::new();
        for line in std::iter::once(header.join(",").as_str()).chain(lines) {
            let cells: Vec<&str> = line.split(',').collect();
            let picked: Vec<&str> = idx.iter().map(|&i| cells.get(i).copied().unwrap_or("")).collect();
            hasher.update(picked.join(",").as_bytes());
            hasher.update(b"\n");
        }
        let cols = columns.iter().map(|c| c.to_string()).collect();
        self.insert(name, hex(&hasher.finalize()), Some(cols));
        Ok(())
    }

    pub fn add_volatile(&mut self, name: &str) {
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                sha256: String::new(),
                columns: None,
                volatile: true,
            },
        );
    }

    fn insert(&mut self, name: &str, sha256: String, columns: Option<Vec<String>>) {
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                sha256,
                columns,
                volatile: false,
            },
        );
    }

    pub fn finish<C: Serialize>(self, config: &C, seed: u64) -> CliResult<()> {
        let manifest = serde_json::json!({
            "tool": "tvpgamp",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": seed,
            "config": config,
            "artifacts": self.artifacts,
        });
        write_json(&self.dir.join("manifest.json"), &manifest)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
