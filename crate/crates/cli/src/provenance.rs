//! Provenance blocks: everything needed to rerun a command, and nothing that
//! depends on where or how it ran.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::run::Run;

pub const TOOL: &str = "privdiv";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Name of the provenance file inside directory outputs.
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the canonical JSON of `run`.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each public input file read.
    pub inputs: BTreeMap<String, String>,
    pub run: Run,
}

impl Provenance {
    pub fn new(run: &Run) -> Result<Provenance> {
        let mut inputs = BTreeMap::new();
        for p in run.public_inputs() {
            inputs.insert(p.display().to_string(), file_sha256(&p)?);
        }
        Ok(Provenance {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: config_hash(run)?,
            seeds: run.seeds(),
            inputs,
            run: run.clone(),
        })
    }

    /// Checks that the block is self-consistent and its inputs are unchanged.
    pub fn verify(&self) -> Result<()> {
        if self.tool != TOOL {
            return Err(CliError::Config(format!("not a {TOOL} provenance block")));
        }
        if self.version != VERSION {
            log::warn!("replaying a {} run with {VERSION}", self.version);
        }
        if config_hash(&self.run)? != self.config_hash {
            return Err(CliError::Config("config hash does not match the run".into()));
        }
        for (path, want) in &self.inputs {
            let got = file_sha256(Path::new(path))?;
            if &got != want {
                return Err(CliError::Data(format!("{path} changed since the original run")));
            }
        }
        Ok(())
    }

    /// Reads a block from a directory output, a JSON output carrying a
    /// `provenance` field, or a bare block.
    pub fn load(path: &Path) -> Result<Provenance> {
        let file: PathBuf = if path.is_dir() {
            path.join(PROVENANCE_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file)
            .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
        let mut v: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(inner) = v.get_mut("provenance") {
            v = inner.take();
        }
        serde_json::from_value(v)
            .map_err(|e| CliError::Config(format!("{}: bad provenance block: {e}", file.display())))
    }
}

pub fn config_hash(run: &Run) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(run)?)))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
