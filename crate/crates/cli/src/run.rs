//! Run directories, manifests and error-to-exit-code mapping.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use spikeslab::config::{ExperimentConfig, Mode};
use spikeslab::{io, Error, Result};

/// Exit code 3 for numerical failures, 2 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub config_sha256: String,
}

/// Reads and validates the configuration, applying a `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<Loaded> {
    let text = fs::read_to_string(path)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(Loaded {
        config,
        config_sha256: format!("{:x}", Sha256::digest(text.as_bytes())),
    })
}

pub fn require_mode(cfg: &ExperimentConfig, allowed: &[Mode], command: &str) -> Result<()> {
    if allowed.contains(&cfg.mode) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{command} does not accept mode {:?}", cfg.mode)))
    }
}

/// Seed for the fitting randomness of replication `rep`, disjoint from the
/// data streams `rng::stream(seed, rep)`.
pub fn fit_seed(seed: u64, rep: usize) -> u64 {
    (seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(rep as u64)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: &'a str,
    config: &'a ExperimentConfig,
    inputs: Vec<String>,
    outputs: &'a [String],
    spikeslab_version: &'a str,
    cli_version: &'a str,
}

/// Output directory of one command; every file goes through [`RunDir::path`]
/// so the manifest can list it.
pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(out: Option<&Path>, command: &'static str, seed: u64) -> Result<Self> {
        let root = match out {
            Some(p) => p.to_path_buf(),
            None => PathBuf::from("runs").join(format!("{command}-seed{seed}")),
        };
        fs::create_dir_all(&root)?;
        Ok(RunDir {
            root,
            command,
            outputs: Vec::new(),
        })
    }

    /// Path of output `name` (relative, may include a subdirectory).
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(name.to_string());
        Ok(p)
    }

    pub fn finish(mut self, loaded: &Loaded, inputs: &[Option<&Path>]) -> Result<PathBuf> {
        let cfg_path = self.path("config.json")?;
        io::write_json(&loaded.config, &cfg_path)?;
        self.outputs.push("manifest.json".into());
        let manifest = Manifest {
            command: self.command,
            seed: loaded.config.seed,
            config_sha256: &loaded.config_sha256,
            config: &loaded.config,
            inputs: inputs.iter().flatten().map(|p| p.display().to_string()).collect(),
            outputs: &self.outputs,
            spikeslab_version: spikeslab::VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
        };
        io::write_json(&manifest, &self.root.join("manifest.json"))?;
        Ok(self.root)
    }
}

/// `rep000/name` when there are several replications, else `name`.
pub fn rep_name(reps: usize, rep: usize, name: &str) -> String {
    if reps > 1 {
        format!("rep{rep:03}/{name}")
    } else {
        name.to_string()
    }
}
