//! Output directory layout, manifests and digest checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use orderlab::codec::{sha256_hex, write_atomic, Tagged};
use orderlab::data::{load_corpus, Corpus};
use orderlab::store::{load_store, UpdateTermStore};
use orderlab::trainer::{load_trajectory, ReferenceTrajectory};
use serde::Serialize;

use crate::error::CliError;

pub const CORPUS_FILE: &str = "corpus.olc";
pub const TRAJECTORY_FILE: &str = "trajectory.olt";
pub const STORE_FILE: &str = "store.ols";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub version: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
    pub finished_unix: u64,
}

/// Tracks one command's inputs and outputs inside an output directory.
pub struct Run {
    pub dir: PathBuf,
    pub digest: String,
    pub force: bool,
    command: String,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    pub fn new(dir: PathBuf, command: &str, digest: String, force: bool) -> Result<Self, CliError> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            digest,
            force,
            command: command.to_string(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn read_input(&mut self, name: &str, producer: &str) -> Result<Vec<u8>, CliError> {
        let path = self.path(name);
        if !path.exists() {
            return Err(CliError::Dependency { artifact: name.to_string(), command: producer.to_string() });
        }
        let bytes = fs::read(&path)?;
        self.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn check_digest<T>(&self, name: &str, tagged: Tagged<T>) -> Result<T, CliError> {
        if tagged.config_digest != self.digest {
            if !self.force {
                return Err(CliError::DigestMismatch {
                    artifact: name.to_string(),
                    expected: self.digest.clone(),
                    found: tagged.config_digest,
                });
            }
            log::warn!("{name} comes from config {}, continuing because of --force", tagged.config_digest);
        }
        Ok(tagged.value)
    }

    pub fn corpus(&mut self) -> Result<Corpus, CliError> {
        self.read_input(CORPUS_FILE, "train-ref")?;
        let tagged = load_corpus(&self.path(CORPUS_FILE))?;
        self.check_digest(CORPUS_FILE, tagged)
    }

    pub fn trajectory(&mut self) -> Result<ReferenceTrajectory, CliError> {
        self.read_input(TRAJECTORY_FILE, "train-ref")?;
        let tagged = load_trajectory(&self.path(TRAJECTORY_FILE))?;
        self.check_digest(TRAJECTORY_FILE, tagged)
    }

    pub fn store(&mut self) -> Result<UpdateTermStore, CliError> {
        self.read_input(STORE_FILE, "build-store")?;
        let tagged = load_store(&self.path(STORE_FILE))?;
        self.check_digest(STORE_FILE, tagged)
    }

    /// Record an artifact already written by a core save function.
    pub fn written(&mut self, name: &str) -> Result<(), CliError> {
        let bytes = fs::read(self.path(name))?;
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.path(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, values: &[T]) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        for v in values {
            serde_json::to_writer(&mut bytes, v).expect("record serializes");
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            command: self.command.clone(),
            config_digest: self.digest.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let path = self.dir.join(format!("manifest-{}.json", self.command));
        write_atomic(&path, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
        Ok(path)
    }
}

pub fn resolve_out_dir(flag: Option<&Path>, env: Option<String>, config: Option<&Path>, config_path: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    match config {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => base.join(p),
        None => PathBuf::from("orderlab-out"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dir_precedence() {
        let cfg = Path::new("/etc/run.toml");
        assert_eq!(resolve_out_dir(Some(Path::new("a")), Some("b".into()), Some(Path::new("c")), cfg), PathBuf::from("a"));
        assert_eq!(resolve_out_dir(None, Some("b".into()), Some(Path::new("c")), cfg), PathBuf::from("b"));
        assert_eq!(resolve_out_dir(None, None, Some(Path::new("c")), cfg), PathBuf::from("/etc/c"));
        assert_eq!(resolve_out_dir(None, Some(String::new()), None, cfg), PathBuf::from("orderlab-out"));
    }

    #[test]
    fn missing_input_names_the_producing_command() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::new(dir.path().to_path_buf(), "estimate", "d".into(), false).unwrap();
        match run.store() {
            Err(CliError::Dependency { command, .. }) => assert_eq!(command, "build-store"),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
