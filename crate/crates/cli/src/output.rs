//! Run directories: self-describing output files and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const OUTPUT_ROOT_ENV: &str = "CVSIM_OUTPUT_ROOT";
pub const MANIFEST: &str = "manifest.json";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the run directory, in the order written.
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub config: RunConfig,
}

pub struct RunDir {
    pub dir: PathBuf,
    pub command: String,
    pub config_hash: String,
    config: RunConfig,
    started: DateTime<Utc>,
    outputs: Vec<String>,
    metrics: BTreeMap<String, f64>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

impl RunDir {
    pub fn create(config: &RunConfig, command: &str, dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            config_hash: config.hash(command),
            config: config.clone(),
            started: Utc::now(),
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
        })
    }

    /// `config.output` if set, else `<root>/<command>`.
    pub fn default_location(config: &RunConfig, command: &str) -> PathBuf {
        match &config.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => output_root().join(p),
            None => output_root().join(command),
        }
    }

    /// Writes a CSV whose first line is `# config_hash=<hex>`.
    pub fn write_csv<F>(&mut self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> causal_variety::Result<()>,
    {
        let mut buf = format!("# config_hash={}\n", self.config_hash).into_bytes();
        body(&mut buf).map_err(|source| CliError::Stage { stage: "output", source })?;
        self.write_file(name, &buf)
    }

    /// Writes `{"config_hash": .., key: value}`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, key: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut doc = serde_json::Map::new();
        doc.insert("config_hash".into(), self.config_hash.clone().into());
        doc.insert(key.into(), serde_json::to_value(value).map_err(|e| CliError::Config(e.to_string()))?);
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write_file(name, text.as_bytes())
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        log::info!("wrote {}", path.display());
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn metrics(&self) -> &BTreeMap<String, f64> {
        &self.metrics
    }

    /// Records a nested run's files under this run's listing.
    pub fn adopt_outputs(&mut self, prefix: &str, nested: &RunManifest) {
        self.outputs.extend(nested.outputs.iter().map(|o| format!("{prefix}/{o}")));
        self.outputs.push(format!("{prefix}/{MANIFEST}"));
    }

    /// Writes the manifest and returns it. On failure the files written so
    /// far are still listed.
    pub fn finish(self, failure: Option<&CliError>) -> Result<RunManifest, CliError> {
        let stamp = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let manifest = RunManifest {
            command: self.command,
            config_hash: self.config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started: stamp(self.started),
            finished: stamp(Utc::now()),
            status: if failure.is_some() { "failed" } else { "ok" }.to_string(),
            failed_stage: failure.and_then(|e| e.stage_name()).map(str::to_string),
            error: failure.map(ToString::to_string),
            outputs: self.outputs,
            metrics: self.metrics,
            config: self.config,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_carry_the_config_hash() {
        let tmp = tempfile::tempdir().unwrap();
        let config = RunConfig::default();
        let mut run = RunDir::create(&config, "generate", tmp.path().join("run")).unwrap();
        run.write_csv("a.csv", |w| {
            w.extend_from_slice(b"x,y\n1,2\n");
            Ok(())
        })
        .unwrap();
        run.write_json("b.json", "value", &3.5).unwrap();
        run.metric("answer", 42.0);
        let hash = run.config_hash.clone();
        let manifest = run.finish(None).unwrap();

        let csv = std::fs::read_to_string(tmp.path().join("run/a.csv")).unwrap();
        assert_eq!(csv, format!("# config_hash={hash}\nx,y\n1,2\n"));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/b.json")).unwrap()).unwrap();
        assert_eq!(json["config_hash"], hash.as_str());
        assert_eq!(json["value"], 3.5);

        assert_eq!(manifest.outputs, ["a.csv", "b.json"]);
        assert_eq!(manifest.status, "ok");
        let on_disk: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap()).unwrap();
        assert_eq!(on_disk, manifest);
        let leftovers: Vec<_> = std::fs::read_dir(tmp.path().join("run"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn failed_runs_record_the_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::create(&RunConfig::default(), "pipeline", tmp.path().to_path_buf()).unwrap();
        let err: causal_variety::Result<()> = Err(causal_variety::Error::Numeric("blew up".into()));
        let err = crate::error::StageExt::stage(err, "evolve").unwrap_err();
        let manifest = run.finish(Some(&err)).unwrap();
        assert_eq!(manifest.status, "failed");
        assert_eq!(manifest.failed_stage.as_deref(), Some("evolve"));
        assert!(manifest.error.unwrap().contains("blew up"));
    }
}
