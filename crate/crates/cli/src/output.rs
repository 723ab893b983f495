//! Run manifests and all-or-nothing output writing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

/// Wall-clock durations of named stages, in milliseconds.
#[derive(Default)]
pub struct Timings {
    stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, ms: f64) {
        self.stages.push((stage.to_string(), ms.max(0.0)));
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (name, ms) in &self.stages {
            m.insert(name.clone(), json!(ms));
        }
        Value::Object(m)
    }
}

/// Everything a run records about itself. Timings live in their own section
/// so the rest can be compared byte for byte across runs.
pub struct Manifest {
    command: &'static str,
    seed: Option<u64>,
    config: Value,
    inputs: Map<String, Value>,
    outputs: Map<String, Value>,
    results: Value,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            seed: None,
            config: Value::Null,
            inputs: Map::new(),
            outputs: Map::new(),
            results: Value::Null,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(mut self, config: Value) -> Self {
        self.config = config;
        self
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.into(), json!(path.display().to_string()));
        self
    }

    pub fn results(mut self, results: Value) -> Self {
        self.results = results;
        self
    }

    pub fn to_json(&self, outputs: &OutputSet, timings: &Timings) -> String {
        let mut out_paths = self.outputs.clone();
        for (name, path, _) in &outputs.files {
            out_paths.insert(name.clone(), json!(path.display().to_string()));
        }
        let doc = json!({
            "command": self.command,
            "versions": {
                "probslam": probslam_version(),
                "probslam-cli": env!("CARGO_PKG_VERSION"),
            },
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": out_paths,
            "results": self.results,
            "timing_ms": timings.to_json(),
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        text
    }
}

fn probslam_version() -> &'static str {
    probslam::VERSION
}

/// Files produced by a run, held in memory until the run succeeds.
#[derive(Default)]
pub struct OutputSet {
    files: Vec<(String, PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: &str, path: PathBuf, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), path, contents.into()));
    }

    /// Writes the manifest and every file. Each file goes to a temporary
    /// sibling first; nothing is renamed into place until all temporaries are
    /// written, and temporaries are removed on failure.
    pub fn commit(mut self, manifest: &Manifest, manifest_path: PathBuf, timings: &Timings) -> Result<()> {
        let text = manifest.to_json(&self, timings);
        self.files.push(("manifest".into(), manifest_path, text.into_bytes()));

        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let result = (|| -> Result<()> {
            for (_, path, contents) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                }
                let tmp = temp_path(path);
                fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
                staged.push((tmp, path.clone()));
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
        for (tmp, path) in &staged {
            fs::rename(tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
        }
        Ok(())
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sidecar_manifest(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{name}.manifest.json"))
}
