use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written to the output directory before any long computation starts, then
/// finalized in place once the command completes. The config snapshot plus
/// seeds are enough to reproduce the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub engine_version: String,
    pub config_path: Option<PathBuf>,
    pub config_snapshot: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub completed_at: Option<String>,
}

impl RunManifest {
    pub fn new<T: Serialize>(
        command: &str,
        config_path: Option<&Path>,
        config: &T,
        seed: u64,
    ) -> Result<RunManifest> {
        let snapshot = serde_json::to_value(config)
            .map_err(|e| Error::Validation(format!("snapshot config: {e}")))?;
        Ok(RunManifest {
            command: command.to_string(),
            engine_version: ENGINE_VERSION.to_string(),
            config_path: config_path.map(|p| p.to_path_buf()),
            config_snapshot: snapshot,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
            completed_at: None,
        })
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn manifest_path(&self, out_dir: &Path) -> PathBuf {
        out_dir.join(format!("{}_manifest.json", self.command))
    }

    /// First write: declares intent (inputs, planned outputs) up front.
    pub fn start(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = self.manifest_path(out_dir);
        self.write_to(&path)?;
        Ok(path)
    }

    /// Rewrite with a completion timestamp after the command succeeds.
    pub fn finalize(&mut self, out_dir: &Path) -> Result<()> {
        self.completed_at = Some(chrono::Utc::now().to_rfc3339());
        self.write_to(&self.manifest_path(out_dir))
    }

    fn write_to(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("serialize manifest: {e}")))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s)
        .map_err(|e| Error::Parse { path: path.into(), line: 0, msg: e.to_string() })
}

/// Dotted paths at which two JSON values differ — the audit view for "these
/// two runs differ only in X".
pub fn json_diff_paths(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let mut out = Vec::new();
    diff_into(a, b, String::new(), &mut out);
    out
}

fn diff_into(a: &serde_json::Value, b: &serde_json::Value, prefix: String, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: std::collections::BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
            for k in keys {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (ma.get(k), mb.get(k)) {
                    (Some(x), Some(y)) => diff_into(x, y, p, out),
                    _ => out.push(p),
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) if xa.len() == xb.len() => {
            for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
                diff_into(x, y, format!("{prefix}[{i}]"), out);
            }
        }
        _ => {
            if a != b {
                out.push(prefix);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Cfg {
        mode: &'static str,
        lr: f64,
    }

    #[test]
    fn manifest_lifecycle() {
        let dir = std::env::temp_dir().join(format!("detangle-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut m = RunManifest::new("train", None, &Cfg { mode: "detangle", lr: 0.01 }, 7)
            .unwrap()
            .input(Path::new("corpus.jsonl"))
            .output(Path::new("checkpoint.bin"));
        let path = m.start(&dir).unwrap();
        let early = load_manifest(&path).unwrap();
        assert!(early.completed_at.is_none());
        assert_eq!(early.seed, 7);
        assert_eq!(early.outputs, vec![PathBuf::from("checkpoint.bin")]);

        m.finalize(&dir).unwrap();
        let done = load_manifest(&path).unwrap();
        assert!(done.completed_at.is_some());
        assert_eq!(done.config_snapshot["mode"], "detangle");
    }

    #[test]
    fn diff_pinpoints_single_field() {
        let a = serde_json::json!({"train": {"mode": "detangle", "lr": 0.01}, "seed": 3});
        let b = serde_json::json!({"train": {"mode": "simple", "lr": 0.01}, "seed": 3});
        assert_eq!(json_diff_paths(&a, &b), vec!["train.mode".to_string()]);
        assert!(json_diff_paths(&a, &a).is_empty());

        let c = serde_json::json!({"train": {"lr": 0.01}, "seed": 3});
        assert_eq!(json_diff_paths(&a, &c), vec!["train.mode".to_string()]);
    }
}
