//! Output directory handling. Every JSON artifact is written twice: the
//! deterministic part, and a `*.timing.json` sibling holding the wall-clock
//! fields keyed by JSON pointer. The manifest lists every file and hashes
//! the deterministic ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// Keys holding wall-clock measurements or values derived from them.
const TIMING_KEYS: &[&str] = &[
    "solve_time_s",
    "max_solve_time_s",
    "elapsed_s",
    "time_s",
    "time_to_target_s",
    "mean_time_to_target_s",
    "time",
    "not_converged",
];

pub const MANIFEST: &str = "manifest.json";

pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

fn split_timing(v: &mut Value, pointer: &str, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            let keys: Vec<String> = map.keys().cloned().collect();
            for k in keys {
                let p = format!("{pointer}/{k}");
                if TIMING_KEYS.contains(&k.as_str()) {
                    if let Some(t) = map.remove(&k) {
                        out.insert(p, t);
                    }
                } else if let Some(child) = map.get_mut(&k) {
                    split_timing(child, &p, out);
                }
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter_mut().enumerate() {
                split_timing(child, &format!("{pointer}/{i}"), out);
            }
        }
        _ => {}
    }
}

pub fn is_timing_file(name: &str) -> bool {
    name.contains(".timing.")
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `name` without timing fields and, when there were any,
    /// `<stem>.timing.json` with them.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::io(e.to_string()))?;
        let mut timing = BTreeMap::new();
        split_timing(&mut v, "", &mut timing);
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::io(e.to_string()))?;
        self.write_bytes(name, (text + "\n").as_bytes())?;
        if !timing.is_empty() {
            let stem = name.strip_suffix(".json").unwrap_or(name);
            let t = serde_json::to_string_pretty(&timing).map_err(|e| CliError::io(e.to_string()))?;
            self.write_bytes(&format!("{stem}.timing.json"), (t + "\n").as_bytes())?;
        }
        Ok(())
    }

    /// Records this command's files and the resolved config in the
    /// manifest, keeping entries of other commands run into the same
    /// directory.
    pub fn finish(self, command: &str, cfg: &RunConfig, args: Value) -> Result<(), CliError> {
        let mpath = self.path(MANIFEST);
        let mut manifest: Map<String, Value> = match fs::read_to_string(&mpath) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => Map::new(),
        };
        let mut files = Map::new();
        let mut names = self.written.clone();
        names.sort();
        names.dedup();
        for name in &names {
            let bytes = fs::read(self.path(name)).map_err(|e| CliError::io(e.to_string()))?;
            let entry = if is_timing_file(name) {
                serde_json::json!({ "timing": true })
            } else {
                let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                serde_json::json!({ "bytes": bytes.len(), "sha256": digest })
            };
            files.insert(name.clone(), entry);
        }
        let entry = serde_json::json!({
            "tool": concat!("boilerctl ", env!("CARGO_PKG_VERSION")),
            "seed": cfg.seed,
            "args": args,
            "config": cfg,
            "files": files,
        });
        let commands = manifest
            .entry("commands")
            .or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(m) = commands {
            m.insert(command.to_string(), entry);
        }
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::io(e.to_string()))?;
        fs::write(&mpath, text + "\n").map_err(|e| CliError::io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_fields_move_out() {
        let mut v = serde_json::json!({
            "a": 1,
            "records": [{"solve_time_s": 0.5, "x": 2}, {"solve_time_s": 0.25, "x": 3}],
            "nested": {"elapsed_s": 9.0}
        });
        let mut t = BTreeMap::new();
        split_timing(&mut v, "", &mut t);
        assert_eq!(v, serde_json::json!({"a": 1, "records": [{"x": 2}, {"x": 3}], "nested": {}}));
        assert_eq!(t["/records/1/solve_time_s"], serde_json::json!(0.25));
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn timing_file_names() {
        assert!(is_timing_file("loop.timing.json"));
        assert!(!is_timing_file("loop.json"));
    }
}
