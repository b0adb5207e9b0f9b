//! Run directories: every output of a subcommand lives under one directory,
//! next to a snapshot of the effective configuration.

use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::{Failure, Outcome};

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Outcome<Self> {
        std::fs::create_dir_all(root).map_err(|e| Failure::data(format!("cannot create run dir {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a relative output name inside the run directory.
    pub fn path(&self, name: &str) -> Outcome<PathBuf> {
        let rel = Path::new(name);
        if name.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(Failure::usage(format!("output name {name:?} must be a relative path inside the run directory")));
        }
        Ok(self.root.join(rel))
    }

    pub fn write(&self, name: &str, contents: &str) -> Outcome<PathBuf> {
        let path = self.path(name)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(&path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn subdir(&self, name: &str) -> Outcome<RunDir> {
        RunDir::create(&self.path(name)?)
    }

    /// Writes `config.json`: the subcommand, its arguments and the resolved settings.
    pub fn snapshot<A: Serialize, E: Serialize>(&self, command: &str, args: &A, effective: &E) -> Outcome<()> {
        let doc = serde_json::json!({
            "schema": SNAPSHOT_SCHEMA,
            "command": command,
            "args": args,
            "effective": effective,
        });
        self.write("config.json", &serde_json::to_string_pretty(&doc).expect("snapshot serializes"))?;
        Ok(())
    }
}

pub const SNAPSHOT_SCHEMA: u32 = 1;

/// Overlays the object `top` onto `base`, key by key.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Reads a settings file: either the settings object itself or a run snapshot holding it under `effective`.
pub fn read_settings(path: &Path) -> Outcome<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut v: Value =
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: not JSON: {e}", path.display())))?;
    if let Some(eff) = v.get_mut("effective") {
        v = eff.take();
    }
    if !v.is_object() {
        return Err(Failure::data(format!("{}: settings must be a JSON object", path.display())));
    }
    Ok(v)
}

/// `base` with an optional settings file merged on top.
pub fn layered<T: Serialize + serde::de::DeserializeOwned>(base: &T, file: Option<&Path>) -> Outcome<T> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(base).expect("settings serialize")).expect("round trip"));
    };
    let mut v = serde_json::to_value(base).expect("settings serialize");
    merge(&mut v, read_settings(path)?);
    serde_json::from_value(v).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_escaping_names() {
        let tmp = std::env::temp_dir().join("gtmp-rundir-unit");
        let rd = RunDir::create(&tmp).unwrap();
        assert!(rd.path("a/b.csv").is_ok());
        for bad in ["../x", "/etc/x", "a/../../x", "", "./x"] {
            assert_eq!(rd.path(bad).unwrap_err().code, 1, "{bad}");
        }
    }

    #[test]
    fn merge_overlays_nested_keys() {
        let mut base = serde_json::json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut base, serde_json::json!({"b": {"d": 4}, "e": 5}));
        assert_eq!(base, serde_json::json!({"a": 1, "b": {"c": 2, "d": 4}, "e": 5}));
    }
}
