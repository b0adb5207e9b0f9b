//! Tree ingestion: SWC import, the portable JSON tree format and dataset manifests.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GtmpError, Result};
use crate::tree::{GeometricTree, Label, NodeRecord};

/// Width of the SWC type one-hot: codes 1..=7 plus one slot for anything else.
pub const SWC_TYPE_SLOTS: usize = 8;
/// SWC attrs are the type one-hot followed by the radius.
pub const SWC_ATTR_WIDTH: usize = SWC_TYPE_SLOTS + 1;

fn swc_type_slot(code: i64) -> usize {
    if (1..=7).contains(&code) {
        (code - 1) as usize
    } else {
        SWC_TYPE_SLOTS - 1
    }
}

/// Parses SWC text (`index type x y z radius parent` per line, `#` comments).
///
/// Node ids are remapped to `0..N` in file order; parent `-1` marks the root.
pub fn parse_swc(text: &str) -> Result<GeometricTree> {
    struct Row {
        index: i64,
        code: i64,
        xyz: [f64; 3],
        radius: f64,
        parent: i64,
    }
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 7 {
            return Err(GtmpError::Format(format!("line {}: expected 7 columns, got {}", lineno + 1, fields.len())));
        }
        let int = |s: &str| -> Result<i64> {
            // Some exporters write integral columns as floats ("1.0").
            s.parse::<i64>().or_else(|_| match s.parse::<f64>() {
                Ok(v) if v.fract() == 0.0 && v.is_finite() => Ok(v as i64),
                _ => Err(GtmpError::Format(format!("line {}: bad integer {s:?}", lineno + 1))),
            })
        };
        let real = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| GtmpError::Format(format!("line {}: bad number {s:?}", lineno + 1)))
        };
        rows.push(Row {
            index: int(fields[0])?,
            code: int(fields[1])?,
            xyz: [real(fields[2])?, real(fields[3])?, real(fields[4])?],
            radius: real(fields[5])?,
            parent: int(fields[6])?,
        });
    }

    let mut dense = HashMap::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if dense.insert(r.index, i as i64).is_some() {
            return Err(GtmpError::Format(format!("duplicate SWC index {}", r.index)));
        }
    }
    let mut nodes = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let parent = if r.parent < 0 {
            None
        } else {
            Some(*dense.get(&r.parent).ok_or_else(|| {
                GtmpError::Format(format!("SWC node {} references missing parent {}", r.index, r.parent))
            })?)
        };
        let mut attrs = vec![0.0; SWC_ATTR_WIDTH];
        attrs[swc_type_slot(r.code)] = 1.0;
        attrs[SWC_TYPE_SLOTS] = r.radius;
        nodes.push(NodeRecord { id: i as i64, parent, position: r.xyz, attrs });
    }
    GeometricTree::new(nodes, None)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonNode {
    id: i64,
    #[serde(default)]
    parent: Option<i64>,
    xyz: [f64; 3],
    #[serde(default)]
    attrs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTree {
    root: i64,
    #[serde(default)]
    label: Option<Label>,
    nodes: Vec<JsonNode>,
}

/// Parses the portable JSON tree format.
pub fn parse_tree_json(text: &str) -> Result<GeometricTree> {
    let doc: JsonTree = serde_json::from_str(text)?;
    let nodes: Vec<NodeRecord> = doc
        .nodes
        .into_iter()
        .map(|n| NodeRecord { id: n.id, parent: n.parent, position: n.xyz, attrs: n.attrs })
        .collect();
    let tree = GeometricTree::new(nodes, doc.label)?;
    let actual = tree.id(tree.root());
    if actual != doc.root {
        return Err(GtmpError::Format(format!("declared root {} but the parentless node is {}", doc.root, actual)));
    }
    Ok(tree)
}

/// Canonical JSON: nodes sorted by id, shortest round-trip decimals, no whitespace.
pub fn serialize_tree_json(tree: &GeometricTree) -> String {
    let mut nodes: Vec<JsonNode> = tree
        .nodes()
        .iter()
        .map(|n| JsonNode { id: n.id, parent: n.parent, xyz: n.position, attrs: n.attrs.clone() })
        .collect();
    nodes.sort_by_key(|n| n.id);
    let doc = JsonTree { root: tree.id(tree.root()), label: tree.label().cloned(), nodes };
    serde_json::to_string(&doc).expect("tree JSON serialization cannot fail")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub target: Option<f64>,
}

/// A dataset on disk: tree files plus per-tree targets and the split recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub task_kind: TaskKind,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub target_name: Option<String>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.split_ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(GtmpError::Config("split ratios must be positive".into()));
        }
        let total: f64 = self.split_ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GtmpError::Config(format!("split ratios sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    /// Loads every tree, resolving relative paths against `base`.
    pub fn load_trees(&self, base: &Path) -> Result<Vec<(GeometricTree, Option<f64>)>> {
        self.entries
            .iter()
            .map(|e| {
                let path = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
                Ok((read_tree_file(&path)?, e.target))
            })
            .collect()
    }
}

/// Reads a tree from disk, choosing the parser by extension (`.swc` or JSON).
pub fn read_tree_file(path: &Path) -> Result<GeometricTree> {
    let text = std::fs::read_to_string(path).map_err(|e| GtmpError::Io(format!("{}: {e}", path.display())))?;
    let is_swc = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("swc"));
    if is_swc {
        parse_swc(&text)
    } else {
        parse_tree_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH_SWC: &str = "# a path\n1 1 0 0 0 1.0 -1\n2 3 1 0 0 0.5 1\n3 3 2 0 0 0.5 2\n4 3 3 0 0 0.5 3\n";

    #[test]
    fn swc_path() {
        let t = parse_swc(PATH_SWC).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.edge_count(), 3);
        assert_eq!(t.max_depth(), 3);
        assert_eq!(t.attr_width(), SWC_ATTR_WIDTH);
        assert_eq!(t.nodes()[0].attrs[0], 1.0);
        assert_eq!(t.nodes()[1].attrs[2], 1.0);
        assert_eq!(t.nodes()[1].attrs[8], 0.5);
        assert_eq!(t.nodes()[3].parent, Some(2));
    }

    #[test]
    fn swc_errors() {
        let dangling = "1 1 0 0 0 1 -1\n2 3 1 0 0 1 1\n3 3 2 0 0 1 99\n";
        assert!(matches!(parse_swc(dangling), Err(GtmpError::Format(_))));
        let two_roots = "1 1 0 0 0 1 -1\n2 3 1 0 0 1 -1\n";
        assert!(matches!(parse_swc(two_roots), Err(GtmpError::MultiRoot(_))));
        let cycle = "1 1 0 0 0 1 -1\n2 3 1 0 0 1 3\n3 3 2 0 0 1 2\n";
        assert!(matches!(parse_swc(cycle), Err(GtmpError::Cycle(_))));
        let zero = "1 1 0 0 0 1 -1\n2 3 0 0 0 1 1\n";
        assert!(matches!(parse_swc(zero), Err(GtmpError::DegenerateEdge { .. })));
        assert!(matches!(parse_swc("1 1 0 0\n"), Err(GtmpError::Format(_))));
    }

    #[test]
    fn swc_unknown_type_goes_to_other_slot() {
        let t = parse_swc("1 0 0 0 0 2.5 -1\n2 12 1 0 0 1 1\n").unwrap();
        assert_eq!(t.nodes()[0].attrs[7], 1.0);
        assert_eq!(t.nodes()[1].attrs[7], 1.0);
        assert_eq!(t.nodes()[0].attrs[8], 2.5);
    }

    #[test]
    fn json_single_node_and_self_parent() {
        let t = parse_tree_json(r#"{"root":0,"nodes":[{"id":0,"xyz":[0,0,0]}]}"#).unwrap();
        assert_eq!(t.len(), 1);
        let err = parse_tree_json(r#"{"root":0,"nodes":[{"id":0,"parent":0,"xyz":[0,0,0]}]}"#);
        assert_eq!(err, Err(GtmpError::Cycle(0)));
        let bad = parse_tree_json(r#"{"root":0,"nodes":[{"id":0,"xyz":[0,0]}]}"#);
        assert!(matches!(bad, Err(GtmpError::Format(_))));
        let wrong_root = parse_tree_json(r#"{"root":5,"nodes":[{"id":0,"xyz":[0,0,0]}]}"#);
        assert!(matches!(wrong_root, Err(GtmpError::Format(_))));
    }

    #[test]
    fn canonical_form_sorts_by_id() {
        let text = r#"{"root":3,"label":"a","nodes":[{"id":7,"parent":3,"xyz":[1,0.1,0]},{"id":3,"xyz":[0,0,0]}]}"#;
        let t = parse_tree_json(text).unwrap();
        let canon = serialize_tree_json(&t);
        assert_eq!(
            canon,
            r#"{"root":3,"label":"a","nodes":[{"id":3,"parent":null,"xyz":[0.0,0.0,0.0],"attrs":[]},{"id":7,"parent":3,"xyz":[1.0,0.1,0.0],"attrs":[]}]}"#
        );
        assert_eq!(serialize_tree_json(&parse_tree_json(&canon).unwrap()), canon);
    }

    #[test]
    fn manifest_ratios_checked() {
        let m = DatasetManifest {
            entries: vec![],
            task_kind: TaskKind::Regression,
            split_seed: 1,
            split_ratios: [0.5, 0.5, 0.5],
            target_name: None,
        };
        assert!(matches!(m.validate(), Err(GtmpError::Config(_))));
        let ok = DatasetManifest { split_ratios: [0.8, 0.1, 0.1], ..m };
        assert_eq!(DatasetManifest::from_json(&ok.to_json()).unwrap(), ok);
    }
}
