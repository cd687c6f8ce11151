use serde::{Deserialize, Serialize};

use super::{CobwebTree, ConceptNode, NodeId, OperationLog, TreeConfig};
use crate::error::{Error, Result};
use crate::stats::{GaussianStats, LabelCounts};
use crate::tree::utility::Scorer;

pub const TREE_SCHEMA_VERSION: u32 = 1;
const TREE_SCHEMA: &str = "cobweb-tree";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDocument {
    schema: String,
    version: u32,
    config: TreeConfig,
    dim: usize,
    classes: usize,
    root: NodeId,
    next_id: NodeId,
    operations: OperationLog,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    parent: Option<NodeId>,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    labels: Vec<u64>,
    children: Vec<NodeId>,
}

impl CobwebTree {
    /// Self-describing JSON document: config, node table and adjacency.
    pub fn to_json(&self) -> String {
        let doc = TreeDocument {
            schema: TREE_SCHEMA.into(),
            version: TREE_SCHEMA_VERSION,
            config: self.config,
            dim: self.dim,
            classes: self.classes,
            root: self.root,
            next_id: self.nodes.len() as NodeId,
            operations: self.ops,
            nodes: self
                .nodes()
                .map(|n| NodeRecord {
                    id: n.id,
                    parent: n.parent,
                    count: n.stats.count,
                    mean: n.stats.mean.clone(),
                    m2: n.stats.m2.clone(),
                    labels: n.labels.counts.clone(),
                    children: n.children.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        if probe.get("schema").and_then(|s| s.as_str()) != Some(TREE_SCHEMA) {
            return Err(Error::Format("not a cobweb-tree document".into()));
        }
        let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != TREE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: TREE_SCHEMA_VERSION,
                found,
            });
        }
        let doc: TreeDocument = serde_json::from_value(probe)?;
        doc.config.validate()?;
        let scorer = Scorer::new(doc.config.utility, doc.config.attributes);
        let mut nodes: Vec<Option<ConceptNode>> = vec![None; doc.next_id as usize];
        for r in doc.nodes {
            if r.mean.len() != doc.dim || r.m2.len() != doc.dim || r.labels.len() != doc.classes {
                return Err(Error::Format(format!("node {} has inconsistent dimensions", r.id)));
            }
            let slot = nodes
                .get_mut(r.id as usize)
                .ok_or_else(|| Error::Format(format!("node id {} beyond next_id", r.id)))?;
            let stats = GaussianStats {
                count: r.count,
                mean: r.mean,
                m2: r.m2,
            };
            let labels = LabelCounts { counts: r.labels };
            let quality = if stats.count > 0 {
                scorer.quality(&stats, &labels)?
            } else {
                0.0
            };
            *slot = Some(ConceptNode {
                id: r.id,
                parent: r.parent,
                children: r.children,
                stats,
                labels,
                quality,
            });
        }
        let tree = CobwebTree {
            config: doc.config,
            dim: doc.dim,
            classes: doc.classes,
            root: doc.root,
            nodes,
            ops: doc.operations,
            scorer,
        };
        if tree.get(tree.root).is_none() {
            return Err(Error::Format("root node missing".into()));
        }
        tree.check_invariants()
            .map_err(|e| Error::Format(format!("inconsistent tree: {e}")))?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Instance;

    #[test]
    fn round_trip_is_exact() {
        let mut tree = CobwebTree::new(3, 2, TreeConfig::default()).unwrap();
        for i in 0..40 {
            let v = (i as f64 * 0.37).sin().abs();
            tree.fit(&Instance::labeled(vec![v, 1.0 - v, v * v / 3.0], i % 2)).unwrap();
        }
        let text = tree.to_json();
        let back = CobwebTree::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        for node in tree.nodes() {
            assert_eq!(back.node(node.id), node);
        }
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let tree = CobwebTree::new(1, 2, TreeConfig::default()).unwrap();
        let text = tree.to_json().replace("\"version\":1", "\"version\":7");
        match CobwebTree::from_json(&text) {
            Err(Error::SchemaVersion { expected: 1, found: 7 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
