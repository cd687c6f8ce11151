use std::collections::BTreeMap;

use serde::Serialize;

use super::CobwebTree;

/// Shape statistics of a hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSummary {
    pub node_count: usize,
    pub leaf_count: usize,
    pub max_depth: usize,
    pub instances: u64,
    /// Number of nodes at each depth (root = 1).
    pub depth_histogram: BTreeMap<usize, usize>,
    /// Number of internal nodes with each child count.
    pub branching_histogram: BTreeMap<usize, usize>,
    /// Count-weighted fraction of labeled leaf instances carrying the leaf's
    /// majority label.
    pub leaf_purity: Option<f64>,
}

impl CobwebTree {
    pub fn summary(&self) -> TreeSummary {
        let mut depth_histogram = BTreeMap::new();
        let mut branching_histogram = BTreeMap::new();
        let mut leaf_count = 0;
        let mut max_depth = 0;
        let mut majority = 0u64;
        let mut labeled = 0u64;
        let mut stack = vec![(self.root, 1usize)];
        while let Some((id, depth)) = stack.pop() {
            let node = self.node(id);
            *depth_histogram.entry(depth).or_insert(0) += 1;
            max_depth = max_depth.max(depth);
            if node.is_leaf() {
                leaf_count += 1;
                labeled += node.labels.total();
                majority += node.labels.counts.iter().copied().max().unwrap_or(0);
            } else {
                *branching_histogram.entry(node.children.len()).or_insert(0) += 1;
                stack.extend(node.children.iter().map(|&c| (c, depth + 1)));
            }
        }
        TreeSummary {
            node_count: self.node_count(),
            leaf_count,
            max_depth,
            instances: self.root().count(),
            depth_histogram,
            branching_histogram,
            leaf_purity: (labeled > 0).then(|| majority as f64 / labeled as f64),
        }
    }
}
