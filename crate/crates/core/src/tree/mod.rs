//! The Cobweb/4V concept hierarchy.
//!
//! Each node keeps Gaussian sufficiency statistics over the pixel attributes
//! and a label table. Instances are sorted from the root; at every branching
//! point the learner scores the four restructuring operations (add to the best
//! child, create a new child, merge the two best children, split the best
//! child) and applies the one with the highest category utility. In fixed
//! mode merge and split are disabled and growth is capped by a depth and a
//! branching factor.

mod persist;
mod summary;
pub mod utility;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{AttributeModel, GaussianStats, Instance, LabelCounts};
use utility::{utility_from_parts, Scorer, Summary, UtilityKind};

pub use persist::TREE_SCHEMA_VERSION;
pub use summary::TreeSummary;

pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureMode {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    pub utility: UtilityKind,
    pub mode: StructureMode,
    /// Number of levels, root included. Only consulted in fixed mode.
    pub fixed_depth: usize,
    /// Maximum children per node. Only consulted in fixed mode.
    pub fixed_branching: usize,
    pub attributes: AttributeModel,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            utility: UtilityKind::Information,
            mode: StructureMode::Adaptive,
            fixed_depth: 4,
            fixed_branching: 5,
            attributes: AttributeModel::default(),
            seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn fixed(depth: usize, branching: usize) -> Self {
        TreeConfig {
            mode: StructureMode::Fixed,
            fixed_depth: depth,
            fixed_branching: branching,
            ..TreeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attributes.validate()?;
        if self.mode == StructureMode::Fixed {
            if self.fixed_depth < 1 {
                return Err(Error::Config("fixed_depth must be at least 1".into()));
            }
            if self.fixed_branching < 2 {
                return Err(Error::Config("fixed_branching must be at least 2".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub stats: GaussianStats,
    pub labels: LabelCounts,
    quality: f64,
}

impl ConceptNode {
    pub fn count(&self) -> u64 {
        self.stats.count
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

impl Summary for ConceptNode {
    fn stats(&self) -> &GaussianStats {
        &self.stats
    }
    fn labels(&self) -> &LabelCounts {
        &self.labels
    }
}

/// How many times each restructuring operation was applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationLog {
    pub add: u64,
    pub create: u64,
    pub merge: u64,
    pub split: u64,
    /// A leaf that did not match the instance was turned into an internal
    /// node holding the old leaf and a new leaf.
    pub fringe: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Operation {
    Add(NodeId),
    Create,
    Merge(NodeId, NodeId),
    Split(NodeId),
}

#[derive(Debug, Clone)]
pub struct CobwebTree {
    config: TreeConfig,
    dim: usize,
    classes: usize,
    root: NodeId,
    nodes: Vec<Option<ConceptNode>>,
    ops: OperationLog,
    scorer: Scorer,
}

impl CobwebTree {
    pub fn new(dim: usize, classes: usize, config: TreeConfig) -> Result<Self> {
        config.validate()?;
        let scorer = Scorer::new(config.utility, config.attributes);
        let root = ConceptNode {
            id: 0,
            parent: None,
            children: Vec::new(),
            stats: GaussianStats::new(dim),
            labels: LabelCounts::new(classes),
            quality: 0.0,
        };
        Ok(CobwebTree {
            config,
            dim,
            classes,
            root: 0,
            nodes: vec![Some(root)],
            ops: OperationLog::default(),
            scorer,
        })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn root_id(&self) -> NodeId {
        self.root
    }

    pub fn root(&self) -> &ConceptNode {
        self.node(self.root)
    }

    pub fn operations(&self) -> OperationLog {
        self.ops
    }

    /// Panics on a stale id.
    pub fn node(&self, id: NodeId) -> &ConceptNode {
        self.get(id).unwrap_or_else(|| panic!("no node with id {id}"))
    }

    pub fn get(&self, id: NodeId) -> Option<&ConceptNode> {
        self.nodes.get(id as usize).and_then(Option::as_ref)
    }

    fn node_mut(&mut self, id: NodeId) -> &mut ConceptNode {
        self.nodes[id as usize].as_mut().expect("live node")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ConceptNode> {
        self.nodes.iter().flatten()
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    pub fn is_empty(&self) -> bool {
        self.root().count() == 0
    }

    /// Upper bound (exclusive) on node ids; ids are never reused.
    pub fn id_bound(&self) -> usize {
        self.nodes.len()
    }

    /// Depth of `id`, the root being at depth 1.
    pub fn depth_of(&self, mut id: NodeId) -> usize {
        let mut depth = 1;
        while let Some(parent) = self.node(id).parent {
            id = parent;
            depth += 1;
        }
        depth
    }

    /// Absorbs one instance according to the configured structure mode.
    pub fn fit(&mut self, x: &Instance) -> Result<()> {
        x.validate(self.dim, self.classes)?;
        match self.config.mode {
            StructureMode::Adaptive => self.fit_adaptive(x),
            StructureMode::Fixed => self.fit_fixed_inner(x),
        }
    }

    /// Fixed-structure fit; rejected unless the tree is in fixed mode.
    pub fn fit_fixed(&mut self, x: &Instance) -> Result<()> {
        if self.config.mode != StructureMode::Fixed {
            return Err(Error::Config("fit_fixed requires mode = fixed".into()));
        }
        self.fit(x)
    }

    pub fn fit_all<'a>(&mut self, xs: impl IntoIterator<Item = &'a Instance>) -> Result<()> {
        for x in xs {
            self.fit(x)?;
        }
        Ok(())
    }

    fn fit_adaptive(&mut self, x: &Instance) -> Result<()> {
        if self.is_empty() {
            let root = self.root;
            self.absorb(root, x, None);
            return Ok(());
        }
        let mut current = self.root;
        loop {
            if self.node(current).is_leaf() {
                if self.is_exact_match(current, x) {
                    self.absorb(current, x, None);
                } else {
                    self.fringe_split(current, x);
                }
                return Ok(());
            }
            let (op, parent_q) = self.best_operation(current, x, true, usize::MAX);
            match op {
                Operation::Add(child) => {
                    self.ops.add += 1;
                    self.absorb(current, x, Some(parent_q));
                    current = child;
                }
                Operation::Create => {
                    self.ops.create += 1;
                    self.absorb(current, x, Some(parent_q));
                    self.create_child(current, x);
                    return Ok(());
                }
                Operation::Merge(a, b) => {
                    self.ops.merge += 1;
                    self.absorb(current, x, Some(parent_q));
                    current = self.merge_children(current, a, b)?;
                }
                Operation::Split(child) => {
                    self.ops.split += 1;
                    self.split_child(current, child)?;
                }
            }
        }
    }

    fn fit_fixed_inner(&mut self, x: &Instance) -> Result<()> {
        let max_depth = self.config.fixed_depth;
        let mut current = self.root;
        let mut depth = 1;
        loop {
            if depth >= max_depth {
                self.absorb(current, x, None);
                return Ok(());
            }
            if self.node(current).is_leaf() {
                self.absorb(current, x, None);
                self.ops.create += 1;
                self.create_chain(current, x, depth + 1);
                return Ok(());
            }
            let (op, parent_q) = self.best_operation(current, x, false, self.config.fixed_branching);
            match op {
                Operation::Add(child) => {
                    self.ops.add += 1;
                    self.absorb(current, x, Some(parent_q));
                    current = child;
                    depth += 1;
                }
                Operation::Create => {
                    self.ops.create += 1;
                    self.absorb(current, x, Some(parent_q));
                    self.create_chain(current, x, depth + 1);
                    return Ok(());
                }
                Operation::Merge(..) | Operation::Split(_) => {
                    unreachable!("restructuring disabled in fixed mode")
                }
            }
        }
    }

    /// Creates a child of `parent` holding `x` and, in fixed mode, descends
    /// with single-child nodes until the depth cap.
    fn create_chain(&mut self, parent: NodeId, x: &Instance, depth: usize) {
        let mut node = self.create_child(parent, x);
        let mut depth = depth;
        while depth < self.config.fixed_depth {
            node = self.create_child(node, x);
            depth += 1;
        }
    }

    /// Scores the candidate operations at `parent` and returns the winner
    /// with the quality of `parent` after absorbing `x`. Ties prefer add, then
    /// create, merge and split.
    fn best_operation(&self, parent: NodeId, x: &Instance, restructure: bool, max_children: usize) -> (Operation, f64) {
        let p = self.node(parent);
        let n = p.children.len();
        let new_count = (p.count() + 1) as f64;
        let parent_q = self.scorer.quality_with(&p.stats, &p.labels, x);

        let children: Vec<&ConceptNode> = p.children.iter().map(|&c| self.node(c)).collect();
        let base_terms: Vec<f64> = children
            .iter()
            .map(|c| c.count() as f64 / new_count * (c.quality - parent_q))
            .collect();
        let base: f64 = base_terms.iter().sum();

        let mut add_scores = Vec::with_capacity(n);
        let mut with_x = Vec::with_capacity(n);
        for (k, child) in children.iter().enumerate() {
            let q = self.scorer.quality_with(&child.stats, &child.labels, x);
            let term = (child.count() + 1) as f64 / new_count * (q - parent_q);
            add_scores.push((base - base_terms[k] + term) / n as f64);
            with_x.push(q);
        }
        let (best1, best2) = two_best(&add_scores);

        let mut op = Operation::Add(children[best1].id);
        let mut best = add_scores[best1];

        if n < max_children {
            let q_new = self.scorer.quality_singleton(x, self.classes);
            let create = (base + (q_new - parent_q) / new_count) / (n + 1) as f64;
            if create > best {
                best = create;
                op = Operation::Create;
            }
        }

        if !restructure {
            return (op, parent_q);
        }

        // Merging the two children of a binary node yields the trivial
        // partition, so merge is only scored with three or more children.
        if let Some(best2) = best2.filter(|_| n >= 3) {
            let (a, b) = (children[best1], children[best2]);
            let mut merged_stats = a.stats.merge(&b.stats).expect("same dimensionality");
            let mut merged_labels = a.labels.clone();
            merged_labels.merge_from(&b.labels).expect("same classes");
            let q_merged = self.scorer.quality_with(&merged_stats, &merged_labels, x);
            merged_stats.count += 1;
            let merged_term = merged_stats.count as f64 / new_count * (q_merged - parent_q);
            let merge = (base - base_terms[best1] - base_terms[best2] + merged_term) / (n - 1) as f64;
            if merge > best {
                best = merge;
                op = Operation::Merge(a.id, b.id);
            }
        }

        let split_target = children[best1];
        if !split_target.is_leaf() {
            let promoted = split_target.children.iter().map(|&g| self.node(g));
            let parts = children
                .iter()
                .copied()
                .filter(|c| c.id != split_target.id)
                .chain(promoted)
                .map(|c| (c.count() as f64, c.quality));
            let split = utility_from_parts(p.count() as f64, p.quality, parts);
            if split > best {
                op = Operation::Split(split_target.id);
            }
        }
        (op, parent_q)
    }

    fn is_exact_match(&self, id: NodeId, x: &Instance) -> bool {
        let node = self.node(id);
        if node.stats.m2.iter().any(|&m| m != 0.0) || node.stats.mean != x.features {
            return false;
        }
        let labeled = node.labels.total();
        match x.label {
            Some(label) => labeled == node.count() && node.labels.counts[label] == labeled,
            None => labeled == 0,
        }
    }

    fn absorb(&mut self, id: NodeId, x: &Instance, quality: Option<f64>) {
        let scorer = self.scorer;
        let node = self.node_mut(id);
        node.stats.update(&x.features).expect("validated dimensionality");
        if let Some(label) = x.label {
            node.labels.add(label).expect("validated label");
        }
        node.quality = match quality {
            Some(q) => q,
            None => scorer.quality(&node.stats, &node.labels).expect("non-empty node"),
        };
    }

    fn push_node(&mut self, parent: Option<NodeId>, stats: GaussianStats, labels: LabelCounts) -> NodeId {
        let id = self.nodes.len() as NodeId;
        let quality = self.scorer.quality(&stats, &labels).unwrap_or(0.0);
        self.nodes.push(Some(ConceptNode {
            id,
            parent,
            children: Vec::new(),
            stats,
            labels,
            quality,
        }));
        id
    }

    fn create_child(&mut self, parent: NodeId, x: &Instance) -> NodeId {
        let mut stats = GaussianStats::new(self.dim);
        stats.update(&x.features).expect("validated dimensionality");
        let mut labels = LabelCounts::new(self.classes);
        if let Some(label) = x.label {
            labels.add(label).expect("validated label");
        }
        let id = self.push_node(Some(parent), stats, labels);
        self.node_mut(parent).children.push(id);
        id
    }

    /// Replaces leaf `leaf` by a new internal node that adopts the old leaf
    /// and a new leaf for `x`.
    fn fringe_split(&mut self, leaf: NodeId, x: &Instance) {
        self.ops.fringe += 1;
        let old = self.node(leaf);
        let grandparent = old.parent;
        let (stats, labels) = (old.stats.clone(), old.labels.clone());
        let internal = self.push_node(grandparent, stats, labels);
        match grandparent {
            Some(gp) => {
                let slot = self.node(gp).children.iter().position(|&c| c == leaf).expect("child of parent");
                self.node_mut(gp).children[slot] = internal;
            }
            None => self.root = internal,
        }
        self.node_mut(leaf).parent = Some(internal);
        self.node_mut(internal).children.push(leaf);
        self.absorb(internal, x, None);
        self.create_child(internal, x);
    }

    /// Replaces children `c1` and `c2` of `parent` by a new node whose
    /// statistics are their union and which adopts both. Returns its id.
    pub fn merge_children(&mut self, parent: NodeId, c1: NodeId, c2: NodeId) -> Result<NodeId> {
        if c1 == c2 {
            return Err(Error::InvalidOperation(format!("cannot merge node {c1} with itself")));
        }
        let p = self.get(parent).ok_or_else(|| Error::InvalidOperation(format!("no node {parent}")))?;
        let pos1 = p.children.iter().position(|&c| c == c1);
        let pos2 = p.children.iter().position(|&c| c == c2);
        let (Some(pos1), Some(_)) = (pos1, pos2) else {
            return Err(Error::InvalidOperation(format!("{c1} and {c2} must both be children of {parent}")));
        };
        let (a, b) = (self.node(c1), self.node(c2));
        let stats = a.stats.merge(&b.stats)?;
        let mut labels = a.labels.clone();
        labels.merge_from(&b.labels)?;
        let merged = self.push_node(Some(parent), stats, labels);
        let p = self.node_mut(parent);
        p.children[pos1] = merged;
        p.children.retain(|&c| c != c2);
        self.node_mut(merged).children = vec![c1, c2];
        self.node_mut(c1).parent = Some(merged);
        self.node_mut(c2).parent = Some(merged);
        Ok(merged)
    }

    /// Removes child `c` of `parent` and promotes its children, in order, to
    /// its position.
    pub fn split_child(&mut self, parent: NodeId, c: NodeId) -> Result<()> {
        let p = self.get(parent).ok_or_else(|| Error::InvalidOperation(format!("no node {parent}")))?;
        let pos = p
            .children
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| Error::InvalidOperation(format!("{c} is not a child of {parent}")))?;
        if self.node(c).is_leaf() {
            return Err(Error::InvalidOperation(format!("cannot split leaf {c}")));
        }
        let node = self.nodes[c as usize].take().expect("live node");
        for &g in &node.children {
            self.node_mut(g).parent = Some(parent);
        }
        self.node_mut(parent).children.splice(pos..=pos, node.children);
        Ok(())
    }

    /// Verifies count and label conservation, parent links and acyclicity.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOperation(msg));
        if self.node(self.root).parent.is_some() {
            return bad("root has a parent".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        let mut visited = 0;
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id as usize], true) {
                return bad(format!("node {id} reachable twice"));
            }
            visited += 1;
            let node = self.node(id);
            if node.is_leaf() {
                continue;
            }
            let mut count = 0;
            let mut labels = LabelCounts::new(self.classes);
            for &c in &node.children {
                let child = self.get(c).ok_or_else(|| Error::InvalidOperation(format!("dangling child {c}")))?;
                if child.parent != Some(id) {
                    return bad(format!("child {c} does not point back to {id}"));
                }
                count += child.count();
                labels.merge_from(&child.labels)?;
                stack.push(c);
            }
            if count != node.count() {
                return bad(format!("node {id} count {} != children sum {count}", node.count()));
            }
            if labels != node.labels {
                return bad(format!("node {id} label counts differ from children sum"));
            }
        }
        if visited != self.node_count() {
            return bad(format!("{} nodes unreachable from the root", self.node_count() - visited));
        }
        Ok(())
    }
}

fn two_best(scores: &[f64]) -> (usize, Option<usize>) {
    let mut best = 0;
    let mut second: Option<usize> = None;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            second = Some(best);
            best = i;
        } else if second.is_none_or(|s| scores[i] > scores[s]) {
            second = Some(i);
        }
    }
    (best, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::AttributeWeights;

    fn x1(v: f64, label: usize) -> Instance {
        Instance::labeled(vec![v], label)
    }

    fn small_model() -> AttributeModel {
        AttributeModel {
            acuity: 0.05,
            weights: AttributeWeights::default(),
            label_smoothing: 1.0,
        }
    }

    #[test]
    fn first_fit_lands_in_root() {
        let mut tree = CobwebTree::new(1, 2, TreeConfig::default()).unwrap();
        tree.fit(&x1(0.3, 0)).unwrap();
        assert_eq!(tree.root().count(), 1);
        assert_eq!(tree.node_count(), 1);
    }

    #[test]
    fn identical_pair_then_distant_point() {
        let cfg = TreeConfig {
            attributes: small_model(),
            ..TreeConfig::default()
        };
        let mut tree = CobwebTree::new(1, 2, cfg).unwrap();
        tree.fit(&x1(0.1, 0)).unwrap();
        tree.fit(&x1(0.1, 0)).unwrap();
        tree.fit(&x1(0.9, 1)).unwrap();
        let root = tree.root();
        assert_eq!(root.count(), 3);
        let mut counts: Vec<u64> = root.children.iter().map(|&c| tree.node(c).count()).collect();
        counts.sort();
        assert_eq!(counts, vec![1, 2]);
        tree.check_invariants().unwrap();
    }

    #[test]
    fn fixed_branching_caps_children() {
        let cfg = TreeConfig {
            attributes: small_model(),
            ..TreeConfig::fixed(2, 2)
        };
        let mut tree = CobwebTree::new(1, 3, cfg).unwrap();
        tree.fit_fixed(&x1(0.0, 0)).unwrap();
        tree.fit_fixed(&x1(1.0, 1)).unwrap();
        tree.fit_fixed(&x1(0.8, 2)).unwrap();
        let root = tree.root();
        assert_eq!(root.children.len(), 2);
        let near = root
            .children
            .iter()
            .map(|&c| tree.node(c))
            .find(|c| c.labels.counts[1] == 1)
            .unwrap();
        assert_eq!(near.count(), 2);
        assert_eq!(tree.operations().merge + tree.operations().split, 0);
    }

    #[test]
    fn depth_one_keeps_everything_in_root() {
        let mut tree = CobwebTree::new(1, 2, TreeConfig::fixed(1, 3)).unwrap();
        for i in 0..20 {
            tree.fit(&x1(i as f64 / 20.0, i % 2)).unwrap();
        }
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.root().count(), 20);
    }

    #[test]
    fn fit_fixed_rejects_adaptive_tree() {
        let mut tree = CobwebTree::new(1, 2, TreeConfig::default()).unwrap();
        assert!(matches!(tree.fit_fixed(&x1(0.0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn fit_rejects_bad_dimension() {
        let mut tree = CobwebTree::new(2, 2, TreeConfig::default()).unwrap();
        assert!(matches!(
            tree.fit(&x1(0.0, 0)),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    fn three_child_tree() -> (CobwebTree, Vec<NodeId>) {
        let cfg = TreeConfig {
            attributes: small_model(),
            ..TreeConfig::fixed(2, 3)
        };
        let mut tree = CobwebTree::new(1, 2, cfg).unwrap();
        for v in [0.0, 0.5, 1.0] {
            tree.fit(&x1(v, 0)).unwrap();
        }
        let kids = tree.root().children.clone();
        assert_eq!(kids.len(), 3);
        (tree, kids)
    }

    #[test]
    fn merge_then_split_restores_children() {
        let (mut tree, kids) = three_child_tree();
        let before: Vec<u64> = kids.iter().map(|&c| tree.node(c).count()).collect();
        let root = tree.root_id();
        let merged = tree.merge_children(root, kids[0], kids[2]).unwrap();
        assert_eq!(tree.node(merged).count(), 2);
        tree.check_invariants().unwrap();
        tree.split_child(root, merged).unwrap();
        tree.check_invariants().unwrap();
        let mut after: Vec<NodeId> = tree.root().children.clone();
        after.sort();
        assert_eq!(after, kids);
        assert_eq!(after.iter().map(|&c| tree.node(c).count()).collect::<Vec<_>>(), before);
    }

    #[test]
    fn merge_and_split_errors() {
        let (mut tree, kids) = three_child_tree();
        let root = tree.root_id();
        assert!(tree.merge_children(root, kids[0], kids[0]).is_err());
        assert!(tree.split_child(root, kids[1]).is_err());
        assert!(tree.merge_children(kids[0], kids[1], kids[2]).is_err());
    }

    #[test]
    fn two_best_prefers_earlier_on_ties() {
        assert_eq!(two_best(&[1.0]), (0, None));
        assert_eq!(two_best(&[1.0, 1.0, 0.5]), (0, Some(1)));
        assert_eq!(two_best(&[0.1, 0.3, 0.2]), (1, Some(2)));
    }
}
