//! Best-first multi-concept prediction over a frozen tree.
//!
//! Nodes are ranked by their collocation `s(c) = P(c|x) P(x|c)`, kept in log
//! space. `P(c|x)` is the product, down the path, of Bayes posteriors
//! normalized over each expansion's children, with `P(c) ∝ count(c)`; the
//! root has `P(root|x) = 1`. The `n_max` best nodes are expanded and their
//! smoothed label distributions are combined with softmax weights over the
//! (signed) log collocation scores.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Execution;
use crate::numeric::{log_sum_exp, softmax, LN_2PI};
use crate::tree::{CobwebTree, NodeId};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSign {
    /// Softmax over `−s(c)`.
    Negative,
    /// Softmax over `+s(c)`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    Multi,
    GreedyLeaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub n_max: usize,
    pub weight_sign: WeightSign,
    pub mode: PredictMode,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            n_max: 30,
            weight_sign: WeightSign::Negative,
            mode: PredictMode::Multi,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierEntry {
    pub node: NodeId,
    pub log_score: f64,
    /// log P(c|x) along the path.
    pub log_path: f64,
}

impl Eq for FrontierEntry {}

impl Ord for FrontierEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_score
            .total_cmp(&other.log_score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-node precisions, normalizers and label distributions precomputed from
/// a frozen tree.
pub struct Predictor<'t> {
    tree: &'t CobwebTree,
    precision: Vec<Vec<f64>>,
    log_norm: Vec<f64>,
    label_probs: Vec<Vec<f64>>,
}

impl<'t> Predictor<'t> {
    pub fn new(tree: &'t CobwebTree) -> Self {
        let attrs = tree.config().attributes;
        let floor = attrs.variance_floor();
        let bound = tree.id_bound();
        let mut precision = vec![Vec::new(); bound];
        let mut log_norm = vec![0.0; bound];
        let mut label_probs = vec![Vec::new(); bound];
        for node in tree.nodes() {
            let i = node.id as usize;
            let mut sum_ln = 0.0;
            let inv_n = 1.0 / node.count().max(1) as f64;
            precision[i] = node
                .stats
                .m2
                .iter()
                .map(|m2| {
                    let var = (m2 * inv_n).max(floor);
                    sum_ln += var.ln();
                    1.0 / var
                })
                .collect();
            log_norm[i] = -0.5 * (tree.dim() as f64 * LN_2PI + sum_ln);
            label_probs[i] = node.labels.probabilities(attrs.label_smoothing);
        }
        Predictor {
            tree,
            precision,
            log_norm,
            label_probs,
        }
    }

    pub fn tree(&self) -> &CobwebTree {
        self.tree
    }

    /// log P(x | c) under the floored diagonal Gaussian.
    pub fn log_likelihood(&self, node: NodeId, x: &[f64]) -> f64 {
        let i = node as usize;
        let mean = &self.tree.node(node).stats.mean;
        let mut acc = 0.0;
        for ((m, p), xi) in mean.iter().zip(&self.precision[i]).zip(x) {
            let d = xi - m;
            acc += d * d * p;
        }
        self.log_norm[i] - 0.5 * acc
    }

    pub fn label_distribution(&self, node: NodeId) -> &[f64] {
        &self.label_probs[node as usize]
    }

    /// Frontier entries for the children of `parent`, given the parent's
    /// log path posterior.
    pub fn expand(&self, parent: NodeId, parent_log_path: f64, x: &[f64]) -> Vec<FrontierEntry> {
        let children = &self.tree.node(parent).children;
        let lls: Vec<f64> = children.iter().map(|&c| self.log_likelihood(c, x)).collect();
        let logits: Vec<f64> = children
            .iter()
            .zip(&lls)
            .map(|(&c, ll)| (self.tree.node(c).count() as f64).ln() + ll)
            .collect();
        let norm = log_sum_exp(&logits);
        children
            .iter()
            .zip(lls.iter().zip(&logits))
            .map(|(&node, (ll, logit))| {
                let log_path = parent_log_path + logit - norm;
                FrontierEntry {
                    node,
                    log_score: log_path + ll,
                    log_path,
                }
            })
            .collect()
    }

    fn root_entry(&self, x: &[f64]) -> FrontierEntry {
        let root = self.tree.root_id();
        FrontierEntry {
            node: root,
            log_score: self.log_likelihood(root, x),
            log_path: 0.0,
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        check_dim(self.tree.dim(), x.len())?;
        if self.tree.is_empty() {
            return Err(Error::EmptyConcept);
        }
        Ok(())
    }

    /// log P(c|x) + log P(x|c) for any node, recomputing the path posterior
    /// from the root.
    pub fn collocation_log_score(&self, node: NodeId, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        if self.tree.get(node).is_none_or(|n| n.count() == 0) {
            return Err(Error::EmptyConcept);
        }
        let mut path = vec![node];
        while let Some(parent) = self.tree.node(*path.last().unwrap()).parent {
            path.push(parent);
        }
        path.reverse();
        let mut entry = self.root_entry(x);
        for &next in &path[1..] {
            entry = self
                .expand(entry.node, entry.log_path, x)
                .into_iter()
                .find(|e| e.node == next)
                .expect("child on path");
        }
        Ok(entry.log_score)
    }

    /// Nodes expanded by best-first search, in expansion order.
    pub fn expanded(&self, x: &[f64], n_max: usize) -> Result<Vec<FrontierEntry>> {
        self.check(x)?;
        let mut frontier = BinaryHeap::new();
        frontier.push(self.root_entry(x));
        let mut expanded = Vec::with_capacity(n_max);
        while expanded.len() < n_max {
            let Some(entry) = frontier.pop() else { break };
            frontier.extend(self.expand(entry.node, entry.log_path, x));
            expanded.push(entry);
        }
        Ok(expanded)
    }

    pub fn predict(&self, x: &[f64], cfg: &PredictConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        match cfg.mode {
            PredictMode::GreedyLeaf => self.predict_greedy_leaf(x),
            PredictMode::Multi => {
                let expanded = self.expanded(x, cfg.n_max)?;
                let sign = match cfg.weight_sign {
                    WeightSign::Negative => -1.0,
                    WeightSign::Positive => 1.0,
                };
                let scores: Vec<f64> = expanded.iter().map(|e| sign * e.log_score).collect();
                let weights = softmax(&scores);
                let mut out = vec![0.0; self.tree.classes()];
                for (entry, w) in expanded.iter().zip(&weights) {
                    for (o, p) in out.iter_mut().zip(self.label_distribution(entry.node)) {
                        *o += w * p;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Single path descent by highest collocation; returns the reached
    /// leaf's smoothed label distribution.
    pub fn predict_greedy_leaf(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.label_distribution(self.greedy_leaf(x)?).to_vec())
    }

    pub fn greedy_leaf(&self, x: &[f64]) -> Result<NodeId> {
        self.check(x)?;
        let mut entry = self.root_entry(x);
        while !self.tree.node(entry.node).is_leaf() {
            entry = self
                .expand(entry.node, entry.log_path, x)
                .into_iter()
                .max()
                .expect("internal node has children");
        }
        Ok(entry.node)
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>], cfg: &PredictConfig, exec: Execution) -> Result<Vec<Vec<f64>>> {
        exec.map(xs, |x| self.predict(x, cfg)).into_iter().collect()
    }
}

/// Convenience wrapper building a [`Predictor`] for a single query.
pub fn predict(tree: &CobwebTree, x: &[f64], cfg: &PredictConfig) -> Result<Vec<f64>> {
    Predictor::new(tree).predict(x, cfg)
}

pub fn predict_greedy_leaf(tree: &CobwebTree, x: &[f64]) -> Result<Vec<f64>> {
    Predictor::new(tree).predict_greedy_leaf(x)
}

pub fn collocation_log_score(tree: &CobwebTree, node: NodeId, x: &[f64]) -> Result<f64> {
    Predictor::new(tree).collocation_log_score(node, x)
}
