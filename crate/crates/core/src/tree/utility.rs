//! Category utility, in its probability-theoretic and information-theoretic
//! forms.
//!
//! Both are written as `Σₖ P(Cₖ) [Q(Cₖ) − Q(parent)] / n` where `Q` is a
//! per-concept quality: the expected density score for the probability form
//! and the negated entropy for the information form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{expected_density, gaussian_entropy, AttributeModel, GaussianStats, Instance, LabelCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    Probability,
    Information,
}

/// Anything carrying a concept's sufficiency statistics and label table.
pub trait Summary {
    fn stats(&self) -> &GaussianStats;
    fn labels(&self) -> &LabelCounts;
}

/// A free-standing concept summary, handy for building partitions by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub stats: GaussianStats,
    pub labels: LabelCounts,
}

impl Summary for Concept {
    fn stats(&self) -> &GaussianStats {
        &self.stats
    }
    fn labels(&self) -> &LabelCounts {
        &self.labels
    }
}

/// Computes concept qualities under a fixed utility kind and attribute model.
#[derive(Debug, Clone, Copy)]
pub struct Scorer {
    pub kind: UtilityKind,
    pub model: AttributeModel,
}

impl Scorer {
    pub fn new(kind: UtilityKind, model: AttributeModel) -> Self {
        Scorer { kind, model }
    }

    pub fn quality(&self, stats: &GaussianStats, labels: &LabelCounts) -> Result<f64> {
        if stats.count == 0 {
            return Err(Error::EmptyConcept);
        }
        let floor = self.model.variance_floor();
        let w = self.model.weights;
        let pseudo = self.model.label_smoothing;
        Ok(match self.kind {
            UtilityKind::Information => {
                let pixel = gaussian_entropy(stats.dim(), stats.sum_log_variance(floor));
                -(w.pixel * pixel + w.label * labels.entropy(pseudo, None))
            }
            UtilityKind::Probability => {
                let pixel: f64 = (0..stats.dim()).map(|i| expected_density(stats.variance(i), floor)).sum();
                w.pixel * pixel + w.label * labels.sum_squared_probability(pseudo, None)
            }
        })
    }

    /// Quality of the concept after absorbing `x`.
    pub fn quality_with(&self, stats: &GaussianStats, labels: &LabelCounts, x: &Instance) -> f64 {
        let floor = self.model.variance_floor();
        let w = self.model.weights;
        let pseudo = self.model.label_smoothing;
        match self.kind {
            UtilityKind::Information => {
                let pixel = gaussian_entropy(stats.dim(), stats.sum_log_variance_with(&x.features, floor));
                -(w.pixel * pixel + w.label * labels.entropy(pseudo, x.label))
            }
            UtilityKind::Probability => {
                let inv = 1.0 / (stats.count + 1) as f64;
                let mut pixel = 0.0;
                for ((mean, m2), &xi) in stats.mean.iter().zip(&stats.m2).zip(&x.features) {
                    let delta = xi - mean;
                    let new_m2 = m2 + delta * (xi - (mean + delta * inv));
                    pixel += expected_density(new_m2 * inv, floor);
                }
                w.pixel * pixel + w.label * labels.sum_squared_probability(pseudo, x.label)
            }
        }
    }

    /// Quality of a fresh concept holding only `x`.
    pub fn quality_singleton(&self, x: &Instance, classes: usize) -> f64 {
        let floor = self.model.variance_floor();
        let w = self.model.weights;
        let labels = LabelCounts::new(classes);
        let pseudo = self.model.label_smoothing;
        let d = x.dim() as f64;
        match self.kind {
            UtilityKind::Information => {
                let pixel = gaussian_entropy(x.dim(), d * floor.ln());
                -(w.pixel * pixel + w.label * labels.entropy(pseudo, x.label))
            }
            UtilityKind::Probability => {
                w.pixel * d * expected_density(0.0, floor) + w.label * labels.sum_squared_probability(pseudo, x.label)
            }
        }
    }
}

/// `Σₖ (countₖ / parent_count) (qₖ − parent_q) / n` over `(count, quality)` parts.
pub(crate) fn utility_from_parts(parent_count: f64, parent_q: f64, parts: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for (count, q) in parts {
        acc += count / parent_count * (q - parent_q);
        n += 1;
    }
    acc / n as f64
}

fn category_utility<S: Summary>(kind: UtilityKind, parent: &S, partition: &[&S], model: &AttributeModel) -> Result<f64> {
    if partition.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let total: u64 = partition.iter().map(|c| c.stats().count).sum();
    if total != parent.stats().count {
        return Err(Error::InvalidOperation(format!(
            "partition counts sum to {total}, parent has {}",
            parent.stats().count
        )));
    }
    let scorer = Scorer::new(kind, *model);
    let parent_q = scorer.quality(parent.stats(), parent.labels())?;
    let mut parts = Vec::with_capacity(partition.len());
    for child in partition {
        parts.push((child.stats().count as f64, scorer.quality(child.stats(), child.labels())?));
    }
    Ok(utility_from_parts(parent.stats().count as f64, parent_q, parts))
}

/// Probability-theoretic category utility with the continuous
/// `1 / (2√π σ)` expected-score term per attribute.
pub fn category_utility_prob<S: Summary>(parent: &S, partition: &[&S], model: &AttributeModel) -> Result<f64> {
    category_utility(UtilityKind::Probability, parent, partition, model)
}

/// Information-theoretic category utility: mean weighted entropy reduction.
pub fn category_utility_info<S: Summary>(parent: &S, partition: &[&S], model: &AttributeModel) -> Result<f64> {
    category_utility(UtilityKind::Information, parent, partition, model)
}
