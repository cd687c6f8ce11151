//! Incremental Gaussian sufficiency statistics, label tables, entropies and
//! log-likelihoods shared by the concept tree and the evaluation code.
//!
//! Variances are population variances (`m2 / N`). Every variance consumed by
//! an entropy or a likelihood is floored at `acuity²`, so single-instance
//! concepts stay well defined. Differential entropies may be negative.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_2PI_E: f64 = LN_2PI + 1.0;

/// A flattened n-channel image with an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl Instance {
    pub fn new(features: Vec<f64>, label: Option<usize>) -> Self {
        Instance { features, label }
    }

    pub fn labeled(features: Vec<f64>, label: usize) -> Self {
        Instance::new(features, Some(label))
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Checks dimensionality, finiteness and the label range.
    pub fn validate(&self, dim: usize, classes: usize) -> Result<()> {
        check_dim(dim, self.features.len())?;
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("instance feature {i}")));
        }
        if let Some(label) = self.label {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        Ok(())
    }
}

/// Relative weight of the pixel block and of the label attribute in
/// entropies and category utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributeWeights {
    pub pixel: f64,
    pub label: f64,
}

impl Default for AttributeWeights {
    fn default() -> Self {
        AttributeWeights {
            pixel: 1.0,
            label: 1.0,
        }
    }
}

/// Everything needed to turn raw statistics into scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributeModel {
    /// Floor on the per-attribute standard deviation.
    pub acuity: f64,
    pub weights: AttributeWeights,
    /// Pseudo-count added to every class when forming `P(label | concept)`.
    pub label_smoothing: f64,
}

impl Default for AttributeModel {
    fn default() -> Self {
        AttributeModel {
            acuity: 0.25,
            weights: AttributeWeights::default(),
            label_smoothing: 1.0,
        }
    }
}

impl AttributeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.acuity > 0.0 && self.acuity.is_finite()) {
            return Err(Error::Config(format!("acuity must be positive, got {}", self.acuity)));
        }
        if self.label_smoothing < 0.0 || !self.label_smoothing.is_finite() {
            return Err(Error::Config("label_smoothing must be non-negative".into()));
        }
        if !(self.weights.pixel.is_finite() && self.weights.label.is_finite()) {
            return Err(Error::Config("attribute weights must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn variance_floor(&self) -> f64 {
        self.acuity * self.acuity
    }
}

/// Count, mean and sum of squared deviations per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl GaussianStats {
    pub fn new(dim: usize) -> Self {
        GaussianStats {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn from_stream<'a, I>(dim: usize, stream: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut stats = GaussianStats::new(dim);
        for x in stream {
            stats.update(x)?;
        }
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Absorbs one observation (Welford form of the mean/variance recurrence).
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((mean, m2), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *mean;
            *mean += delta * inv;
            *m2 += delta * (xi - *mean);
        }
        Ok(())
    }

    /// Statistics of the concatenation of both underlying streams.
    pub fn merge(&self, other: &GaussianStats) -> Result<GaussianStats> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &GaussianStats) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            self.clone_from(other);
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Population variance of attribute `i` (zero for an empty concept).
    #[inline]
    pub fn variance(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2[i] / self.count as f64).max(0.0)
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.variance(i)).collect()
    }

    /// Sum over attributes of `ln max(σ², acuity²)`.
    pub fn sum_log_variance(&self, floor: f64) -> f64 {
        let inv_n = 1.0 / self.count as f64;
        self.m2.iter().map(|m2| (m2 * inv_n).max(floor).ln()).sum()
    }

    /// Same as [`sum_log_variance`](Self::sum_log_variance) for the statistics
    /// that would result from absorbing `x`, without building them.
    pub fn sum_log_variance_with(&self, x: &[f64], floor: f64) -> f64 {
        let n1 = (self.count + 1) as f64;
        let inv = 1.0 / n1;
        let mut acc = 0.0;
        for ((mean, m2), &xi) in self.mean.iter().zip(&self.m2).zip(x) {
            let delta = xi - mean;
            let new_mean = mean + delta * inv;
            let new_m2 = m2 + delta * (xi - new_mean);
            acc += (new_m2 * inv).max(floor).ln();
        }
        acc
    }

    /// Σᵢ log N(xᵢ; μᵢ, max(σᵢ², acuity²)).
    pub fn log_likelihood(&self, x: &[f64], acuity: f64) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        if self.count == 0 {
            return Err(Error::EmptyConcept);
        }
        let floor = acuity * acuity;
        let inv_n = 1.0 / self.count as f64;
        let mut acc = 0.0;
        for ((mean, m2), &xi) in self.mean.iter().zip(&self.m2).zip(x) {
            let var = (m2 * inv_n).max(floor);
            let d = xi - mean;
            acc += var.ln() + d * d / var;
        }
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + acc))
    }
}

/// Per-class counts of the labeled instances a concept has absorbed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub counts: Vec<u64>,
}

impl LabelCounts {
    pub fn new(classes: usize) -> Self {
        LabelCounts {
            counts: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, label: usize) -> Result<()> {
        let classes = self.classes();
        let slot = self
            .counts
            .get_mut(label)
            .ok_or(Error::LabelOutOfRange { label, classes })?;
        *slot += 1;
        Ok(())
    }

    pub fn merge_from(&mut self, other: &LabelCounts) -> Result<()> {
        check_dim(self.classes(), other.classes())?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `P(label | concept)` with `pseudo` added to every class. With no
    /// counts and no smoothing the uniform distribution is returned.
    pub fn probabilities(&self, pseudo: f64) -> Vec<f64> {
        let k = self.classes();
        let denom = self.total() as f64 + pseudo * k as f64;
        if denom <= 0.0 {
            return vec![1.0 / k as f64; k];
        }
        self.counts
            .iter()
            .map(|&c| (c as f64 + pseudo) / denom)
            .collect()
    }

    /// Shannon entropy (nats) of the smoothed distribution, optionally with
    /// one extra observation of `extra`. An empty table without smoothing has
    /// entropy 0.
    pub fn entropy(&self, pseudo: f64, extra: Option<usize>) -> f64 {
        let total = self.total() + u64::from(extra.is_some());
        let denom = total as f64 + pseudo * self.classes() as f64;
        if denom <= 0.0 {
            return 0.0;
        }
        let mut h = 0.0;
        for (j, &c) in self.counts.iter().enumerate() {
            let c = c + u64::from(extra == Some(j));
            let p = (c as f64 + pseudo) / denom;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        h
    }

    /// Σⱼ P(label = j)² of the smoothed distribution.
    pub fn sum_squared_probability(&self, pseudo: f64, extra: Option<usize>) -> f64 {
        let total = self.total() + u64::from(extra.is_some());
        let denom = total as f64 + pseudo * self.classes() as f64;
        if denom <= 0.0 {
            return 0.0;
        }
        self.counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let p = ((c + u64::from(extra == Some(j))) as f64 + pseudo) / denom;
                p * p
            })
            .sum()
    }
}

/// Differential entropy of the pixel block plus the label entropy, each
/// weighted by [`AttributeWeights`].
pub fn node_entropy(stats: &GaussianStats, labels: &LabelCounts, model: &AttributeModel) -> Result<f64> {
    if stats.count == 0 {
        return Err(Error::EmptyConcept);
    }
    let pixel = gaussian_entropy(stats.dim(), stats.sum_log_variance(model.variance_floor()));
    Ok(model.weights.pixel * pixel + model.weights.label * labels.entropy(model.label_smoothing, None))
}

/// Entropy of the concept after hypothetically absorbing `x` (and its label).
pub fn node_entropy_with(
    stats: &GaussianStats,
    labels: &LabelCounts,
    x: &Instance,
    model: &AttributeModel,
) -> Result<f64> {
    check_dim(stats.dim(), x.dim())?;
    let pixel = gaussian_entropy(stats.dim(), stats.sum_log_variance_with(&x.features, model.variance_floor()));
    Ok(model.weights.pixel * pixel + model.weights.label * labels.entropy(model.label_smoothing, x.label))
}

#[inline]
pub(crate) fn gaussian_entropy(dim: usize, sum_log_var: f64) -> f64 {
    0.5 * (dim as f64 * LN_2PI_E + sum_log_var)
}

/// Expected density score `1 / (2√π σ)` of a floored Gaussian attribute, the
/// continuous stand-in for Σⱼ P(A = Vⱼ)².
#[inline]
pub(crate) fn expected_density(var: f64, floor: f64) -> f64 {
    const TWO_SQRT_PI: f64 = 3.544_907_701_811_032;
    1.0 / (TWO_SQRT_PI * var.max(floor).sqrt())
}
