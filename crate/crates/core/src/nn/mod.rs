//! CobwebNN: a complete `B`-ary hierarchy of depth `L` trained by gradient
//! descent, plus the fully connected replay baseline.
//!
//! Every non-root node `c` owns a prototype `μ_c` (unit-variance Gaussian
//! likelihood `p(x|c)`), a prior logit `b_c` (softmax over siblings gives
//! `p(c|parent)`) and label logits `l_c` (softmax gives `p(y|c)`). Path
//! log-probabilities are built layer by layer,
//!
//! ```text
//! a_c = log p(x|c) + log p(c|parent)
//! log p(c|x) = log p(parent|x) + a_c − logsumexp(a over the siblings of c)
//! ```
//!
//! so every layer sums to one and a leaf's probability is the product of the
//! sibling choices along its path, which is exactly the distribution the
//! sparse mode samples from. The label distribution marginalizes over the
//! leaves. During training
//! `log p(x|c)` is replaced by `log p(x|c) + log p(y|c)`.

mod checkpoint;
mod grad;
pub mod gumbel;
pub mod mlp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{log_softmax, softmax, LN_2PI};

pub use checkpoint::NN_SCHEMA_VERSION;
pub use grad::{Gradient, StepReport};
pub use gumbel::{gumbel_softmax, sample_gumbel};
pub use mlp::{Mlp, MlpConfig, ReplayBuffer, MLP_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnConfig {
    pub depth: usize,
    pub branching: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_split: usize,
    pub mode: UpdateMode,
    /// Standard deviation of the prototype noise around the data mean.
    pub init_noise: f64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            depth: 3,
            branching: 4,
            temperature: 1.0,
            learning_rate: 0.01,
            batch_size: 64,
            epochs_per_split: 5,
            mode: UpdateMode::Sparse,
            init_noise: 0.1,
        }
    }
}

impl NnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.branching < 1 {
            return Err(Error::Config("depth and branching must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.branching.checked_pow(self.depth as u32).is_none_or(|w| w > 1 << 20) {
            return Err(Error::Config("tree too large".into()));
        }
        Ok(())
    }
}

/// Parameters of one level of the hierarchy (`width = B^level` nodes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub width: usize,
    /// `width × dim`, row-major.
    pub prototypes: Vec<f64>,
    pub prior_logits: Vec<f64>,
    /// `width × classes`, row-major.
    pub label_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    fn zeros(dim: usize, classes: usize, depth: usize, branching: usize) -> Params {
        let layers = (1..=depth)
            .map(|l| {
                let width = branching.pow(l as u32);
                LayerParams {
                    width,
                    prototypes: vec![0.0; width * dim],
                    prior_logits: vec![0.0; width],
                    label_logits: vec![0.0; width * classes],
                }
            })
            .collect();
        Params { layers }
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    width: l.width,
                    prototypes: vec![0.0; l.prototypes.len()],
                    prior_logits: vec![0.0; l.prior_logits.len()],
                    label_logits: vec![0.0; l.label_logits.len()],
                })
                .collect(),
        }
    }

    /// Every parameter group as `(name, layer, values)`.
    pub fn groups(&self) -> Vec<(&'static str, usize, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(("prototypes", i + 1, l.prototypes.as_slice()));
            out.push(("prior_logits", i + 1, l.prior_logits.as_slice()));
            out.push(("label_logits", i + 1, l.label_logits.as_slice()));
        }
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, usize, &mut [f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push(("prototypes", i + 1, l.prototypes.as_mut_slice()));
            out.push(("prior_logits", i + 1, l.prior_logits.as_mut_slice()));
            out.push(("label_logits", i + 1, l.label_logits.as_mut_slice()));
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.2.iter_mut().zip(b.2) {
                *x += y;
            }
        }
    }

    /// First non-finite entry as `(group, layer, index)`.
    pub fn first_non_finite(&self) -> Option<(&'static str, usize, usize)> {
        self.groups()
            .into_iter()
            .find_map(|(name, layer, v)| v.iter().position(|x| !x.is_finite()).map(|i| (name, layer, i)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CobwebNN {
    pub config: NnConfig,
    pub dim: usize,
    pub classes: usize,
    pub params: Params,
}

impl CobwebNN {
    /// Prototypes start at `init_mean` plus Gaussian noise; logits at zero.
    pub fn new(dim: usize, classes: usize, config: NnConfig, init_mean: &[f64], seed: u64) -> Result<Self> {
        config.validate()?;
        check_dim(dim, init_mean.len())?;
        if classes == 0 {
            return Err(Error::Config("classes must be at least 1".into()));
        }
        let mut params = Params::zeros(dim, classes, config.depth, config.branching);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, config.init_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        for layer in &mut params.layers {
            for row in layer.prototypes.chunks_exact_mut(dim) {
                for (p, m) in row.iter_mut().zip(init_mean) {
                    *p = m + noise.sample(&mut rng);
                }
            }
        }
        Ok(CobwebNN {
            config,
            dim,
            classes,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.groups().iter().map(|g| g.2.len()).sum()
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn branching(&self) -> usize {
        self.config.branching
    }

    pub(crate) fn prototype(&self, layer: usize, node: usize) -> &[f64] {
        let l = &self.params.layers[layer - 1];
        &l.prototypes[node * self.dim..(node + 1) * self.dim]
    }

    pub(crate) fn label_logits(&self, layer: usize, node: usize) -> &[f64] {
        let l = &self.params.layers[layer - 1];
        &l.label_logits[node * self.classes..(node + 1) * self.classes]
    }

    /// `log N(x; μ_c, I)`.
    pub fn log_px(&self, layer: usize, node: usize, x: &[f64]) -> f64 {
        let sq: f64 = self.prototype(layer, node).iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
        -0.5 * (sq + self.dim as f64 * LN_2PI)
    }

    pub fn log_py(&self, layer: usize, node: usize, y: usize) -> f64 {
        log_softmax(self.label_logits(layer, node))[y]
    }

    /// Path log-probabilities `log p^l(c | x[, y])` for
    /// `l = 1..=L`.
    pub fn path_log_probs(&self, x: &[f64], label: Option<usize>) -> Result<Vec<Vec<f64>>> {
        self.check_input(x, label)?;
        let mut prev = vec![0.0];
        let mut out = Vec::with_capacity(self.depth());
        for layer in 1..=self.depth() {
            let logp: Vec<f64> = (0..prev.len())
                .flat_map(|parent| {
                    let base = prev[parent];
                    log_softmax(&self.group_logits(layer, parent, x, label))
                        .into_iter()
                        .map(move |v| base + v)
                })
                .collect();
            out.push(logp.clone());
            prev = logp;
        }
        Ok(out)
    }

    /// Dense inference: `Σ_leaves p^L(c|x) p(y|c)`.
    pub fn predict_dense(&self, x: &[f64]) -> Result<Vec<f64>> {
        let paths = self.path_log_probs(x, None)?;
        let leaves = paths.last().expect("depth >= 1");
        let mut out = vec![0.0; self.classes];
        for (c, lp) in leaves.iter().enumerate() {
            let w = lp.exp();
            for (o, p) in out.iter_mut().zip(softmax(self.label_logits(self.depth(), c))) {
                *o += w * p;
            }
        }
        Ok(out)
    }

    /// Sparse inference: one root-to-leaf path sampled by Gumbel-Softmax
    /// among siblings at each level; returns that leaf's `p(y|c)`.
    pub fn predict_sparse(&self, x: &[f64], rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
        let noise: Vec<f64> = (0..self.depth() * self.branching()).map(|_| sample_gumbel(rng)).collect();
        self.predict_sparse_with_noise(x, &noise)
    }

    /// Sparse inference with caller-supplied `depth × branching` Gumbel draws.
    pub fn predict_sparse_with_noise(&self, x: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x, None)?;
        if noise.len() != self.depth() * self.branching() {
            return Err(Error::InvalidOperation("wrong number of Gumbel draws".into()));
        }
        let path = self.sample_path(x, None, noise);
        Ok(softmax(self.label_logits(self.depth(), *path.last().unwrap())))
    }

    pub fn forward_infer(&self, x: &[f64], rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
        match self.config.mode {
            UpdateMode::Dense => self.predict_dense(x),
            UpdateMode::Sparse => self.predict_sparse(x, rng),
        }
    }

    /// Sibling-group logits `log p(x[,y]|c) + log p(c|parent)` at `layer`
    /// for the children of `parent`.
    pub(crate) fn group_logits(&self, layer: usize, parent: usize, x: &[f64], label: Option<usize>) -> Vec<f64> {
        let b = self.branching();
        let logits = &self.params.layers[layer - 1].prior_logits[parent * b..(parent + 1) * b];
        let priors = log_softmax(logits);
        (0..b)
            .map(|k| {
                let c = parent * b + k;
                let mut e = self.log_px(layer, c, x);
                if let Some(y) = label {
                    e += self.log_py(layer, c, y);
                }
                e + priors[k]
            })
            .collect()
    }

    /// Hard path chosen by `argmax(logits + noise)` at each level; `noise`
    /// holds `depth × branching` Gumbel draws.
    pub fn sample_path(&self, x: &[f64], label: Option<usize>, noise: &[f64]) -> Vec<usize> {
        let b = self.branching();
        let mut parent = 0;
        let mut path = Vec::with_capacity(self.depth());
        for layer in 1..=self.depth() {
            let logits = self.group_logits(layer, parent, x, label);
            let g = &noise[(layer - 1) * b..layer * b];
            let perturbed: Vec<f64> = logits.iter().zip(g).map(|(a, n)| a + n).collect();
            let k = crate::numeric::argmax(&perturbed);
            parent = parent * b + k;
            path.push(parent);
        }
        path
    }

    fn check_input(&self, x: &[f64], label: Option<usize>) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if let Some(y) = label {
            if y >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: self.classes,
                });
            }
        }
        if let Some((group, layer, i)) = self.params.first_non_finite() {
            return Err(Error::NonFinite(format!("{group}[{i}] at layer {layer}")));
        }
        Ok(())
    }
}
