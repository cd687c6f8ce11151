//! Fully connected baseline (one ReLU hidden layer, softmax cross-entropy)
//! and the replay buffer used to mitigate its forgetting.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Execution;
use crate::numeric::{log_softmax, softmax};
use crate::stats::Instance;

const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_split: usize,
    pub replay_capacity: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 128,
            learning_rate: 0.1,
            batch_size: 64,
            epochs_per_split: 5,
            replay_capacity: 1000,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Weights are row-major: `w1` is `hidden × dim`, `w2` is `classes × hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    fn zeros_like(&self) -> Self {
        MlpParams {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn axpy(&mut self, a: f64, other: &MlpParams) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (v, d) in t.iter_mut().zip(o) {
                *v += a * d;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub dim: usize,
    pub classes: usize,
    pub params: MlpParams,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dim: usize, classes: usize, config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if dim == 0 || classes == 0 {
            return Err(Error::Config("dim and classes must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut glorot = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let params = MlpParams {
            w1: glorot(dim, h),
            b1: vec![0.0; h],
            w2: glorot(h, classes),
            b2: vec![0.0; classes],
        };
        Ok(Mlp {
            config,
            dim,
            classes,
            params,
        })
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        p.w1.chunks_exact(self.dim)
            .zip(&p.b1)
            .map(|(row, b)| (b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).max(0.0))
            .collect()
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let p = &self.params;
        p.w2.chunks_exact(self.config.hidden)
            .zip(&p.b2)
            .map(|(row, b)| b + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(softmax(&self.logits(&self.hidden(x))))
    }

    fn example(&self, x: &[f64], y: usize, grad: Option<&mut MlpParams>) -> f64 {
        let h = self.hidden(x);
        let lp = log_softmax(&self.logits(&h));
        let loss = -lp[y];
        if let Some(g) = grad {
            let hid = self.config.hidden;
            let mut dh = vec![0.0; hid];
            for (k, l) in lp.iter().enumerate() {
                let d = l.exp() - if k == y { 1.0 } else { 0.0 };
                g.b2[k] += d;
                let row = &self.params.w2[k * hid..(k + 1) * hid];
                for (j, ((gw, w), hj)) in g.w2[k * hid..(k + 1) * hid].iter_mut().zip(row).zip(&h).enumerate() {
                    *gw += d * hj;
                    dh[j] += d * w;
                }
            }
            for (j, d) in dh.iter().enumerate() {
                if h[j] <= 0.0 {
                    continue;
                }
                g.b1[j] += d;
                for (gw, v) in g.w1[j * self.dim..(j + 1) * self.dim].iter_mut().zip(x) {
                    *gw += d * v;
                }
            }
        }
        loss
    }

    fn check_batch(&self, data: &[Instance]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidOperation("empty batch".into()));
        }
        for inst in data {
            inst.validate(self.dim, self.classes)?;
            if inst.label.is_none() {
                return Err(Error::InvalidOperation("training instance has no label".into()));
            }
        }
        Ok(())
    }

    fn gradient_indexed(&self, data: &[Instance], idx: &[usize], exec: Execution) -> (f64, MlpParams) {
        let chunks = idx.len().div_ceil(GRAD_CHUNK);
        let parts = exec.map_indexed(chunks, |ci| {
            let mut g = self.params.zeros_like();
            let mut loss = 0.0;
            for &i in &idx[ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(idx.len())] {
                loss += self.example(&data[i].features, data[i].label.expect("checked"), Some(&mut g));
            }
            (loss, g)
        });
        let mut total = self.params.zeros_like();
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            total.axpy(1.0, &g);
        }
        let n = idx.len() as f64;
        for t in total.tensors_mut() {
            t.iter_mut().for_each(|v| *v /= n);
        }
        (loss / n, total)
    }

    /// Mean cross-entropy over a labeled batch.
    pub fn loss(&self, batch: &[Instance]) -> Result<f64> {
        self.check_batch(batch)?;
        let total: f64 = batch.iter().map(|i| self.example(&i.features, i.label.unwrap(), None)).sum();
        Ok(total / batch.len() as f64)
    }

    pub fn gradient(&self, batch: &[Instance], exec: Execution) -> Result<(f64, MlpParams)> {
        self.check_batch(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(self.gradient_indexed(batch, &idx, exec))
    }

    fn step_indexed(&mut self, data: &[Instance], idx: &[usize], exec: Execution) -> Result<f64> {
        let (loss, g) = self.gradient_indexed(data, idx, exec);
        if !g.is_finite() {
            return Err(Error::NonFinite("mlp gradient".into()));
        }
        self.params.axpy(-self.config.learning_rate, &g);
        Ok(loss)
    }

    /// `epochs_per_split` passes of shuffled minibatch SGD; returns the mean
    /// step loss per epoch.
    pub fn train_split(&mut self, data: &[Instance], rng: &mut impl Rng, exec: Execution) -> Result<Vec<f64>> {
        self.check_batch(data)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epochs = Vec::new();
        for _ in 0..self.config.epochs_per_split {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut steps = 0;
            for batch in order.chunks(self.config.batch_size) {
                total += self.step_indexed(data, batch, exec)?;
                steps += 1;
            }
            epochs.push(total / steps as f64);
        }
        Ok(epochs)
    }
}

pub const MLP_SCHEMA_VERSION: u32 = 1;
const MLP_SCHEMA: &str = "cobweb-mlp";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema: String,
    version: u32,
    config: MlpConfig,
    dim: usize,
    classes: usize,
    params: MlpParams,
}

impl Mlp {
    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            schema: MLP_SCHEMA.into(),
            version: MLP_SCHEMA_VERSION,
            config: self.config,
            dim: self.dim,
            classes: self.classes,
            params: self.params.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("schema").and_then(|s| s.as_str()) != Some(MLP_SCHEMA) {
            return Err(Error::Format(format!("not a {MLP_SCHEMA} checkpoint")));
        }
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != MLP_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: MLP_SCHEMA_VERSION,
                found,
            });
        }
        let doc: Document = serde_json::from_value(value)?;
        doc.config.validate()?;
        let (d, h, k) = (doc.dim, doc.config.hidden, doc.classes);
        let p = &doc.params;
        if p.w1.len() != h * d || p.b1.len() != h || p.w2.len() != k * h || p.b2.len() != k {
            return Err(Error::Format("mlp tensors have inconsistent shapes".into()));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("mlp checkpoint".into()));
        }
        Ok(Mlp {
            config: doc.config,
            dim: d,
            classes: k,
            params: doc.params,
        })
    }
}

/// Fixed-capacity store of past labeled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Instance>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Instance] {
        &self.items
    }

    /// The current split followed by the buffered examples.
    pub fn training_set(&self, split: &[Instance]) -> Vec<Instance> {
        split.iter().chain(&self.items).cloned().collect()
    }

    /// Replaces the contents with `min(capacity, |buffer ∪ split|)` examples
    /// drawn uniformly without replacement from the buffer and the split.
    pub fn refresh(&mut self, split: &[Instance], rng: &mut impl Rng) {
        let union: Vec<&Instance> = self.items.iter().chain(split).collect();
        let keep = self.capacity.min(union.len());
        let picked = index::sample(rng, union.len(), keep);
        self.items = picked.iter().map(|i| union[i].clone()).collect();
    }
}
