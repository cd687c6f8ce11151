//! Hand-derived gradients of the training loss and the SGD step.
//!
//! Dense mode differentiates `−Σ_leaves p^L(c|x,y)·ℓ_c` exactly, where
//! `ℓ_c = log p(x,y|c) = log p(x|c) + log p(y|c)`.
//!
//! Sparse mode samples one root-to-leaf path, taking at each level the
//! argmax of the Gumbel-perturbed sibling logits `a_j = ℓ_j + log p(c_j|parent)`.
//! The forward loss is `−ℓ_leaf`. The backward pass is straight-through: the
//! hard one-hot choice `h` at each level is replaced by the relaxed sample
//! `y = softmax((a + g)/τ)`, with the loss read as `−Σ_j h_j ℓ_j` over the
//! sibling group. This gives
//!
//! ```text
//! ∂/∂a_m = −y_m (ℓ_m − Σ_j y_j ℓ_j) / τ
//! ```
//!
//! which is unchanged by constant shifts of the log-likelihoods. The values
//! `ℓ_j` of unselected siblings enter only as constants, so a sparse step
//! changes the prototypes and label logits of the sampled path nodes and the
//! prior logits of each sibling group along the path, and nothing else (see
//! [`CobwebNN::sparse_footprint`]).

use rand::seq::SliceRandom;
use rand::Rng;

use super::gumbel::{relaxed, sample_gumbel};
use super::{CobwebNN, Params, UpdateMode};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numeric::{argmax, log_softmax, softmax};
use crate::stats::Instance;

/// Examples per gradient partial sum. Partials are added in chunk order so
/// the result does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Sampled leaf-ward paths (node index per level); empty in dense mode.
    pub paths: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Params,
    pub paths: Vec<Vec<usize>>,
}

impl Params {
    fn scale(&mut self, s: f64) {
        for (_, _, g) in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn label_of(inst: &Instance) -> Result<usize> {
    inst.label
        .ok_or_else(|| Error::InvalidOperation("training instance has no label".into()))
}

impl CobwebNN {
    fn check_batch(&self, data: &[Instance]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidOperation("empty batch".into()));
        }
        for inst in data {
            inst.validate(self.dim, self.classes)?;
            label_of(inst)?;
        }
        if let Some((group, layer, i)) = self.params.first_non_finite() {
            return Err(Error::NonFinite(format!("{group}[{i}] at layer {layer}")));
        }
        Ok(())
    }

    fn noise_len(&self) -> usize {
        self.depth() * self.branching()
    }

    /// Gumbel noise for `n` examples, `depth × branching` draws each.
    pub fn draw_noise(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n * self.noise_len()).map(|_| sample_gumbel(rng)).collect()
    }

    /// Label probabilities of a node and `log p(x,y|c)`.
    fn node_terms(&self, layer: usize, c: usize, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let logits = self.label_logits(layer, c);
        let lp = log_softmax(logits);
        let probs = lp.iter().map(|v| v.exp()).collect();
        (self.log_px(layer, c, x) + lp[y], probs)
    }

    fn accumulate_node(&self, grad: &mut Params, layer: usize, c: usize, de: f64, x: &[f64], y: usize, probs: &[f64]) {
        if de == 0.0 {
            return;
        }
        let (d, k) = (self.dim, self.classes);
        let mu = self.prototype(layer, c);
        let g = &mut grad.layers[layer - 1];
        for ((gm, m), v) in g.prototypes[c * d..(c + 1) * d].iter_mut().zip(mu).zip(x) {
            *gm += de * (v - m);
        }
        for (j, (gl, p)) in g.label_logits[c * k..(c + 1) * k].iter_mut().zip(probs).enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            *gl += de * (onehot - p);
        }
    }

    /// Backprop through the sibling log-softmax `π = log_softmax(b_group)`.
    fn accumulate_priors(&self, grad: &mut Params, layer: usize, group: usize, dpi: &[f64]) {
        let bsz = self.branching();
        let logits = &self.params.layers[layer - 1].prior_logits[group * bsz..(group + 1) * bsz];
        let sm = softmax(logits);
        let total: f64 = dpi.iter().sum();
        let g = &mut grad.layers[layer - 1].prior_logits[group * bsz..(group + 1) * bsz];
        for ((gb, d), s) in g.iter_mut().zip(dpi).zip(sm) {
            *gb += d - s * total;
        }
    }

    fn example_dense(&self, x: &[f64], y: usize, grad: Option<&mut Params>) -> f64 {
        let bsz = self.branching();
        let depth = self.depth();
        let mut es = Vec::with_capacity(depth);
        let mut probs = Vec::with_capacity(depth);
        // Sibling-conditional probabilities softmax(a) and path log-probs.
        let mut conds: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut prev = vec![0.0];
        for layer in 1..=depth {
            let (e, pr): (Vec<f64>, Vec<Vec<f64>>) =
                (0..prev.len() * bsz).map(|c| self.node_terms(layer, c, x, y)).unzip();
            let mut cond = Vec::with_capacity(e.len());
            let mut logp = Vec::with_capacity(e.len());
            for (parent, logits) in self.params.layers[layer - 1].prior_logits.chunks_exact(bsz).enumerate() {
                let priors = log_softmax(logits);
                let a: Vec<f64> = (0..bsz).map(|k| e[parent * bsz + k] + priors[k]).collect();
                let la = log_softmax(&a);
                cond.extend(la.iter().map(|v| v.exp()));
                logp.extend(la.iter().map(|v| prev[parent] + v));
            }
            prev = logp;
            conds.push(cond);
            es.push(e);
            probs.push(pr);
        }
        let leaf_p: Vec<f64> = prev.iter().map(|v| v.exp()).collect();
        let loss = -leaf_p.iter().zip(&es[depth - 1]).map(|(p, l)| p * l).sum::<f64>();
        let Some(grad) = grad else {
            return loss;
        };

        // g = dLoss/d log p^l; the leaf layer also has the direct ℓ term.
        let mut g: Vec<f64> = leaf_p.iter().zip(&es[depth - 1]).map(|(p, l)| -p * l).collect();
        let mut direct: Vec<f64> = leaf_p.iter().map(|p| -p).collect();
        for layer in (1..=depth).rev() {
            let cond = &conds[layer - 1];
            let mut up = vec![0.0; g.len() / bsz];
            let mut da = vec![0.0; g.len()];
            for (parent, gs) in g.chunks_exact(bsz).enumerate() {
                let total: f64 = gs.iter().sum();
                up[parent] = total;
                for k in 0..bsz {
                    let c = parent * bsz + k;
                    da[c] = gs[k] - cond[c] * total;
                }
            }
            for (c, d) in da.iter().enumerate() {
                self.accumulate_node(grad, layer, c, d + direct[c], x, y, &probs[layer - 1][c]);
            }
            for (group, dpi) in da.chunks_exact(bsz).enumerate() {
                self.accumulate_priors(grad, layer, group, dpi);
            }
            g = up;
            direct = vec![0.0; g.len()];
        }
        loss
    }

    fn example_sparse(&self, x: &[f64], y: usize, noise: &[f64], grad: Option<&mut Params>) -> (f64, Vec<usize>) {
        let bsz = self.branching();
        let tau = self.config.temperature;
        let mut parent = 0;
        let mut path = Vec::with_capacity(self.depth());
        // Per level: sibling group, chosen slot, relaxed sample, sibling
        // values and the chosen node's label probabilities.
        let mut levels = Vec::with_capacity(self.depth());
        for layer in 1..=self.depth() {
            let priors = log_softmax(&self.params.layers[layer - 1].prior_logits[parent * bsz..(parent + 1) * bsz]);
            let (values, mut probs): (Vec<f64>, Vec<Vec<f64>>) =
                (0..bsz).map(|k| self.node_terms(layer, parent * bsz + k, x, y)).unzip();
            let a: Vec<f64> = values.iter().zip(&priors).map(|(v, p)| v + p).collect();
            let g = &noise[(layer - 1) * bsz..layer * bsz];
            let perturbed: Vec<f64> = a.iter().zip(g).map(|(ai, gi)| ai + gi).collect();
            let k = argmax(&perturbed);
            levels.push((parent, k, relaxed(&a, g, tau), values, probs.swap_remove(k)));
            parent = parent * bsz + k;
            path.push(parent);
        }
        let ell = levels.last().map(|l| l.3[l.1]).expect("depth >= 1");
        if let Some(grad) = grad {
            for (i, (group, k, ys, values, probs)) in levels.iter().enumerate() {
                let layer = i + 1;
                let mean: f64 = ys.iter().zip(values).map(|(yj, v)| yj * v).sum();
                let da: Vec<f64> = ys.iter().zip(values).map(|(yj, v)| -yj * (v - mean) / tau).collect();
                let direct = if layer == self.depth() { -1.0 } else { 0.0 };
                self.accumulate_node(grad, layer, group * bsz + k, da[*k] + direct, x, y, probs);
                self.accumulate_priors(grad, layer, *group, &da);
            }
        }
        (-ell, path)
    }

    fn chunked(
        &self,
        data: &[Instance],
        idx: &[usize],
        noise: Option<&[f64]>,
        with_grad: bool,
        exec: Execution,
    ) -> Gradient {
        let nl = self.noise_len();
        let chunks = idx.len().div_ceil(GRAD_CHUNK);
        let parts = exec.map_indexed(chunks, |ci| {
            let mut grad = with_grad.then(|| self.params.zeros_like());
            let mut loss = 0.0;
            let mut paths = Vec::new();
            for pos in ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(idx.len()) {
                let inst = &data[idx[pos]];
                let y = inst.label.expect("checked");
                match noise {
                    None => loss += self.example_dense(&inst.features, y, grad.as_mut()),
                    Some(n) => {
                        let (l, p) = self.example_sparse(&inst.features, y, &n[pos * nl..(pos + 1) * nl], grad.as_mut());
                        loss += l;
                        paths.push(p);
                    }
                }
            }
            (loss, grad, paths)
        });
        let mut total = Gradient {
            loss: 0.0,
            grad: self.params.zeros_like(),
            paths: Vec::new(),
        };
        for (loss, grad, paths) in parts {
            total.loss += loss;
            if let Some(g) = grad {
                total.grad.add_assign(&g);
            }
            total.paths.extend(paths);
        }
        let n = idx.len() as f64;
        total.loss /= n;
        total.grad.scale(1.0 / n);
        total
    }

    fn check_noise(&self, n: usize, noise: &[f64]) -> Result<()> {
        if noise.len() != n * self.noise_len() {
            return Err(Error::InvalidOperation(format!(
                "expected {} noise values, got {}",
                n * self.noise_len(),
                noise.len()
            )));
        }
        Ok(())
    }

    /// Mean dense loss over a labeled batch.
    pub fn loss_dense(&self, batch: &[Instance]) -> Result<f64> {
        self.check_batch(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(self.chunked(batch, &idx, None, false, Execution::Sequential).loss)
    }

    /// Mean sparse loss for given per-example Gumbel noise.
    pub fn loss_sparse(&self, batch: &[Instance], noise: &[f64]) -> Result<f64> {
        self.check_batch(batch)?;
        self.check_noise(batch.len(), noise)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(self.chunked(batch, &idx, Some(noise), false, Execution::Sequential).loss)
    }

    /// Loss in the configured mode; sparse mode draws its noise from `rng`.
    pub fn loss(&self, batch: &[Instance], rng: &mut impl Rng) -> Result<f64> {
        match self.config.mode {
            UpdateMode::Dense => self.loss_dense(batch),
            UpdateMode::Sparse => {
                let noise = self.draw_noise(batch.len(), rng);
                self.loss_sparse(batch, &noise)
            }
        }
    }

    /// Batch-mean loss and gradient. `noise` is required in sparse mode and
    /// ignored in dense mode.
    pub fn gradient(&self, batch: &[Instance], noise: Option<&[f64]>, exec: Execution) -> Result<Gradient> {
        self.check_batch(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        self.gradient_indexed(batch, &idx, noise, exec)
    }

    fn gradient_indexed(&self, data: &[Instance], idx: &[usize], noise: Option<&[f64]>, exec: Execution) -> Result<Gradient> {
        let noise = match self.config.mode {
            UpdateMode::Dense => None,
            UpdateMode::Sparse => {
                let n = noise.ok_or_else(|| Error::InvalidOperation("sparse gradient needs Gumbel noise".into()))?;
                self.check_noise(idx.len(), n)?;
                Some(n)
            }
        };
        let out = self.chunked(data, idx, noise, true, exec);
        if let Some((group, layer, i)) = out.grad.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient {group}[{i}] at layer {layer}")));
        }
        Ok(out)
    }

    /// `θ ← θ − α·g`. Entries with zero gradient are left untouched.
    pub fn apply_gradient(&mut self, grad: &Params) {
        let alpha = self.config.learning_rate;
        for (p, g) in self.params.groups_mut().into_iter().zip(grad.groups()) {
            for (v, d) in p.2.iter_mut().zip(g.2) {
                if *d != 0.0 {
                    *v -= alpha * d;
                }
            }
        }
    }

    /// One SGD step on a labeled batch. A non-finite gradient rejects the
    /// step and leaves the model unchanged.
    pub fn sgd_step(&mut self, batch: &[Instance], rng: &mut impl Rng, exec: Execution) -> Result<StepReport> {
        self.check_batch(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        self.step_indexed(batch, &idx, rng, exec)
    }

    fn step_indexed(&mut self, data: &[Instance], idx: &[usize], rng: &mut impl Rng, exec: Execution) -> Result<StepReport> {
        let noise = (self.config.mode == UpdateMode::Sparse).then(|| self.draw_noise(idx.len(), rng));
        let g = self.gradient_indexed(data, idx, noise.as_deref(), exec)?;
        self.apply_gradient(&g.grad);
        Ok(StepReport {
            loss: g.loss,
            paths: g.paths,
        })
    }

    /// `epochs_per_split` passes of shuffled minibatch SGD over `data`.
    /// Returns the mean step loss of each epoch.
    pub fn train_split(&mut self, data: &[Instance], rng: &mut impl Rng, exec: Execution) -> Result<Vec<f64>> {
        self.check_batch(data)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epochs = Vec::with_capacity(self.config.epochs_per_split);
        for _ in 0..self.config.epochs_per_split {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut steps = 0;
            for batch in order.chunks(self.config.batch_size) {
                total += self.step_indexed(data, batch, rng, exec)?.loss;
                steps += 1;
            }
            epochs.push(total / steps as f64);
        }
        Ok(epochs)
    }

    /// Mask (1.0 inside, 0.0 outside) of the parameters a sparse step along
    /// `paths` may change: prototypes and label logits of every path node and
    /// the prior logits of each sibling group the path passes through.
    pub fn sparse_footprint(&self, paths: &[Vec<usize>]) -> Params {
        let mut mask = self.params.zeros_like();
        let (d, k, b) = (self.dim, self.classes, self.branching());
        for path in paths {
            for (i, &c) in path.iter().enumerate() {
                let l = &mut mask.layers[i];
                l.prototypes[c * d..(c + 1) * d].fill(1.0);
                l.label_logits[c * k..(c + 1) * k].fill(1.0);
                let group = c / b;
                l.prior_logits[group * b..(group + 1) * b].fill(1.0);
            }
        }
        mask
    }
}
