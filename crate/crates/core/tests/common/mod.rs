//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use cobweb_lab::nn::CobwebNN;
use cobweb_lab::Instance;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Two-pass mean and population variance.
pub fn two_pass(stream: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = stream.len() as f64;
    let d = stream[0].len();
    let mean: Vec<f64> = (0..d).map(|i| stream.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let var = (0..d)
        .map(|i| stream.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `log p(x|c) + log p(y|c)` straight from the parameter arrays.
pub fn node_ell(m: &CobwebNN, layer: usize, c: usize, x: &[f64], y: usize) -> f64 {
    let l = &m.params.layers[layer - 1];
    let mu = &l.prototypes[c * m.dim..(c + 1) * m.dim];
    let sq: f64 = mu.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
    let py = softmax(&l.label_logits[c * m.classes..(c + 1) * m.classes])[y];
    -0.5 * sq - 0.5 * m.dim as f64 * LN_2PI + py.ln()
}

fn prior(m: &CobwebNN, layer: usize, c: usize) -> f64 {
    let b = m.config.branching;
    let g = c / b;
    softmax(&m.params.layers[layer - 1].prior_logits[g * b..(g + 1) * b])[c % b]
}

/// Leaf probabilities by recursive enumeration of root-to-leaf paths.
fn leaf_probs(m: &CobwebNN, x: &[f64], y: usize) -> Vec<f64> {
    let b = m.config.branching;
    let mut probs = vec![1.0];
    for layer in 1..=m.config.depth {
        let mut next = Vec::new();
        for (parent, pp) in probs.iter().enumerate() {
            let w: Vec<f64> = (0..b)
                .map(|k| {
                    let c = parent * b + k;
                    node_ell(m, layer, c, x, y).exp() * prior(m, layer, c)
                })
                .collect();
            let z: f64 = w.iter().sum();
            next.extend(w.iter().map(|v| pp * v / z));
        }
        probs = next;
    }
    probs
}

pub fn dense_loss(m: &CobwebNN, batch: &[Instance]) -> f64 {
    let depth = m.config.depth;
    batch
        .iter()
        .map(|inst| {
            let y = inst.label.unwrap();
            leaf_probs(m, &inst.features, y)
                .iter()
                .enumerate()
                .map(|(c, p)| -p * node_ell(m, depth, c, &inst.features, y))
                .sum::<f64>()
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Straight-through surrogate
/// `−ℓ_leaf(θ) − Σ_levels Σ_j (y_j(θ) − y_j(θ₀))·ℓ_j(θ₀)` where the hard path,
/// the sibling values `ℓ_j` and the selection logits of unselected siblings
/// are frozen at `theta0`.
pub fn sparse_surrogate(m: &CobwebNN, theta0: &CobwebNN, batch: &[Instance], noise: &[f64]) -> f64 {
    let (b, depth, tau) = (m.config.branching, m.config.depth, m.config.temperature);
    let per = depth * b;
    let mut total = 0.0;
    for (n, inst) in batch.iter().enumerate() {
        let x = &inst.features;
        let y = inst.label.unwrap();
        let g = &noise[n * per..(n + 1) * per];
        let mut parent = 0;
        let mut correction = 0.0;
        for layer in 1..=depth {
            let values: Vec<f64> = (0..b).map(|k| node_ell(theta0, layer, parent * b + k, x, y)).collect();
            let a0: Vec<f64> = (0..b)
                .map(|k| values[k] + prior(theta0, layer, parent * b + k).ln() + g[(layer - 1) * b + k])
                .collect();
            let k = (0..b).fold(0, |best, j| if a0[j] > a0[best] { j } else { best });
            let a: Vec<f64> = (0..b)
                .map(|j| {
                    let c = parent * b + j;
                    let v = if j == k { node_ell(m, layer, c, x, y) } else { values[j] };
                    v + prior(m, layer, c).ln() + g[(layer - 1) * b + j]
                })
                .collect();
            let scale = |v: &[f64]| softmax(&v.iter().map(|t| t / tau).collect::<Vec<_>>());
            let (ys, ys0) = (scale(&a), scale(&a0));
            correction += (0..b).map(|j| (ys[j] - ys0[j]) * values[j]).sum::<f64>();
            parent = parent * b + k;
        }
        total += -node_ell(m, depth, parent, x, y) - correction;
    }
    total / batch.len() as f64
}

/// Largest relative error (denominator floored at `1e-6`) between the
/// analytic gradient and central differences of `f`, per parameter group.
pub fn fd_errors(
    model: &CobwebNN,
    analytic: &cobweb_lab::nn::Params,
    h: f64,
    f: impl Fn(&CobwebNN) -> f64,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (gi, (name, layer, values)) in analytic.groups().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, a) in values.iter().enumerate() {
            let mut plus = model.clone();
            plus.params.groups_mut()[gi].2[i] += h;
            let mut minus = model.clone();
            minus.params.groups_mut()[gi].2[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
        out.push((format!("{name}@{layer}"), worst));
    }
    out
}
