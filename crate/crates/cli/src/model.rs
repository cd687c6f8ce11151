use cobweb_lab::nn::{CobwebNN, Mlp, UpdateMode};
use cobweb_lab::predict::Predictor;
use cobweb_lab::protocol::{stream_rng, Learner, Stream};
use cobweb_lab::{CobwebTree, Execution, PredictConfig};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// A trained model as stored in a checkpoint file.
pub enum Model {
    Tree(CobwebTree),
    Nn(CobwebNN),
    Mlp(Mlp),
}

impl From<Learner> for Model {
    fn from(l: Learner) -> Self {
        match l {
            Learner::Tree(t) => Model::Tree(t),
            Learner::Nn { model, .. } => Model::Nn(model),
            Learner::Mlp { model, .. } => Model::Mlp(model),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Model {
    pub fn to_json(&self) -> CliResult<String> {
        Ok(match self {
            Model::Tree(t) => t.to_json(),
            Model::Nn(m) => m.to_json()?,
            Model::Mlp(m) => m.to_json()?,
        })
    }

    /// Dispatches on the document's `schema` field.
    pub fn from_json(text: &str) -> CliResult<Model> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Data(format!("checkpoint is not JSON: {e}")))?;
        match probe.get("schema").and_then(|s| s.as_str()) {
            Some("cobweb-tree") => Ok(Model::Tree(CobwebTree::from_json(text)?)),
            Some("cobweb-nn") => Ok(Model::Nn(CobwebNN::from_json(text)?)),
            Some("cobweb-mlp") => Ok(Model::Mlp(Mlp::from_json(text)?)),
            other => Err(CliError::Data(format!("unrecognized checkpoint schema {other:?}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Tree(t) => t.dim(),
            Model::Nn(m) => m.dim,
            Model::Mlp(m) => m.dim,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Model::Tree(t) => t.classes(),
            Model::Nn(m) => m.classes,
            Model::Mlp(m) => m.classes,
        }
    }

    /// `("nodes", n)` for trees, `("parameters", n)` for networks.
    pub fn size(&self) -> (&'static str, usize) {
        match self {
            Model::Tree(t) => ("nodes", t.node_count()),
            Model::Nn(m) => ("parameters", m.parameter_count()),
            Model::Mlp(m) => {
                let p = &m.params;
                ("parameters", p.w1.len() + p.b1.len() + p.w2.len() + p.b2.len())
            }
        }
    }

    /// Label distributions. Sparse CobwebNN paths come from the Gumbel
    /// stream of `seed`.
    pub fn predict(&self, xs: &[Vec<f64>], cfg: &PredictConfig, seed: u64, exec: Execution) -> CliResult<Vec<Vec<f64>>> {
        let out: cobweb_lab::Result<Vec<Vec<f64>>> = match self {
            Model::Tree(t) => Predictor::new(t).predict_batch(xs, cfg, exec),
            Model::Nn(m) => match m.config.mode {
                UpdateMode::Dense => exec.map(xs, |x| m.predict_dense(x)).into_iter().collect(),
                UpdateMode::Sparse => {
                    let per = m.depth() * m.branching();
                    let noise = m.draw_noise(xs.len(), &mut stream_rng(seed, Stream::Gumbel));
                    exec.map_indexed(xs.len(), |i| m.predict_sparse_with_noise(&xs[i], &noise[i * per..(i + 1) * per]))
                        .into_iter()
                        .collect()
                }
            },
            Model::Mlp(m) => exec.map(xs, |x| m.predict_proba(x)).into_iter().collect(),
        };
        Ok(out?)
    }
}
