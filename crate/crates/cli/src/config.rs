use std::path::{Path, PathBuf};

use cobweb_lab::protocol::{ModelKind, ProtocolConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a run depends on besides the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Dataset selector, see `source::Source::parse`.
    pub dataset: String,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub protocol: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Cobweb4v,
            dataset: "mnist-desk".into(),
            seed: 0,
            output: None,
            protocol: ProtocolConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub dataset: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub fraction: Option<f64>,
    pub per_class_d1: Option<usize>,
    pub chosen_class: Option<usize>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                RunConfig::from_toml(&text)
            }
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(m) = o.model {
            self.model = m;
        }
        if let Some(d) = &o.dataset {
            self.dataset = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(s) = &o.seeds {
            self.protocol.seeds = s.clone();
        }
        if let Some(f) = o.fraction {
            self.protocol.fraction = f;
        }
        if let Some(n) = o.per_class_d1 {
            self.protocol.per_class_d1 = n;
        }
        if let Some(c) = o.chosen_class {
            self.protocol.chosen_class = c;
        }
        if let Some(p) = &o.output {
            self.output = Some(p.clone());
        }
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        Ok(self.protocol.validate()?)
    }

    pub fn output_dir(&self) -> CliResult<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output directory (use --out or `output` in the config)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("seed = 1\n[protocol]\nfractoin = 0.5\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("fractoin"), "{err}");
    }

    #[test]
    fn nested_sections_and_overrides() {
        let cfg = RunConfig::from_toml(
            "model = \"cobwebnn-dense\"\n[protocol]\nseeds = [3]\n[protocol.nn]\ndepth = 2\n[protocol.tree]\nfixed_depth = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.model, ModelKind::CobwebnnDense);
        assert_eq!(cfg.protocol.nn.depth, 2);
        assert_eq!(cfg.protocol.tree.fixed_depth, 4);
        let o = Overrides {
            seeds: Some(vec![7, 8]),
            fraction: Some(0.5),
            ..Overrides::default()
        };
        let cfg = cfg.apply(&o);
        assert_eq!(cfg.protocol.seeds, vec![7, 8]);
        assert_eq!(cfg.protocol.fraction, 0.5);
        assert_eq!(cfg.protocol.nn.depth, 2);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = toml::to_string(&RunConfig {
            output: Some("out".into()),
            ..RunConfig::default()
        })
        .unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap().output, Some(PathBuf::from("out")));
    }
}
