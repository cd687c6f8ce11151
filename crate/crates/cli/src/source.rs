use std::path::{Path, PathBuf};

use cobweb_lab::data::{self, Dataset, DATA_DIR_ENV};

use crate::error::{CliError, CliResult};

/// Where a dataset comes from.
///
/// Selectors: `mnist-desk`, `mnist[:DIR]`, `fashion-mnist[:DIR]`,
/// `cifar10[:DIR]`, `organa[:DIR]`, `dump:FILE` and
/// `synth:K,D,PER_CLASS,SPREAD,SEED`. Relative paths, and omitted ones, are
/// resolved against the data directory named by `COBWEB_LAB_DATA`.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    MnistDesk,
    Idx { dir: PathBuf, name: String },
    Cifar10(PathBuf),
    Organa(PathBuf),
    Dump(PathBuf),
    Synth { classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64 },
}

fn data_path(p: &str, data_dir: Option<&Path>) -> PathBuf {
    let p = Path::new(p);
    match data_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_owned(),
    }
}

impl Source {
    pub fn parse(selector: &str) -> CliResult<Source> {
        let dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        Source::parse_with(selector, dir.as_deref())
    }

    pub fn parse_with(selector: &str, data_dir: Option<&Path>) -> CliResult<Source> {
        let (kind, arg) = match selector.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (selector, None),
        };
        let path = || data_path(arg.unwrap_or(kind), data_dir);
        Ok(match kind {
            "mnist-desk" if arg.is_none() => Source::MnistDesk,
            "mnist" | "fashion-mnist" => Source::Idx {
                dir: path(),
                name: kind.into(),
            },
            "cifar10" => Source::Cifar10(path()),
            "organa" => Source::Organa(path()),
            "dump" => match arg {
                Some(a) => Source::Dump(data_path(a, data_dir)),
                None => return Err(CliError::Usage("dump selector needs a file: dump:FILE".into())),
            },
            "synth" => {
                let bad = || CliError::Usage(format!("bad synth selector {selector:?} (expected synth:K,D,PER_CLASS,SPREAD,SEED)"));
                let parts: Vec<&str> = arg.ok_or_else(bad)?.split(',').collect();
                if parts.len() != 5 {
                    return Err(bad());
                }
                Source::Synth {
                    classes: parts[0].parse().map_err(|_| bad())?,
                    dim: parts[1].parse().map_err(|_| bad())?,
                    per_class: parts[2].parse().map_err(|_| bad())?,
                    spread: parts[3].parse().map_err(|_| bad())?,
                    seed: parts[4].parse().map_err(|_| bad())?,
                }
            }
            _ => return Err(CliError::Usage(format!("unknown dataset selector {selector:?}"))),
        })
    }

    fn expected_files(&self) -> Vec<PathBuf> {
        let idx = |dir: &Path| -> Vec<PathBuf> {
            ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
                .iter()
                .map(|s| {
                    let plain = dir.join(s);
                    if plain.exists() {
                        plain
                    } else {
                        dir.join(format!("{s}.gz"))
                    }
                })
                .collect()
        };
        match self {
            Source::MnistDesk => idx(&data::bundled_mnist_dir()),
            Source::Idx { dir, .. } => idx(dir),
            Source::Cifar10(dir) => (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .chain([dir.join("test_batch.bin")])
                .collect(),
            Source::Organa(dir) => ["train_images.u8", "train_labels.u8", "test_images.u8", "test_labels.u8"]
                .iter()
                .map(|s| dir.join(s))
                .collect(),
            Source::Dump(p) => vec![p.clone()],
            Source::Synth { .. } => Vec::new(),
        }
    }

    /// Confirms the inputs exist and, for dumps, that the header parses.
    pub fn check(&self) -> CliResult<String> {
        for f in self.expected_files() {
            if !f.is_file() {
                return Err(CliError::Data(format!("missing data file {}", f.display())));
            }
        }
        match self {
            Source::Dump(p) => {
                let (name, dim, classes, n_train, n_test) = data::read_dump_header(p)?;
                Ok(format!("{name}: D={dim}, K={classes}, {n_train} train / {n_test} test"))
            }
            Source::Synth { classes, dim, per_class, .. } => {
                Ok(format!("synthetic: D={dim}, K={classes}, {per_class} per class"))
            }
            other => Ok(format!("{} files present", other.expected_files().len())),
        }
    }

    pub fn load(&self) -> CliResult<Dataset> {
        let ds = match self {
            Source::MnistDesk => data::mnist_desk()?,
            Source::Idx { dir, name } => data::load_mnist_dir(dir, name)?,
            Source::Cifar10(dir) => data::load_cifar10_dir(dir)?,
            Source::Organa(dir) => data::load_organa_dir(dir)?,
            Source::Dump(p) => data::read_dump(p)?,
            Source::Synth { classes, dim, per_class, spread, seed } => {
                data::synth_clusters(*classes, *dim, *per_class, *spread, *seed)?
            }
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selectors() {
        let root = Path::new("/data");
        assert_eq!(Source::parse_with("mnist-desk", None).unwrap(), Source::MnistDesk);
        assert_eq!(
            Source::parse_with("mnist", Some(root)).unwrap(),
            Source::Idx {
                dir: "/data/mnist".into(),
                name: "mnist".into()
            }
        );
        assert_eq!(Source::parse_with("cifar10:/x/c", Some(root)).unwrap(), Source::Cifar10("/x/c".into()));
        assert_eq!(Source::parse_with("dump:a.cwds", Some(root)).unwrap(), Source::Dump("/data/a.cwds".into()));
        assert!(matches!(
            Source::parse_with("synth:2,3,10,0.01,4", None).unwrap(),
            Source::Synth { classes: 2, dim: 3, per_class: 10, seed: 4, .. }
        ));
        for bad in ["synth:2,3", "imagenet", "dump"] {
            assert_eq!(Source::parse_with(bad, None).unwrap_err().exit_code(), 2, "{bad}");
        }
    }
}
