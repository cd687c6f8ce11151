//! Dataset ingestion: IDX (MNIST, Fashion-MNIST), CIFAR-10 binary batches,
//! raw u8 image stacks (MedMNIST exports), synthetic Gaussian clusters and a
//! canonical binary dump. Pixels are scaled to `[0, 1]`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Instance;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3072;
pub const DUMP_MAGIC: &[u8; 4] = b"CWDS";
pub const DUMP_VERSION: u32 = 1;
const UNLABELED: u16 = u16::MAX;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "COBWEB_LAB_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub classes: usize,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for x in self.train.iter().chain(&self.test) {
            x.validate(self.dim, self.classes)?;
            if x.features.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Format(format!("{}: feature outside [0, 1]", self.name)));
            }
        }
        Ok(())
    }

    /// Per-class stratified subsample of both halves keeping `fraction` of
    /// every class (at least one instance of each non-empty class).
    pub fn subsample(&self, fraction: f64, seed: u64) -> Dataset {
        if fraction >= 1.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut take = |xs: &[Instance]| {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes + 1];
            for (i, x) in xs.iter().enumerate() {
                by_class[x.label.unwrap_or(self.classes)].push(i);
            }
            let mut keep = Vec::new();
            for idx in by_class.iter_mut().filter(|v| !v.is_empty()) {
                idx.shuffle(&mut rng);
                let n = ((idx.len() as f64 * fraction).round() as usize).max(1);
                keep.extend_from_slice(&idx[..n]);
            }
            keep.sort_unstable();
            keep.into_iter().map(|i| xs[i].clone()).collect::<Vec<_>>()
        };
        let train = take(&self.train);
        let test = take(&self.test);
        Dataset {
            name: format!("{}@{}", self.name, fraction),
            dim: self.dim,
            classes: self.classes,
            train,
            test,
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_owned(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_owned(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Reads an IDX image file and its label file (`.gz` accepted).
pub fn load_idx(images: &Path, labels: &Path) -> Result<(Vec<Instance>, usize)> {
    let img = read_all(images)?;
    check_magic(&img, IDX_IMAGES_MAGIC, images)?;
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let dim = rows * cols;
    check_len(&img, 16 + n * dim, images)?;

    let lab = read_all(labels)?;
    check_magic(&lab, IDX_LABELS_MAGIC, labels)?;
    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n_labels != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    check_len(&lab, 8 + n, labels)?;

    let out = (0..n)
        .map(|i| {
            let px = &img[16 + i * dim..16 + (i + 1) * dim];
            Instance::labeled(scale(px), lab[8 + i] as usize)
        })
        .collect();
    Ok((out, dim))
}

/// Writes instances as an IDX image/label pair with the given image shape.
pub fn write_idx(images: &Path, labels: &Path, xs: &[Instance], rows: usize, cols: usize) -> Result<()> {
    let mut img = BufWriter::new(File::create(images)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(xs.len() as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    let mut lab = BufWriter::new(File::create(labels)?);
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(xs.len() as u32).to_be_bytes())?;
    for x in xs {
        if x.dim() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: x.dim(),
            });
        }
        img.write_all(&unscale(&x.features))?;
        lab.write_all(&[x.label.unwrap_or(0) as u8])?;
    }
    img.flush()?;
    lab.flush()?;
    Ok(())
}

fn scale(px: &[u8]) -> Vec<f64> {
    px.iter().map(|&p| p as f64 / 255.0).collect()
}

fn unscale(features: &[f64]) -> Vec<u8> {
    features.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

fn idx_file(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// Loads an MNIST-layout directory (`train-images-idx3-ubyte`, ...,
/// optionally gzipped).
pub fn load_mnist_dir(dir: &Path, name: &str) -> Result<Dataset> {
    let (train, dim) = load_idx(
        &idx_file(dir, "train-images-idx3-ubyte"),
        &idx_file(dir, "train-labels-idx1-ubyte"),
    )?;
    let (test, test_dim) = load_idx(
        &idx_file(dir, "t10k-images-idx3-ubyte"),
        &idx_file(dir, "t10k-labels-idx1-ubyte"),
    )?;
    if dim != test_dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: test_dim,
        });
    }
    Ok(Dataset {
        name: name.into(),
        dim,
        classes: 10,
        train,
        test,
    })
}

/// The bundled 6000/1000 MNIST subset used for desk-scale runs.
pub fn mnist_desk() -> Result<Dataset> {
    load_mnist_dir(&bundled_mnist_dir(), "mnist-desk")
}

pub fn bundled_mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("mnist-desk")
}

/// Parses concatenated CIFAR-10 binary records (label byte + 3072 pixels,
/// channel-major).
pub fn load_cifar10_binary(paths: &[PathBuf]) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for path in paths {
        let bytes = read_all(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Misaligned {
                path: path.clone(),
                len: bytes.len(),
                record: CIFAR_RECORD,
            });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::LabelOutOfRange { label, classes: 10 });
            }
            out.push(Instance::labeled(scale(&rec[1..]), label));
        }
    }
    Ok(out)
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10_dir(dir: &Path) -> Result<Dataset> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    Ok(Dataset {
        name: "cifar10".into(),
        dim: 3072,
        classes: 10,
        train: load_cifar10_binary(&train)?,
        test: load_cifar10_binary(&[dir.join("test_batch.bin")])?,
    })
}

/// Reads a raw row-major u8 image stack (`n * dim` bytes, no header) and a
/// raw u8 label vector (`n` bytes).
pub fn load_raw(images: &Path, labels: &Path, dim: usize, classes: usize) -> Result<Vec<Instance>> {
    let img = read_all(images)?;
    let lab = read_all(labels)?;
    if dim == 0 || img.len() % dim != 0 {
        return Err(Error::Misaligned {
            path: images.to_owned(),
            len: img.len(),
            record: dim,
        });
    }
    let n = img.len() / dim;
    if lab.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: lab.len(),
        });
    }
    img.chunks_exact(dim)
        .zip(&lab)
        .map(|(px, &l)| {
            let label = l as usize;
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            Ok(Instance::labeled(scale(px), label))
        })
        .collect()
}

/// MedMNIST OrganA exported as `{train,test}_images.u8` / `{train,test}_labels.u8`.
pub fn load_organa_dir(dir: &Path) -> Result<Dataset> {
    let half = |split: &str| {
        load_raw(
            &dir.join(format!("{split}_images.u8")),
            &dir.join(format!("{split}_labels.u8")),
            784,
            11,
        )
    };
    Ok(Dataset {
        name: "organa".into(),
        dim: 784,
        classes: 11,
        train: half("train")?,
        test: half("test")?,
    })
}

/// `classes` Gaussian clusters with means uniform in `[0,1]^dim` and
/// per-dimension standard deviation `spread`, clipped to `[0, 1]`. Train and
/// test each hold `per_class` instances per class.
pub fn synth_clusters(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::Config("synth_clusters needs classes, dim and per_class >= 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config("spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let noise = Normal::new(0.0, spread).expect("valid spread");
    let draw = |rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(classes * per_class);
        for _ in 0..per_class {
            for (label, mean) in means.iter().enumerate() {
                let features = mean
                    .iter()
                    .map(|&m| if spread == 0.0 { m } else { (m + noise.sample(rng)).clamp(0.0, 1.0) })
                    .collect();
                out.push(Instance::labeled(features, label));
            }
        }
        out
    };
    let train = draw(&mut rng);
    let test = draw(&mut rng);
    Ok(Dataset {
        name: format!("synth-k{classes}-d{dim}"),
        dim,
        classes,
        train,
        test,
    })
}

fn write_instances(w: &mut impl Write, xs: &[Instance]) -> Result<()> {
    for x in xs {
        for &v in &x.features {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        let label = x.label.map_or(UNLABELED, |l| l as u16);
        w.write_all(&label.to_le_bytes())?;
    }
    Ok(())
}

/// Canonical dump: `CWDS`, version, dim, classes, train/test counts, name,
/// then per instance `dim` little-endian f32 features and a u16 label
/// (`0xFFFF` = unlabeled).
pub fn write_dump(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(ds.dim as u32).to_le_bytes())?;
    w.write_all(&(ds.classes as u32).to_le_bytes())?;
    w.write_all(&(ds.train.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.test.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.name.len() as u32).to_le_bytes())?;
    w.write_all(ds.name.as_bytes())?;
    write_instances(&mut w, &ds.train)?;
    write_instances(&mut w, &ds.test)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        let out = self.bytes.get(self.at..end).ok_or_else(|| Error::Truncated {
            path: self.path.to_owned(),
            expected: end,
            actual: self.bytes.len(),
        })?;
        self.at = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Header of a canonical dump: `(name, dim, classes, n_train, n_test)`.
pub fn read_dump_header(path: &Path) -> Result<(String, usize, usize, usize, usize)> {
    let mut head = vec![0u8; 4096];
    let n = File::open(path)?.read(&mut head)?;
    head.truncate(n);
    parse_header(&mut Cursor { bytes: &head, at: 0, path })
}

fn parse_header(c: &mut Cursor) -> Result<(String, usize, usize, usize, usize)> {
    if c.take(4)? != DUMP_MAGIC {
        return Err(Error::Format(format!("{} is not a dataset dump", c.path.display())));
    }
    let version = c.u32()?;
    if version != DUMP_VERSION {
        return Err(Error::SchemaVersion {
            expected: DUMP_VERSION,
            found: version,
        });
    }
    let dim = c.u32()? as usize;
    let classes = c.u32()? as usize;
    let n_train = c.u64()? as usize;
    let n_test = c.u64()? as usize;
    let name_len = c.u32()? as usize;
    let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
    Ok((name, dim, classes, n_train, n_test))
}

pub fn read_dump(path: &Path) -> Result<Dataset> {
    let bytes = read_all(path)?;
    let mut c = Cursor { bytes: &bytes, at: 0, path };
    let (name, dim, classes, n_train, n_test) = parse_header(&mut c)?;
    let mut read_half = |n: usize| -> Result<Vec<Instance>> {
        (0..n)
            .map(|_| {
                let raw = c.take(dim * 4 + 2)?;
                let features = raw[..dim * 4]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect();
                let label = u16::from_le_bytes([raw[dim * 4], raw[dim * 4 + 1]]);
                Ok(Instance::new(features, (label != UNLABELED).then_some(label as usize)))
            })
            .collect()
    };
    let train = read_half(n_train)?;
    let test = read_half(n_test)?;
    Ok(Dataset {
        name,
        dim,
        classes,
        train,
        test,
    })
}

/// Instances file for prediction: a canonical dump whose test half (or, if
/// empty, train half) holds the queries.
pub fn read_instances(path: &Path) -> Result<(usize, Vec<Instance>)> {
    let ds = read_dump(path)?;
    let xs = if ds.test.is_empty() { ds.train } else { ds.test };
    Ok((ds.dim, xs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        let xs: Vec<Instance> = (0..5)
            .map(|i| Instance::labeled((0..6).map(|j| ((i * 6 + j) * 7 % 256) as f64 / 255.0).collect(), i % 3))
            .collect();
        write_idx(&img, &lab, &xs, 2, 3).unwrap();
        let (back, dim) = load_idx(&img, &lab).unwrap();
        assert_eq!((back, dim), (xs.clone(), 6));

        write_idx(&img, &lab, &[], 2, 3).unwrap();
        assert!(load_idx(&img, &lab).unwrap().0.is_empty());

        write_idx(&img, &lab, &xs, 2, 3).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 4]).unwrap();
        match load_idx(&img, &lab) {
            Err(Error::Truncated { expected, actual, .. }) => assert_eq!((expected, actual), (16 + 30, 16 + 26)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_idx(&lab, &lab), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        std::fs::write(&path, &rec).unwrap();
        let xs = load_cifar10_binary(&[path.clone()]).unwrap();
        assert_eq!(xs.len(), 1);
        assert_eq!(xs[0].label, Some(7));
        assert_eq!(xs[0].dim(), 3072);
        rec.push(0);
        std::fs::write(&path, &rec).unwrap();
        assert!(matches!(load_cifar10_binary(&[path]), Err(Error::Misaligned { .. })));
    }

    #[test]
    fn raw_stack_reader() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i.u8"), dir.path().join("l.u8"));
        std::fs::write(&img, [0u8, 255, 51, 102]).unwrap();
        std::fs::write(&lab, [1u8, 10]).unwrap();
        let xs = load_raw(&img, &lab, 2, 11).unwrap();
        assert_eq!(xs[0].features, vec![0.0, 1.0]);
        assert_eq!(xs[1].label, Some(10));
        assert!(load_raw(&img, &lab, 3, 11).is_err());
        assert!(load_raw(&img, &lab, 2, 5).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_exact_without_spread() {
        let a = synth_clusters(3, 4, 5, 0.0, 9).unwrap();
        let b = synth_clusters(3, 4, 5, 0.0, 9).unwrap();
        assert_eq!(a, b);
        for x in &a.train {
            let same = a.train.iter().filter(|y| y.label == x.label).all(|y| y.features == x.features);
            assert!(same);
        }
        a.validate().unwrap();
        assert!(synth_clusters(0, 4, 5, 0.1, 9).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cwds");
        let mut ds = synth_clusters(2, 3, 4, 0.1, 1).unwrap();
        for x in ds.train.iter_mut().chain(ds.test.iter_mut()) {
            x.features.iter_mut().for_each(|v| *v = (*v as f32) as f64);
        }
        ds.test[0].label = None;
        write_dump(&path, &ds).unwrap();
        assert_eq!(read_dump(&path).unwrap(), ds);
        assert_eq!(read_dump_header(&path).unwrap(), (ds.name.clone(), 3, 2, 8, 8));
    }

    #[test]
    fn subsample_is_stratified() {
        let ds = synth_clusters(4, 2, 50, 0.1, 3).unwrap();
        let sub = ds.subsample(0.1, 5);
        assert_eq!(sub.train.len(), 20);
        for k in 0..4 {
            assert_eq!(sub.train.iter().filter(|x| x.label == Some(k)).count(), 5);
        }
        assert_eq!(ds.subsample(0.1, 5), sub);
    }
}
