use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cobweb_lab::data;
use cobweb_lab::protocol::{
    self, argmax_labels, metrics_csv, plot_csv, timings_csv, ExperimentId, Learner, Manifest,
};
use cobweb_lab::{Execution, Instance};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_error, CliError, CliResult};
use crate::model::{sha256_hex, Model};
use crate::source::Source;

fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

#[derive(Serialize)]
pub struct FitSummary {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub train_instances: usize,
    pub test_instances: usize,
    pub size_kind: String,
    pub size: usize,
    pub train_seconds: f64,
    pub test_accuracy: Option<f64>,
    pub checkpoint_sha256: String,
}

pub fn fit(cfg: &RunConfig, dry_run: bool, exec: Execution) -> CliResult<()> {
    cfg.validate()?;
    let source = Source::parse(&cfg.dataset)?;
    let out = cfg.output_dir()?;
    if dry_run {
        eprintln!("fit: config ok, {}", source.check()?);
        return Ok(());
    }
    let ds = source.load()?.subsample(cfg.protocol.fraction, cfg.seed);
    eprintln!("fit: {} on {} ({} train, {} test)", cfg.model.tag(), ds.name, ds.train.len(), ds.test.len());
    let mut learner = Learner::new(cfg.model, &ds, &cfg.protocol, cfg.seed)?;
    let start = Instant::now();
    learner.train(&ds.train, exec)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let predicted = learner.predict(&ds.test, &cfg.protocol.predict, exec)?;
    let labeled: Vec<(usize, usize)> = ds
        .test
        .iter()
        .zip(&predicted)
        .filter_map(|(x, &p)| x.label.map(|l| (l, p)))
        .collect();
    let test_accuracy =
        (!labeled.is_empty()).then(|| labeled.iter().filter(|(l, p)| l == p).count() as f64 / labeled.len() as f64);

    let model = Model::from(learner);
    let checkpoint = model.to_json()?;
    let digest = sha256_hex(checkpoint.as_bytes());
    write(&out.join("model.json"), &checkpoint)?;
    let (size_kind, size) = model.size();
    let summary = FitSummary {
        model: cfg.model.tag().into(),
        dataset: ds.name.clone(),
        seed: cfg.seed,
        train_instances: ds.train.len(),
        test_instances: ds.test.len(),
        size_kind: size_kind.into(),
        size,
        train_seconds,
        test_accuracy,
        checkpoint_sha256: digest.clone(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    write(&out.join("summary.json"), &text)?;
    eprintln!(
        "fit: {size} {size_kind}, {train_seconds:.2}s, test accuracy {}, sha256 {digest}",
        test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

/// Queries from a canonical dump or a headerless CSV of feature rows.
fn read_queries(path: &Path) -> CliResult<(Option<usize>, Vec<Vec<f64>>)> {
    if path.extension().is_some_and(|e| e == "csv") {
        let text = read(path)?;
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                line.split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
            })
            .collect::<CliResult<Vec<_>>>()?;
        if let Some(r) = rows.iter().find(|r| r.len() != rows[0].len()) {
            return Err(CliError::Data(format!(
                "{}: ragged rows ({} and {} values)",
                path.display(),
                rows[0].len(),
                r.len()
            )));
        }
        Ok((rows.first().map(Vec::len), rows))
    } else {
        let (dim, xs) = data::read_instances(path)?;
        Ok(((!xs.is_empty()).then_some(dim), xs.into_iter().map(|x: Instance| x.features).collect()))
    }
}

/// One line per query: argmax label then the distribution, or nothing at all
/// for an empty query set.
pub fn format_predictions(dists: &[Vec<f64>]) -> String {
    let mut out = String::new();
    if let Some(first) = dists.first() {
        out.push_str("argmax");
        for k in 0..first.len() {
            out.push_str(&format!(",p{k}"));
        }
        out.push('\n');
    }
    for (d, label) in dists.iter().zip(argmax_labels(dists)) {
        out.push_str(&label.to_string());
        for p in d {
            out.push_str(&format!(",{p:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn predict(checkpoint: &Path, input: &Path, out: &Path, cfg: &RunConfig, dry_run: bool, exec: Execution) -> CliResult<()> {
    cfg.validate()?;
    let model = Model::from_json(&read(checkpoint)?)?;
    let (dim, xs) = read_queries(input)?;
    if let Some(d) = dim.filter(|&d| d != model.dim()) {
        return Err(CliError::Data(format!(
            "dimension mismatch: checkpoint expects D={}, input has D={d}",
            model.dim()
        )));
    }
    if dry_run {
        eprintln!("predict: {} queries of D={} for a K={} model", xs.len(), model.dim(), model.classes());
        return Ok(());
    }
    let dists = model.predict(&xs, &cfg.protocol.predict, cfg.seed, exec)?;
    write(out, &format_predictions(&dists))?;
    eprintln!("predict: wrote {} distributions to {}", dists.len(), out.display());
    Ok(())
}

pub struct ExperimentArgs {
    pub id: Option<ExperimentId>,
    pub manifest: Option<PathBuf>,
}

pub fn experiment(args: &ExperimentArgs, cfg: RunConfig, dry_run: bool, exec: Execution) -> CliResult<()> {
    let (id, cfg) = match &args.manifest {
        Some(path) => {
            let m = Manifest::from_json(&read(path)?)?;
            let id: ExperimentId = m.experiment.parse()?;
            let replay = RunConfig {
                dataset: m.dataset,
                protocol: m.config,
                ..cfg
            };
            (id, replay)
        }
        None => (args.id.ok_or_else(|| CliError::Usage("experiment needs --id or --manifest".into()))?, cfg),
    };
    cfg.validate()?;
    let source = Source::parse(&cfg.dataset)?;
    let out = cfg.output_dir()?;
    let arms: Vec<&str> = id.arms().iter().map(|a| a.tag()).collect();
    if dry_run {
        eprintln!(
            "experiment {}: arms {arms:?}, seeds {:?}, {}",
            id.tag(),
            cfg.protocol.seeds,
            source.check()?
        );
        return Ok(());
    }
    let ds = source.load()?;
    eprintln!("experiment {}: arms {arms:?} x {} seeds on {}", id.tag(), cfg.protocol.seeds.len(), ds.name);
    let start = Instant::now();
    let records = protocol::run_experiment(id, &ds, &cfg.protocol, exec)?;
    eprintln!("experiment {}: {} runs in {:.1}s", id.tag(), records.len(), start.elapsed().as_secs_f64());
    write(&out.join("metrics.csv"), &metrics_csv(&records))?;
    write(&out.join("timings.csv"), &timings_csv(&records))?;
    write(&out.join("plot.csv"), &plot_csv(&records))?;
    let manifest = Manifest::new(id.tag(), &cfg.dataset, &cfg.protocol, records);
    write(&out.join("manifest.json"), &manifest.to_json()?)?;
    eprintln!("experiment {}: outputs in {}", id.tag(), out.display());
    Ok(())
}

pub fn make_splits(cfg: &RunConfig, dry_run: bool) -> CliResult<()> {
    cfg.validate()?;
    let source = Source::parse(&cfg.dataset)?;
    let out = cfg.output_dir()?;
    if dry_run {
        eprintln!("make-splits: seeds {:?}, {}", cfg.protocol.seeds, source.check()?);
        return Ok(());
    }
    let ds = source.load()?;
    for &seed in &cfg.protocol.seeds {
        let (sub, schedule) = protocol::prepare(&ds, &cfg.protocol, seed)?;
        schedule.validate(&sub)?;
        let sizes: Vec<usize> = schedule.splits.iter().map(Vec::len).collect();
        let text = serde_json::to_string_pretty(&schedule).map_err(|e| CliError::Internal(e.to_string()))?;
        let path = out.join(format!("schedule-seed{seed}.json"));
        write(&path, &text)?;
        eprintln!("make-splits: seed {seed}: split sizes {sizes:?} -> {}", path.display());
    }
    Ok(())
}

pub fn inspect_tree(checkpoint: &Path, json: bool, dry_run: bool) -> CliResult<String> {
    let tree = match Model::from_json(&read(checkpoint)?)? {
        Model::Tree(t) => t,
        _ => return Err(CliError::Data(format!("{} is not a tree checkpoint", checkpoint.display()))),
    };
    if dry_run {
        return Ok(String::new());
    }
    let s = tree.summary();
    if json {
        return serde_json::to_string_pretty(&s).map_err(|e| CliError::Internal(e.to_string()));
    }
    let hist = |h: &std::collections::BTreeMap<usize, usize>| {
        h.iter().map(|(k, v)| format!("  {k}: {v}")).collect::<Vec<_>>().join("\n")
    };
    Ok(format!(
        "nodes: {}\nleaves: {}\ninstances: {}\nmax depth: {}\nleaf purity: {}\ndepth histogram (depth: nodes)\n{}\nbranching histogram (children: internal nodes)\n{}\n",
        s.node_count,
        s.leaf_count,
        s.instances,
        s.max_depth,
        s.leaf_purity.map_or("n/a".into(), |p| format!("{p:.4}")),
        hist(&s.depth_histogram),
        hist(&s.branching_histogram),
    ))
}
