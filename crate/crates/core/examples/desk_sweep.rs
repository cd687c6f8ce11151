//! Runs arms on the bundled MNIST subset and prints seed-mean accuracy
//! series, one row per (model, metric).
//!
//! ```text
//! cargo run --release --example desk_sweep -- cobweb4v,cobwebnn-sparse 0,1,2 [nn_lr]
//! ```

use std::time::Instant;

use cobweb_lab::protocol::{mean_series, run_arms, Metric, ModelKind, ProtocolConfig};
use cobweb_lab::{data, Execution};

fn main() -> cobweb_lab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arms: Vec<ModelKind> = match args.first() {
        Some(a) => a.split(',').map(str::parse).collect::<cobweb_lab::Result<_>>()?,
        None => ModelKind::ALL.to_vec(),
    };
    let mut cfg = ProtocolConfig {
        fraction: 1.0,
        ..ProtocolConfig::default()
    };
    if let Some(s) = args.get(1) {
        cfg.seeds = s.split(',').map(|v| v.parse().expect("seed")).collect();
    }
    if let Some(lr) = args.get(2) {
        cfg.nn.learning_rate = lr.parse().expect("learning rate");
    }
    let ds = data::mnist_desk()?;
    let start = Instant::now();
    let records = run_arms(&arms, &ds, &cfg, Execution::Parallel)?;
    for &arm in &arms {
        for metric in [Metric::Chosen, Metric::NonChosen, Metric::Overall] {
            let series: Vec<String> = mean_series(&records, arm, metric)
                .iter()
                .map(|v| v.map_or("  -  ".into(), |a| format!("{a:.3}")))
                .collect();
            println!("{:16} {:10} {}", arm.tag(), metric.name(), series.join(" "));
        }
    }
    eprintln!("{} runs in {:.1}s", records.len(), start.elapsed().as_secs_f64());
    Ok(())
}
