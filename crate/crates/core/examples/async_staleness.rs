//! Asynchronous updates over links of uneven speed, with and without
//! staleness down-weighting.
//!
//!     cargo run --example async_staleness

use fedfarm::aggregation::staleness_weight;
use fedfarm::config::{DatasetConfig, FederationConfig, Mode};
use fedfarm::engine::{self, RunOptions};

fn main() -> fedfarm::Result<()> {
    println!("weight of an update s versions old:");
    for decay in [0.5, 0.9, 1.0] {
        let row: Vec<String> = (0..6).map(|s| format!("{:.3}", staleness_weight(s, decay))).collect();
        println!("  decay {decay:<3}  {}", row.join("  "));
    }

    let data = DatasetConfig::Blobs { n: 1200, d: 2, classes: 3, separation: 3.0 };
    let mut cfg = FederationConfig::new(data, Mode::Async);
    cfg.clients = 10;
    cfg.model.hidden = vec![8];
    cfg.optimizer.learning_rate = 0.01;
    // slowest client is 5x slower than the fastest
    cfg.network.heterogeneity = 4.0;
    cfg.network.p_available = 0.6;

    println!("\ndecay  final_acc  sim_time_s  mean_stale  max_stale  events/s");
    for decay in [0.5, 0.9, 1.0] {
        cfg.async_.decay = decay;
        let log = engine::run(&cfg, RunOptions::default())?;
        let (mean, max) = log.records.iter().fold((0.0, 0), |(m, x), r| {
            (m + r.mean_staleness / log.records.len() as f64, x.max(r.max_staleness))
        });
        println!(
            "{decay:>5}  {:>9.3}  {:>10.1}  {:>10.2}  {:>9}  {:>8.3}",
            log.final_accuracy().unwrap_or(f64::NAN),
            log.sim_time(),
            mean,
            max,
            log.server_load()
        );
    }

    cfg.async_.decay = 0.9;
    cfg.async_.max_staleness = Some(2);
    let log = engine::run(&cfg, RunOptions::default())?;
    let last = log.last().expect("records");
    println!(
        "\nwith max_staleness = 2: {} of {} delivered updates rejected",
        last.rejected_updates, last.delivered_updates
    );
    Ok(())
}
