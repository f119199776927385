//! Synchronous FedAvg on a three-class blob task, next to a centralized
//! baseline trained on the pooled data.
//!
//!     cargo run --example sync_fedavg

use fedfarm::config::{DatasetConfig, FederationConfig, Mode};
use fedfarm::engine::{self, compare, RunOptions};

fn main() -> fedfarm::Result<()> {
    let data = DatasetConfig::Blobs { n: 1500, d: 4, classes: 3, separation: 3.0 };
    let mut cfg = FederationConfig::new(data, Mode::Sync);
    cfg.clients = 8;
    cfg.rounds = 15;
    cfg.model.hidden = vec![16];
    cfg.optimizer.learning_rate = 0.01;
    cfg.network.p_available = 0.7;

    let fed = engine::run(&cfg, RunOptions::workers(0))?;
    println!("round  acc     loss    online  uplink_B  stale");
    for r in &fed.records {
        println!(
            "{:>5}  {:.3}  {:.4}  {:>6.2}  {:>8}  {:.2}",
            r.index,
            r.accuracy.unwrap_or(f64::NAN),
            r.eval_loss,
            r.availability_rate,
            r.uplink_bytes,
            r.mean_staleness
        );
    }

    cfg.mode = Mode::Centralized;
    let central = engine::run(&cfg, RunOptions::default())?;
    let c = compare(&fed, &central, Some(0.9))?;
    println!(
        "\nfederated {:.3} vs centralized {:.3} (delta {:+.3})",
        fed.final_accuracy().unwrap_or(f64::NAN),
        central.final_accuracy().unwrap_or(f64::NAN),
        c.final_metric_delta
    );
    Ok(())
}
