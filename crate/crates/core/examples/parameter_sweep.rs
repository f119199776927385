//! Sweep one config key and write the same artifacts the CLI does.
//!
//!     cargo run --example parameter_sweep

use fedfarm::config::{DatasetConfig, FederationConfig, Mode};
use fedfarm::engine::RunOptions;
use fedfarm::report::{self, SWEEP_SUMMARY_FILE};
use serde_json::json;

fn main() -> fedfarm::Result<()> {
    let data = DatasetConfig::Blobs { n: 1000, d: 3, classes: 3, separation: 3.0 };
    let mut cfg = FederationConfig::new(data, Mode::Sync);
    cfg.rounds = 10;
    cfg.model.hidden = vec![8];
    cfg.optimizer.learning_rate = 0.01;

    let out = tempfile::tempdir()?;
    let values = [json!(0.05), json!(0.2), json!(1.0)];
    let rows = report::sweep(&cfg, "compression.topk", &values, out.path(), RunOptions::workers(0))?;
    println!("topk   accuracy  uplink_B  sim_time_s");
    for r in &rows {
        println!(
            "{:<5}  {:>8.3}  {:>8}  {:>10.1}",
            r.value,
            r.final_accuracy.unwrap_or(f64::NAN),
            r.uplink_bytes,
            r.sim_time_s
        );
    }
    println!("\n{}", std::fs::read_to_string(out.path().join(SWEEP_SUMMARY_FILE))?);
    Ok(())
}
