//! Load sensor readings from CSV, normalise, split across farms and train a
//! federated model from a JSON config.
//!
//!     cargo run --example csv_ingest

use std::fmt::Write as _;

use fedfarm::config::FederationConfig;
use fedfarm::data::{load_csv, normalize_minmax, partition, PartitionConfig, Scheme};
use fedfarm::engine::{self, RunOptions};
use fedfarm::learner::Task;
use rand::Rng;

fn main() -> fedfarm::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("fields.csv");
    let mut rng = fedfarm::seed::rng(5);
    let mut text = String::from("soil_moisture,air_temp_c,nitrogen_ppm,irrigate\n");
    for _ in 0..400 {
        let moisture: f64 = rng.random_range(5.0..45.0);
        let temp: f64 = rng.random_range(10.0..38.0);
        let nitrogen: f64 = rng.random_range(5.0..60.0);
        let irrigate = (moisture < 20.0 + 0.4 * (temp - 24.0)) as u8;
        writeln!(text, "{moisture:.2},{temp:.1},{nitrogen:.0},{irrigate}").unwrap();
    }
    std::fs::write(&path, text)?;

    let data = load_csv(&path, "irrigate", Task::Classification)?;
    let (scaled, stats) = normalize_minmax(&data)?;
    println!("{} rows, {} features; first row scaled {:.3?}", data.n, data.d, scaled.row(0));
    println!("feature minima {:?}", stats.min);

    let skew = PartitionConfig { scheme: Scheme::LabelSkew, classes_per_client: 1, ..Default::default() };
    let shards = partition(&data, &skew, 4, 5)?;
    println!("label-skew shard sizes {:?}", shards.iter().map(Vec::len).collect::<Vec<_>>());

    let cfg = FederationConfig::from_json(&format!(
        r#"{{
            "dataset": {{"kind": "csv", "path": {:?}, "label_column": "irrigate", "task": "classification"}},
            "mode": "sync",
            "clients": 4,
            "rounds": 15,
            "model": {{"hidden": [8]}},
            "optimizer": {{"learning_rate": 0.02}},
            "network": {{"p_available": 0.8}}
        }}"#,
        path
    ))?;
    let log = engine::run(&cfg, RunOptions::default())?;
    println!("federated accuracy after {} rounds: {:.3}", log.records.len(), log.final_accuracy().unwrap_or(f64::NAN));
    Ok(())
}
