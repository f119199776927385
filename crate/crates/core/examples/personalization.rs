//! Non-IID farms: Dirichlet label skew with and without a personal output
//! head kept on each client.
//!
//!     cargo run --example personalization

use fedfarm::config::{DatasetConfig, FederationConfig, Mode};
use fedfarm::data::Scheme;
use fedfarm::engine::{self, RunOptions};

fn main() -> fedfarm::Result<()> {
    let data = DatasetConfig::Blobs { n: 2000, d: 4, classes: 4, separation: 1.5 };
    let mut cfg = FederationConfig::new(data, Mode::Sync);
    cfg.clients = 10;
    cfg.model.hidden = vec![16];
    cfg.optimizer.learning_rate = 0.01;
    cfg.network.p_available = 1.0;
    cfg.partition.scheme = Scheme::Dirichlet;
    cfg.partition.alpha = 0.1;
    cfg.client_eval_fraction = 0.2;

    for personal in [false, true] {
        cfg.personalization = personal;
        let log = engine::run(&cfg, RunOptions::workers(0))?;
        let last = log.last().expect("records");
        println!(
            "personal head {:<5}  global acc {:.3}  mean on-farm acc {:.3}  uplink {} B  personal coords sent {}",
            personal,
            last.accuracy.unwrap_or(f64::NAN),
            last.mean_client_accuracy.unwrap_or(f64::NAN),
            last.uplink_bytes,
            log.personal_coordinates_sent
        );
    }
    Ok(())
}
