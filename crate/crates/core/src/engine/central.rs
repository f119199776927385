use super::{Experiment, MetricsRecord, RunLog, RunOptions};
use crate::config::{FederationConfig, Mode};
use crate::error::Result;
use crate::learner::{local_train, LocalTrainer, TrainSchedule};
use crate::seed;

/// Trains on the union of all client training rows. With `pinned_schedule`
/// each round restarts the optimizer with the seed a lone federated client
/// would use in that round, which makes it directly comparable to a
/// single-client federation.
pub fn run_centralized(cfg: &FederationConfig, _opts: RunOptions) -> Result<RunLog> {
    cfg.validate()?;
    let exp = Experiment::prepare(cfg)?;
    execute(cfg, &exp)
}

pub(super) fn execute(cfg: &FederationConfig, exp: &Experiment) -> Result<RunLog> {
    let mut pooled: Vec<usize> = exp.shards.concat();
    pooled.sort_unstable();
    let round_time = cfg.network.train_seconds_per_sample_epoch * pooled.len() as f64 * cfg.local_epochs as f64;

    let mut trainer = if cfg.pinned_schedule {
        None
    } else {
        Some(LocalTrainer::new(
            &exp.init,
            &exp.spec,
            &exp.train,
            &pooled,
            cfg.batch_size,
            &cfg.optimizer,
            seed::derive(cfg.seed, &[u64::MAX]),
        )?)
    };
    let mut params = exp.init.clone();
    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds as u64 {
        params = match trainer.as_mut() {
            Some(t) => {
                t.run_epochs(cfg.local_epochs)?;
                t.params().clone()
            }
            None => {
                let schedule = TrainSchedule {
                    epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                };
                let seed_r = seed::derive(cfg.seed, &[0, round]);
                local_train(&params, &exp.spec, &exp.train, &pooled, schedule, &cfg.optimizer, seed_r)?.new_params
            }
        };
        let scores = exp.score(cfg, &params, &[])?;
        records.push(MetricsRecord {
            index: round + 1,
            sim_time_s: round_time * (round + 1) as f64,
            eval_loss: scores.eval_loss,
            accuracy: scores.accuracy,
            mse: scores.mse,
            mean_client_accuracy: None,
            participants: 1,
            uplink_bytes: 0,
            downlink_bytes: 0,
            mean_staleness: 0.0,
            max_staleness: 0,
            mean_weight: 1.0,
            delivered_updates: 0,
            queued_updates: 0,
            rejected_updates: 0,
            availability_rate: 1.0,
            server_version: round + 1,
        });
    }
    Ok(RunLog {
        mode: Mode::Centralized,
        records,
        eval_fingerprint: exp.eval_fingerprint,
        server_events: 0,
        aggregates_decrypted: 0,
        personal_coordinates_sent: 0,
        generated_updates: 0,
        in_flight_updates: 0,
        final_params: params,
        stalled: false,
    })
}
