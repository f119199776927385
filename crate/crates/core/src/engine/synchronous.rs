use rayon::prelude::*;

use super::{train_and_encode, ClientState, EncodedUpdate, Encoder, Experiment, MetricsRecord, RunLog, RunOptions};
use crate::aggregation::{apply, fedavg, ClientUpdate};
use crate::compression::{dense_size, Payload};
use crate::config::{FederationConfig, Mode};
use crate::error::Result;
use crate::netsim::{sample_available, transmit_time, Direction};
use crate::param::{restrict, Partition};
use crate::privacy::{self, SecureAggregator};

/// Lock-step rounds: every client trains on the broadcast model; only clients
/// online this round upload, flushing anything they queued while offline.
pub fn run_sync(cfg: &FederationConfig, opts: RunOptions) -> Result<RunLog> {
    cfg.validate()?;
    let exp = Experiment::prepare(cfg)?;
    execute(cfg, &exp, opts)?.into_result()
}

pub(super) fn execute(cfg: &FederationConfig, exp: &Experiment, opts: RunOptions) -> Result<RunLog> {
    let pool = opts.pool()?;
    let link = cfg.network.link();
    let availability = cfg.network.availability();
    let secure = if cfg.privacy.paillier {
        Some(privacy::setup(
            cfg.privacy.key_bits,
            cfg.privacy.fixed_point_scale,
            cfg.seed,
        )?)
    } else {
        None
    };
    let mut keyholder = None;
    let keys = secure.map(|(pk, codec, kh)| {
        keyholder = Some(kh);
        (pk, codec)
    });
    let encoder = Encoder::from_config(cfg, keys.as_ref().map(|(pk, codec)| (pk, codec)));

    let mut global = exp.init.clone();
    let mut clients: Vec<ClientState> = (0..exp.clients()).map(|c| ClientState::new(c, &exp.init)).collect();
    let shared_dim = exp.init.layout().partition_dim(Partition::Shared);
    let broadcast = dense_size(shared_dim);

    let mut records = Vec::with_capacity(cfg.rounds);
    let (mut time, mut up_bytes, mut down_bytes) = (0.0, 0u64, 0u64);
    let (mut draws, mut online) = (0u64, 0u64);
    let (mut delivered_total, mut server_events, mut leaks) = (0u64, 0u64, 0u64);

    for round in 0..cfg.rounds as u64 {
        down_bytes += broadcast * clients.len() as u64;
        let down_t = transmit_time(broadcast, &link, Direction::Down);

        let current = &global;
        let fresh: Vec<EncodedUpdate> = pool.install(|| {
            clients
                .par_iter_mut()
                .map(|state| {
                    let start = if cfg.personalization {
                        super::merge_personal(current, &state.local)?
                    } else {
                        current.clone()
                    };
                    train_and_encode(cfg, exp, &encoder, state, &start, round)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut delivered: Vec<EncodedUpdate> = Vec::new();
        let mut round_time = 0.0f64;
        for (state, update) in clients.iter_mut().zip(fresh) {
            leaks += update.personal_leaks(&global)?;
            let available = sample_available(state.id, round, &availability, cfg.seed);
            draws += 1;
            online += available as u64;
            let sent = state.queue.defer_or_send(update, available);
            let mut t = down_t + exp.train_time(cfg, state.id, cfg.local_epochs);
            for u in &sent {
                t += transmit_time(u.bytes, &link, Direction::Up);
                up_bytes += u.bytes;
            }
            round_time = round_time.max(t);
            delivered.extend(sent);
        }
        time += round_time;

        let staleness: Vec<u64> = delivered.iter().map(|u| round - u.base_round).collect();
        if !delivered.is_empty() {
            let mean = match (&keys, keyholder.as_mut()) {
                (Some((pk, _)), Some(kh)) => {
                    let mut agg = SecureAggregator::new(pk.clone(), global.dim());
                    for u in &delivered {
                        let Payload::Encrypted(enc) = &u.payload else {
                            unreachable!("encoder encrypts every update when keys are set")
                        };
                        agg.absorb(enc, &u.positions()?, u.num_samples as f64)?;
                    }
                    let values = kh.decrypt_aggregate(&agg.finish()?)?;
                    restrict(&global.with_values(values)?, Partition::Shared)
                }
                _ => {
                    let updates = delivered
                        .iter()
                        .map(|u| {
                            Ok(ClientUpdate {
                                client_id: u.client_id,
                                sequence: u.sequence,
                                base_round: u.base_round,
                                delta: u.decode_delta(&global)?,
                                num_samples: u.num_samples,
                                wire_bytes: u.bytes,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    fedavg(&updates)?
                }
            };
            global = apply(&global, &mean, 1.0)?;
            server_events += 1;
            delivered_total += delivered.len() as u64;
        }

        let scores = exp.score(cfg, &global, &clients)?;
        records.push(MetricsRecord {
            index: round + 1,
            sim_time_s: time,
            eval_loss: scores.eval_loss,
            accuracy: scores.accuracy,
            mse: scores.mse,
            mean_client_accuracy: scores.mean_client_accuracy,
            participants: delivered.len(),
            uplink_bytes: up_bytes,
            downlink_bytes: down_bytes,
            mean_staleness: mean_u64(&staleness),
            max_staleness: staleness.iter().copied().max().unwrap_or(0),
            mean_weight: if delivered.is_empty() { 0.0 } else { 1.0 },
            delivered_updates: delivered_total,
            queued_updates: clients.iter().map(|c| c.queue.len() as u64).sum(),
            rejected_updates: 0,
            availability_rate: online as f64 / draws as f64,
            server_version: server_events,
        });
    }

    Ok(RunLog {
        mode: Mode::Sync,
        records,
        eval_fingerprint: exp.eval_fingerprint,
        server_events,
        aggregates_decrypted: keyholder.as_ref().map_or(0, |k| k.aggregates_decrypted()),
        personal_coordinates_sent: leaks,
        generated_updates: clients.iter().map(|c| c.sequence).sum(),
        in_flight_updates: 0,
        final_params: global,
        stalled: delivered_total == 0,
    })
}

pub(super) fn mean_u64(v: &[u64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<u64>() as f64 / v.len() as f64
    }
}
