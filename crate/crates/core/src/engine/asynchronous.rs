use std::sync::Arc;

use super::{train_and_encode, ClientState, EncodedUpdate, Encoder, Experiment, MetricsRecord, RunLog, RunOptions};
use crate::aggregation::{async_apply, ClientUpdate};
use crate::compression::dense_size;
use crate::config::{FederationConfig, Mode};
use crate::error::Result;
use crate::netsim::{sample_available, transmit_time, Direction, EventQueue};
use crate::param::{ParamVector, Partition};

#[derive(Debug)]
enum EventKind {
    DownloadArrive {
        client: usize,
        version: u64,
        global: Arc<ParamVector>,
    },
    TrainDone {
        client: usize,
    },
    UploadArrive {
        update: Box<EncodedUpdate>,
        last: bool,
    },
    RoundTick,
}

/// Event-driven run: the server applies each upload as it arrives, weighted
/// by `server_rate · decay^staleness`. Clients that find themselves offline
/// after training keep training from their own model and queue the results.
pub fn run_async(cfg: &FederationConfig, _opts: RunOptions) -> Result<RunLog> {
    cfg.validate()?;
    let exp = Experiment::prepare(cfg)?;
    execute(cfg, &exp)?.into_result()
}

pub(super) fn execute(cfg: &FederationConfig, exp: &Experiment) -> Result<RunLog> {
    let link = cfg.network.link();
    let availability = cfg.network.availability();
    let encoder = Encoder::from_config(cfg, None);
    let max_updates = cfg
        .async_
        .max_updates
        .unwrap_or((cfg.rounds * cfg.clients) as u64);

    let mut global = exp.init.clone();
    let mut version = 0u64;
    let mut clients: Vec<ClientState> = (0..exp.clients()).map(|c| ClientState::new(c, &exp.init)).collect();
    let mut held: Vec<(u64, Arc<ParamVector>)> = vec![(0, Arc::new(exp.init.clone())); clients.len()];
    let broadcast = dense_size(exp.init.layout().partition_dim(Partition::Shared));
    let down_t = transmit_time(broadcast, &link, Direction::Down);

    let mut queue = EventQueue::new();
    for c in 0..clients.len() {
        queue.push(
            down_t,
            EventKind::DownloadArrive {
                client: c,
                version: 0,
                global: Arc::new(global.clone()),
            },
        )?;
    }
    if let Some(t) = cfg.async_.max_time_s {
        queue.push(t, EventKind::RoundTick)?;
    }

    let mut records = Vec::new();
    let (mut up_bytes, mut down_bytes) = (0u64, broadcast * clients.len() as u64);
    let (mut draws, mut online) = (0u64, 0u64);
    let (mut processed, mut accepted, mut rejected, mut leaks) = (0u64, 0u64, 0u64, 0u64);
    while let Some(event) = queue.pop() {
        let now = event.time;
        match event.payload {
            EventKind::RoundTick => break,
            EventKind::DownloadArrive {
                client,
                version: v,
                global: g,
            } => {
                held[client] = (v, g);
                let state = &mut clients[client];
                state.local = if cfg.personalization {
                    super::merge_personal(&held[client].1, &state.local)?
                } else {
                    (*held[client].1).clone()
                };
                queue.push(
                    now + exp.train_time(cfg, client, cfg.local_epochs),
                    EventKind::TrainDone { client },
                )?;
            }
            EventKind::TrainDone { client } => {
                let state = &mut clients[client];
                if state.sequence >= max_updates {
                    continue;
                }
                let iteration = state.sequence;
                let start = state.local.clone();
                let update = train_and_encode(cfg, exp, &encoder, state, &start, held[client].0)?;
                leaks += update.personal_leaks(&global)?;
                let available = sample_available(client, iteration, &availability, cfg.seed);
                draws += 1;
                online += available as u64;
                let sent = state.queue.defer_or_send(update, available);
                if sent.is_empty() {
                    queue.push(
                        now + exp.train_time(cfg, client, cfg.local_epochs),
                        EventKind::TrainDone { client },
                    )?;
                    continue;
                }
                let mut t = now;
                let n = sent.len();
                for (i, u) in sent.into_iter().enumerate() {
                    t += transmit_time(u.bytes, &link, Direction::Up);
                    queue.push(
                        t,
                        EventKind::UploadArrive {
                            update: Box::new(u),
                            last: i + 1 == n,
                        },
                    )?;
                }
            }
            EventKind::UploadArrive { update, last } => {
                let client = update.client_id;
                let cu = ClientUpdate {
                    client_id: client,
                    sequence: update.sequence,
                    base_round: update.base_round,
                    delta: update.decode_delta(&global)?,
                    num_samples: update.num_samples,
                    wire_bytes: update.bytes,
                };
                let outcome = async_apply(&global, &cu, version, &cfg.async_)?;
                processed += 1;
                up_bytes += update.bytes;
                if outcome.accepted {
                    global = outcome.params;
                    version += 1;
                    accepted += 1;
                } else {
                    rejected += 1;
                }
                if last {
                    down_bytes += broadcast;
                    queue.push(
                        now + down_t,
                        EventKind::DownloadArrive {
                            client,
                            version,
                            global: Arc::new(global.clone()),
                        },
                    )?;
                }
                let scores = exp.score(cfg, &global, &clients)?;
                records.push(MetricsRecord {
                    index: processed,
                    sim_time_s: now,
                    eval_loss: scores.eval_loss,
                    accuracy: scores.accuracy,
                    mse: scores.mse,
                    mean_client_accuracy: scores.mean_client_accuracy,
                    participants: outcome.accepted as usize,
                    uplink_bytes: up_bytes,
                    downlink_bytes: down_bytes,
                    mean_staleness: outcome.staleness as f64,
                    max_staleness: outcome.staleness,
                    mean_weight: outcome.weight,
                    delivered_updates: processed,
                    queued_updates: clients.iter().map(|c| c.queue.len() as u64).sum(),
                    rejected_updates: rejected,
                    availability_rate: online as f64 / draws.max(1) as f64,
                    server_version: version,
                });
                if processed >= max_updates {
                    break;
                }
            }
        }
    }
    let mut in_flight = 0u64;
    while let Some(e) = queue.pop() {
        in_flight += matches!(e.payload, EventKind::UploadArrive { .. }) as u64;
    }

    Ok(RunLog {
        mode: Mode::Async,
        records,
        eval_fingerprint: exp.eval_fingerprint,
        server_events: accepted,
        aggregates_decrypted: 0,
        personal_coordinates_sent: leaks,
        generated_updates: clients.iter().map(|c| c.sequence).sum(),
        in_flight_updates: in_flight,
        final_params: global,
        stalled: accepted == 0,
    })
}
