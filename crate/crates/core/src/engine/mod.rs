//! Experiment drivers.
//!
//! [`run_sync`] runs lock-step FedAvg rounds, [`run_async`] a discrete-event
//! simulation with staleness-weighted application, and [`run_centralized`]
//! trains one model on the pooled data. All three log one [`MetricsRecord`]
//! per round (or per processed upload) and are deterministic in the config
//! seed, independent of the worker count.

mod asynchronous;
mod central;
pub mod pipeline;
mod synchronous;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, FederationConfig, Mode};
use crate::data::{self, Dataset, NormalizationStats, Targets};
use crate::error::{Error, Result};
use crate::learner::{evaluate, init_model, MlpSpec, Task};
use crate::netsim::OfflineQueue;
use crate::param::{ParamVector, Partition};
use crate::seed;

pub use asynchronous::run_async;
pub use central::run_centralized;
pub use pipeline::{EncodedUpdate, Encoder};
pub use synchronous::run_sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Client-training threads; 0 picks the machine default.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { workers: 1 }
    }
}

impl RunOptions {
    pub fn workers(workers: usize) -> Self {
        RunOptions { workers }
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Round number (sync, centralized) or processed-upload count (async), from 1.
    pub index: u64,
    pub sim_time_s: f64,
    pub eval_loss: f64,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    /// Mean accuracy over clients' local held-out rows: personalized models
    /// when personalization is on, otherwise the global model.
    pub mean_client_accuracy: Option<f64>,
    /// Updates applied by this step.
    pub participants: usize,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub mean_staleness: f64,
    pub max_staleness: u64,
    /// Mean application weight of this step's updates (1 for FedAvg).
    pub mean_weight: f64,
    pub delivered_updates: u64,
    pub queued_updates: u64,
    pub rejected_updates: u64,
    /// Share of availability draws so far that came up online.
    pub availability_rate: f64,
    pub server_version: u64,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub mode: Mode,
    pub records: Vec<MetricsRecord>,
    /// Hash of the held-out evaluation rows; runs are only comparable when equal.
    pub eval_fingerprint: u64,
    /// Aggregations (sync) or update applications (async).
    pub server_events: u64,
    pub aggregates_decrypted: u64,
    /// Transmitted coordinates that belonged to personal segments. Always 0.
    pub personal_coordinates_sent: u64,
    /// Updates produced by client training.
    pub generated_updates: u64,
    /// Updates on the wire when the run ended.
    pub in_flight_updates: u64,
    pub final_params: ParamVector,
    pub stalled: bool,
}

impl RunLog {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.last().and_then(|r| r.accuracy)
    }

    pub fn sim_time(&self) -> f64 {
        self.last().map_or(0.0, |r| r.sim_time_s)
    }

    /// Server events per simulated second.
    pub fn server_load(&self) -> f64 {
        let t = self.sim_time();
        if t > 0.0 {
            self.server_events as f64 / t
        } else {
            0.0
        }
    }

    /// Simulated time at which accuracy first reaches `threshold`.
    pub fn time_to_accuracy(&self, threshold: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.accuracy.is_some_and(|a| a >= threshold))
            .map(|r| r.sim_time_s)
    }

    /// Turns a stalled log into [`Error::Stalled`].
    pub fn into_result(self) -> Result<Self> {
        if self.stalled {
            Err(Error::Stalled(format!(
                "no update reached the server in {} logged steps",
                self.records.len()
            )))
        } else {
            Ok(self)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// `a − b` in final accuracy (classification) or final MSE (regression).
    pub final_metric_delta: f64,
    pub final_loss_delta: f64,
    /// Uplink bytes of `a` over `b`; `None` when `b` sent nothing.
    pub bytes_ratio: Option<f64>,
    /// Time-to-threshold of `a` over `b`, when both reach it.
    pub time_to_threshold_ratio: Option<f64>,
}

pub fn compare(a: &RunLog, b: &RunLog, threshold: Option<f64>) -> Result<Comparison> {
    if a.eval_fingerprint != b.eval_fingerprint {
        return Err(Error::invalid("runs", "evaluated on different held-out sets"));
    }
    let (ra, rb) = match (a.last(), b.last()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Empty("run log")),
    };
    let metric = |r: &MetricsRecord| r.accuracy.or(r.mse).unwrap_or(f64::NAN);
    let time_ratio = threshold.and_then(|t| {
        let ta = a.time_to_accuracy(t)?;
        let tb = b.time_to_accuracy(t)?;
        (tb > 0.0).then(|| ta / tb)
    });
    Ok(Comparison {
        final_metric_delta: metric(ra) - metric(rb),
        final_loss_delta: ra.eval_loss - rb.eval_loss,
        bytes_ratio: (rb.uplink_bytes > 0).then(|| ra.uplink_bytes as f64 / rb.uplink_bytes as f64),
        time_to_threshold_ratio: time_ratio,
    })
}

/// Runs the mode named in the config. A stalled run is an error.
pub fn run(cfg: &FederationConfig, opts: RunOptions) -> Result<RunLog> {
    execute(cfg, opts)?.into_result()
}

/// Like [`run`] but returns stalled runs as logs with `stalled` set.
pub fn execute(cfg: &FederationConfig, opts: RunOptions) -> Result<RunLog> {
    cfg.validate()?;
    let exp = Experiment::prepare(cfg)?;
    match cfg.mode {
        Mode::Sync => synchronous::execute(cfg, &exp, opts),
        Mode::Async => asynchronous::execute(cfg, &exp),
        Mode::Centralized => central::execute(cfg, &exp),
    }
}

/// Data, partition and model shared by every client of a run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: MlpSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub test_rows: Vec<usize>,
    /// Per-client training rows of `train`.
    pub shards: Vec<Vec<usize>>,
    /// Per-client held-out rows of `train` (possibly empty).
    pub client_eval: Vec<Vec<usize>>,
    pub init: ParamVector,
    pub eval_fingerprint: u64,
}

impl Experiment {
    pub fn prepare(cfg: &FederationConfig) -> Result<Self> {
        let raw = match &cfg.dataset {
            DatasetConfig::Blobs {
                n,
                d,
                classes,
                separation,
            } => data::synth_blobs(cfg.seed, *n, *d, *classes, *separation)?,
            DatasetConfig::Linear { n, d, noise } => data::synth_linear(cfg.seed, *n, *d, *noise)?,
            DatasetConfig::Csv {
                path,
                label_column,
                task,
            } => data::load_csv(path, label_column, *task)?,
        };
        let (train_rows, test_rows) = raw.split_rows(cfg.eval_fraction, cfg.seed);
        if train_rows.is_empty() || test_rows.is_empty() {
            return Err(Error::config("eval_fraction", "leaves an empty train or test split"));
        }
        let mut train = raw.subset(&train_rows)?;
        let mut test = raw.subset(&test_rows)?;
        if cfg.normalize {
            let stats = NormalizationStats::fit(&train);
            train = stats.apply(&train)?;
            test = stats.apply(&test)?;
        }
        let parts = data::partition(&train, &cfg.partition, cfg.clients, cfg.seed)
            .map_err(|e| Error::config("partition", e.to_string()))?;
        let mut shards = Vec::with_capacity(parts.len());
        let mut client_eval = Vec::with_capacity(parts.len());
        for (c, rows) in parts.into_iter().enumerate() {
            let (keep, held) = hold_out(rows, cfg.client_eval_fraction, seed::derive(cfg.seed, &[c as u64]));
            shards.push(keep);
            client_eval.push(held);
        }
        let output_dim = match (&train.targets, cfg.task()) {
            (Targets::Labels { classes, .. }, Task::Classification) => *classes,
            (Targets::Values(_), Task::Regression) => 1,
            _ => return Err(Error::config("dataset.task", "dataset targets disagree with task")),
        };
        let spec = MlpSpec::new(train.d, cfg.model.hidden.clone(), output_dim, cfg.task())
            .with_activation(cfg.model.activation)
            .with_personal_head(if cfg.personalization {
                cfg.model.personal_head_layers
            } else {
                0
            });
        spec.validate()?;
        let init = init_model(&spec, cfg.seed);
        let eval_fingerprint = fingerprint(&test);
        let test_rows = (0..test.n).collect();
        Ok(Experiment {
            spec,
            train,
            test,
            test_rows,
            shards,
            client_eval,
            init,
            eval_fingerprint,
        })
    }

    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    pub(crate) fn train_time(&self, cfg: &FederationConfig, client: usize, epochs: usize) -> f64 {
        cfg.network.train_seconds_per_sample_epoch
            * self.shards[client].len() as f64
            * epochs as f64
            * cfg.network.slowdown(client, self.clients())
    }

    /// Evaluates the global model (and per-client models) into a partial record.
    pub(crate) fn score(
        &self,
        cfg: &FederationConfig,
        global: &ParamVector,
        clients: &[ClientState],
    ) -> Result<Scores> {
        let ev = evaluate(global, &self.spec, &self.test, &self.test_rows)?;
        let has_local_eval = self.client_eval.iter().any(|e| !e.is_empty());
        let mean_client_accuracy = if self.spec.task == Task::Classification
            && (has_local_eval || cfg.personalization)
            && !clients.is_empty()
        {
            let mut total = 0.0;
            let mut count = 0usize;
            for (c, state) in clients.iter().enumerate() {
                let rows = if has_local_eval { &self.client_eval[c] } else { &self.shards[c] };
                if rows.is_empty() {
                    continue;
                }
                let model = if cfg.personalization {
                    merge_personal(global, &state.local)?
                } else {
                    global.clone()
                };
                let r = evaluate(&model, &self.spec, &self.train, rows)?;
                total += r.accuracy().unwrap_or(0.0);
                count += 1;
            }
            (count > 0).then(|| total / count as f64)
        } else {
            None
        };
        Ok(Scores {
            eval_loss: ev.loss,
            accuracy: ev.accuracy(),
            mse: ev.mse(),
            mean_client_accuracy,
        })
    }
}

pub(crate) struct Scores {
    pub eval_loss: f64,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    pub mean_client_accuracy: Option<f64>,
}

fn hold_out(mut rows: Vec<usize>, fraction: f64, seed_c: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let held = ((fraction * rows.len() as f64).floor() as usize).min(rows.len().saturating_sub(1));
    if held == 0 {
        return (rows, Vec::new());
    }
    rows.shuffle(&mut seed::derived_rng(seed_c, &[seed::stream::SPLIT]));
    let mut eval = rows.split_off(rows.len() - held);
    rows.sort_unstable();
    eval.sort_unstable();
    (rows, eval)
}

fn fingerprint(test: &Dataset) -> u64 {
    let mut h = seed::derive(test.n as u64, &[test.d as u64]);
    for v in &test.features {
        h = seed::derive(h, &[v.to_bits()]);
    }
    match &test.targets {
        Targets::Labels { labels, .. } => {
            for &l in labels {
                h = seed::derive(h, &[l as u64]);
            }
        }
        Targets::Values(v) => {
            for x in v {
                h = seed::derive(h, &[x.to_bits()]);
            }
        }
    }
    h
}

/// Shared entries from `global`, personal entries from `local`.
pub fn merge_personal(global: &ParamVector, local: &ParamVector) -> Result<ParamVector> {
    global.check_layout(local)?;
    let personal = global.layout().mask(Partition::Personal);
    let values = global
        .values()
        .iter()
        .zip(local.values())
        .zip(personal)
        .map(|((&g, &l), p)| if p { l } else { g })
        .collect();
    global.with_values(values)
}

/// Mutable per-client state carried across rounds.
#[derive(Debug, Clone)]
pub(crate) struct ClientState {
    pub id: usize,
    /// Latest locally trained model; its personal entries are the client's head.
    pub local: ParamVector,
    pub residual: Vec<f64>,
    pub queue: OfflineQueue<EncodedUpdate>,
    pub sequence: u64,
}

impl ClientState {
    pub fn new(id: usize, init: &ParamVector) -> Self {
        ClientState {
            id,
            local: init.clone(),
            residual: vec![0.0; init.dim()],
            queue: OfflineQueue::new(),
            sequence: 0,
        }
    }
}

/// Trains one client from `start` and encodes the resulting delta.
pub(crate) fn train_and_encode(
    cfg: &FederationConfig,
    exp: &Experiment,
    encoder: &Encoder<'_>,
    state: &mut ClientState,
    start: &ParamVector,
    base_round: u64,
) -> Result<EncodedUpdate> {
    use crate::compression::make_dropout_mask;
    use crate::learner::{local_train, TrainSchedule};

    let c = state.id;
    let sequence = state.sequence;
    let seed_c = seed::derive(cfg.seed, &[c as u64, sequence]);
    let schedule = TrainSchedule {
        epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
    };
    let shared = exp.spec.layout().mask(Partition::Shared);
    let (new_full, trained): (ParamVector, Vec<usize>) = match cfg.compression.dropout_keep {
        Some(keep) if keep < 1.0 && !exp.spec.hidden.is_empty() => {
            let mask = make_dropout_mask(&exp.spec, keep, seed_c)?;
            let sub = mask.sub_spec(&exp.spec);
            let start_sub = mask.project(start, &exp.spec)?;
            let res = local_train(&start_sub, &sub, &exp.train, &exp.shards[c], schedule, &cfg.optimizer, seed_c)?;
            let full = mask.expand(&res.new_params, &exp.spec, start)?;
            (full, mask.coordinate_map(&exp.spec))
        }
        _ => {
            let res = local_train(start, &exp.spec, &exp.train, &exp.shards[c], schedule, &cfg.optimizer, seed_c)?;
            (res.new_params, (0..exp.spec.dim()).collect())
        }
    };
    let tx_map: Vec<usize> = trained.into_iter().filter(|&i| shared[i]).collect();
    let delta = new_full.sub(start)?;
    let n = exp.shards[c].len();
    let payload = encoder.encode(&delta, &mut state.residual, &tx_map, n, seed_c)?;
    state.local = new_full;
    state.sequence += 1;
    Ok(EncodedUpdate::new(c, sequence, base_round, n, payload, Arc::new(tx_map)))
}
