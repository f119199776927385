//! Federated-learning protocol engine and network simulator for smart-farming
//! workloads at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`param`]: flat parameter vectors with a shared/personal segment layout.
//! - [`learner`]: small MLP / logistic / linear models with manual backprop,
//!   SGD and Adam, and the client-side local training loop.
//! - [`data`]: synthetic datasets, CSV ingestion, min-max normalisation and
//!   IID / Dirichlet / label-skew partitioning.
//! - [`aggregation`]: FedAvg and staleness-weighted asynchronous application.
//! - [`compression`]: top-k, quantisation, pruning, federated dropout and the
//!   binary update wire format.
//! - [`privacy`]: Gaussian mechanism and Paillier secure aggregation.
//! - [`netsim`]: availability sampling, link delays, offline queues and the
//!   discrete-event queue.
//! - [`engine`]: synchronous, asynchronous and centralised experiment drivers.
//! - [`metrics`]: confusion matrices, classification and regression reports.
//! - [`config`] and [`report`]: the JSON experiment schema and the run / sweep /
//!   validate front end used by the `fedfarm` binary.

pub mod aggregation;
pub mod compression;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod netsim;
pub mod param;
pub mod privacy;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
pub use param::{ModelLayout, ParamVector, Partition, Segment};
