//! Client-side update encoding and the matching server-side decoding.
//!
//! A client's delta is first gathered into its *transmit space*: the shared
//! coordinates it actually trained (all of them, unless federated dropout
//! removed some units). Everything after that operates on the gathered
//! vector, so personal coordinates cannot reach the wire by construction.
//!
//! Order: error-feedback residual → clip → top-k → noise → quantize | encrypt.

use std::sync::Arc;

use crate::compression::{encoded_size, quantize_values, topk, Payload, SparseUpdate};
use crate::config::{CompressionConfig, FederationConfig};
use crate::error::{Error, Result};
use crate::param::{ParamVector, Partition};
use crate::privacy::paillier::{FixedPointCodec, PublicKey};
use crate::privacy::{add_gaussian_noise, clip_values, encrypt_update, DpConfig};
use crate::seed;

/// An update as it leaves a client.
#[derive(Debug, Clone)]
pub struct EncodedUpdate {
    pub client_id: usize,
    pub sequence: u64,
    pub base_round: u64,
    pub num_samples: usize,
    pub payload: Payload,
    /// Full-model coordinate of each transmit-space coordinate. Derivable by
    /// the server from the public layout and dropout seed.
    pub tx_map: Arc<Vec<usize>>,
    pub bytes: u64,
}

pub struct Encoder<'a> {
    pub compression: &'a CompressionConfig,
    pub dp: Option<&'a DpConfig>,
    pub paillier: Option<(&'a PublicKey, &'a FixedPointCodec, usize)>,
}

impl<'a> Encoder<'a> {
    pub fn from_config(
        cfg: &'a FederationConfig,
        paillier: Option<(&'a PublicKey, &'a FixedPointCodec)>,
    ) -> Self {
        let addends = cfg.clients * cfg.rounds;
        Encoder {
            compression: &cfg.compression,
            dp: cfg.privacy.dp.enabled.then_some(&cfg.privacy.dp),
            paillier: paillier.map(|(pk, codec)| (pk, codec, addends)),
        }
    }

    /// Encodes `delta` (full model space). `residual` is the client's
    /// error-feedback memory, full model space, updated in place.
    pub fn encode(
        &self,
        delta: &ParamVector,
        residual: &mut [f64],
        tx_map: &[usize],
        num_samples: usize,
        seed_c: u64,
    ) -> Result<Payload> {
        let ef = self.compression.error_feedback && self.compression.topk.is_some();
        let full = delta.values();
        let mut tx: Vec<f64> = tx_map
            .iter()
            .map(|&i| full[i] + if ef { residual[i] } else { 0.0 })
            .collect();
        if let Some(dp) = self.dp {
            clip_values(&mut tx, dp.clip_norm);
        }
        let m = tx.len();
        let (indices, mut values) = match self.compression.topk {
            Some(k) if m > 0 => {
                let s = topk(&tx, k)?;
                if ef {
                    let mut sent = vec![0.0; m];
                    for (&j, &v) in s.indices.iter().zip(&s.values) {
                        sent[j as usize] = v;
                    }
                    for (j, &i) in tx_map.iter().enumerate() {
                        residual[i] = tx[j] - sent[j];
                    }
                }
                (Some(s.indices), s.values)
            }
            _ => (None, tx),
        };
        if let Some(dp) = self.dp {
            let mut rng = seed::derived_rng(seed_c, &[seed::stream::DP_NOISE]);
            add_gaussian_noise(&mut values, dp.noise_std(), &mut rng);
        }
        if let Some((pk, codec, addends)) = self.paillier {
            return Ok(Payload::Encrypted(encrypt_update(
                pk,
                codec,
                &values,
                num_samples as f64,
                m,
                indices,
                addends,
                seed_c,
            )?));
        }
        if let Some(bits) = self.compression.quantize_bits {
            let mut q = quantize_values(&values, bits)?;
            q.dim = m;
            q.indices = indices.filter(|ix| ix.len() < m);
            return Ok(Payload::Quantized(q));
        }
        Ok(match indices {
            Some(indices) => Payload::Sparse(SparseUpdate {
                dim: m,
                indices,
                values,
            }),
            None => Payload::Dense(values),
        })
    }
}

impl EncodedUpdate {
    pub fn new(
        client_id: usize,
        sequence: u64,
        base_round: u64,
        num_samples: usize,
        payload: Payload,
        tx_map: Arc<Vec<usize>>,
    ) -> Self {
        let bytes = encoded_size(&payload);
        EncodedUpdate {
            client_id,
            sequence,
            base_round,
            num_samples,
            payload,
            tx_map,
            bytes,
        }
    }

    /// Full-model positions of the transmitted coordinates.
    pub fn positions(&self) -> Result<Vec<usize>> {
        self.payload
            .indices()
            .into_iter()
            .map(|j| {
                self.tx_map
                    .get(j)
                    .copied()
                    .ok_or_else(|| Error::Protocol(format!("coordinate {j} outside transmit space")))
            })
            .collect()
    }

    /// Server-side reconstruction of a plaintext delta in the full model space.
    pub fn decode_delta(&self, like: &ParamVector) -> Result<ParamVector> {
        if self.payload.dim() != self.tx_map.len() {
            return Err(Error::Dimension {
                expected: self.tx_map.len(),
                actual: self.payload.dim(),
            });
        }
        let values = self
            .payload
            .plain_values()
            .ok_or_else(|| Error::Protocol("encrypted update needs secure aggregation".into()))?;
        let mut full = vec![0.0; like.dim()];
        for (p, v) in self.positions()?.into_iter().zip(values) {
            full[p] = v;
        }
        like.with_values(full)
    }

    /// Number of transmitted coordinates that fall in personal segments.
    pub fn personal_leaks(&self, like: &ParamVector) -> Result<u64> {
        let personal = like.layout().mask(Partition::Personal);
        Ok(self
            .positions()?
            .into_iter()
            .filter(|&p| personal[p])
            .count() as u64)
    }
}
