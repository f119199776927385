//! Differential privacy and secure aggregation.
//!
//! The Gaussian mechanism clips an update to an L2 ball of radius `C` and adds
//! independent `N(0, (σC)²)` noise per coordinate. Secure aggregation encrypts
//! sample-weighted updates under Paillier; the server only ever multiplies
//! ciphertexts, and the [`Keyholder`] will only decrypt an [`AggregateCiphertext`].

pub mod paillier;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{l2_norm_slice, ParamVector};
use crate::seed;
use paillier::{Ciphertext, FixedPointCodec, PublicKey, SecretKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub enabled: bool,
    pub sigma: f64,
    pub clip_norm: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            enabled: false,
            sigma: 0.1,
            clip_norm: 1.0,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("privacy.dp.sigma", "must be a non-negative number"));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::config("privacy.dp.clip_norm", "must be positive"));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        self.sigma * self.clip_norm
    }
}

/// Scales `values` onto the L2 ball of radius `clip_norm` if it lies outside.
pub fn clip_values(values: &mut [f64], clip_norm: f64) {
    let norm = l2_norm_slice(values);
    if norm > clip_norm {
        let s = clip_norm / norm;
        values.iter_mut().for_each(|v| *v *= s);
        // rounding can leave the norm an ulp above the bound
        while l2_norm_slice(values) > clip_norm {
            values.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        }
    }
}

pub fn add_gaussian_noise<R: Rng>(values: &mut [f64], std: f64, rng: &mut R) {
    if std == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    for v in values {
        *v += normal.sample(rng);
    }
}

/// Clip then perturb. The noise stream is keyed by `seed`.
pub fn gaussian_mechanism(delta: &ParamVector, cfg: &DpConfig, seed: u64) -> Result<ParamVector> {
    cfg.validate()?;
    let mut values = delta.values().to_vec();
    clip_values(&mut values, cfg.clip_norm);
    let mut rng = seed::derived_rng(seed, &[seed::stream::DP_NOISE]);
    add_gaussian_noise(&mut values, cfg.noise_std(), &mut rng);
    delta.with_values(values)
}

/// Per-coordinate ciphertexts of one client's (weighted) update.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedVector {
    /// Fingerprint of the encrypting key; 0 when it came off the wire and the
    /// receiver has not yet bound it to a key.
    pub key_id: u64,
    pub dim: usize,
    pub indices: Option<Vec<u32>>,
    pub ciphertexts: Vec<Ciphertext>,
}

impl EncryptedVector {
    pub fn bind(mut self, pk: &PublicKey) -> Self {
        self.key_id = pk.key_id();
        self
    }
}

/// Encrypts `weight · values[j]` for every transmitted coordinate.
///
/// `addends` is the number of terms the aggregate will sum and bounds the
/// allowed magnitude. Randomizers are drawn per coordinate from `seed`, so the
/// result does not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn encrypt_update(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    values: &[f64],
    weight: f64,
    dim: usize,
    indices: Option<Vec<u32>>,
    addends: usize,
    seed: u64,
) -> Result<EncryptedVector> {
    if let Some(ix) = &indices {
        if ix.len() != values.len() {
            return Err(Error::Dimension {
                expected: ix.len(),
                actual: values.len(),
            });
        }
    } else if values.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: values.len(),
        });
    }
    let ciphertexts = values
        .par_iter()
        .enumerate()
        .map(|(j, &v)| {
            let m = codec.encode(weight * v, addends)?;
            let mut rng = seed::derived_rng(seed, &[seed::stream::PAILLIER, j as u64]);
            pk.encrypt(&m, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncryptedVector {
        key_id: pk.key_id(),
        dim,
        indices,
        ciphertexts,
    })
}

/// Homomorphic sum of client ciphertexts, built by the server.
#[derive(Debug, Clone)]
pub struct SecureAggregator {
    pk: PublicKey,
    acc: Vec<Option<Ciphertext>>,
    weight_sum: f64,
    contributors: usize,
}

/// The only ciphertext type a [`Keyholder`] accepts.
#[derive(Debug, Clone)]
pub struct AggregateCiphertext {
    key_id: u64,
    sums: Vec<Option<Ciphertext>>,
    weight_sum: f64,
    contributors: usize,
}

impl AggregateCiphertext {
    pub fn contributors(&self) -> usize {
        self.contributors
    }

    pub fn dim(&self) -> usize {
        self.sums.len()
    }
}

impl SecureAggregator {
    pub fn new(pk: PublicKey, dim: usize) -> Self {
        SecureAggregator {
            pk,
            acc: vec![None; dim],
            weight_sum: 0.0,
            contributors: 0,
        }
    }

    /// Adds one client's ciphertexts. `positions[j]` is the aggregate
    /// coordinate of ciphertext `j`; `weight` is the client's sample count.
    pub fn absorb(&mut self, update: &EncryptedVector, positions: &[usize], weight: f64) -> Result<()> {
        if update.key_id != self.pk.key_id() {
            return Err(Error::KeyMismatch);
        }
        if positions.len() != update.ciphertexts.len() {
            return Err(Error::Dimension {
                expected: update.ciphertexts.len(),
                actual: positions.len(),
            });
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= self.acc.len()) {
            return Err(Error::Protocol(format!("ciphertext position {p} out of range")));
        }
        for (&p, c) in positions.iter().zip(&update.ciphertexts) {
            self.acc[p] = Some(match self.acc[p].take() {
                Some(a) => self.pk.add(&a, c),
                None => c.clone(),
            });
        }
        self.weight_sum += weight;
        self.contributors += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<AggregateCiphertext> {
        if self.contributors == 0 {
            return Err(Error::Empty("secure aggregate"));
        }
        Ok(AggregateCiphertext {
            key_id: self.pk.key_id(),
            sums: self.acc,
            weight_sum: self.weight_sum,
            contributors: self.contributors,
        })
    }
}

/// Holder of the secret key. Counts every decryption it performs.
#[derive(Debug)]
pub struct Keyholder {
    secret: SecretKey,
    codec: FixedPointCodec,
    aggregates_decrypted: u64,
}

impl Keyholder {
    pub fn new(secret: SecretKey, codec: FixedPointCodec) -> Self {
        Keyholder {
            secret,
            codec,
            aggregates_decrypted: 0,
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.secret.public()
    }

    /// Decrypts the summed weighted update and divides by the total weight.
    /// Coordinates no client sent decode as 0.
    pub fn decrypt_aggregate(&mut self, agg: &AggregateCiphertext) -> Result<Vec<f64>> {
        if agg.key_id != self.public().key_id() {
            return Err(Error::KeyMismatch);
        }
        self.aggregates_decrypted += 1;
        let secret = &self.secret;
        let codec = &self.codec;
        agg.sums
            .par_iter()
            .map(|c| match c {
                Some(c) => Ok(codec.decode(&secret.decrypt(c)?) / agg.weight_sum),
                None => Ok(0.0),
            })
            .collect()
    }

    pub fn aggregates_decrypted(&self) -> u64 {
        self.aggregates_decrypted
    }
}

/// One-shot weighted mean of dense plaintext updates through encryption.
pub fn secure_aggregate(
    updates: &[(&[f64], usize)],
    pk: &PublicKey,
    codec: &FixedPointCodec,
    keyholder: &mut Keyholder,
    seed: u64,
) -> Result<Vec<f64>> {
    let first = updates.first().ok_or(Error::Empty("update list"))?;
    let dim = first.0.len();
    let positions: Vec<usize> = (0..dim).collect();
    let mut agg = SecureAggregator::new(pk.clone(), dim);
    for (i, &(values, n)) in updates.iter().enumerate() {
        let enc = encrypt_update(
            pk,
            codec,
            values,
            n as f64,
            dim,
            None,
            updates.len(),
            seed::derive(seed, &[i as u64]),
        )?;
        agg.absorb(&enc, &positions, n as f64)?;
    }
    keyholder.decrypt_aggregate(&agg.finish()?)
}

/// Convenience for building a key, codec and keyholder together.
pub fn setup(key_bits: u64, scale: u64, seed: u64) -> Result<(PublicKey, FixedPointCodec, Keyholder)> {
    let kp = paillier::keygen(key_bits, seed)?;
    let codec = FixedPointCodec::new(scale, &kp.public)?;
    Ok((kp.public.clone(), codec.clone(), Keyholder::new(kp.secret, codec)))
}
