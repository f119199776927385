//! Server-side model composition.
//!
//! Only shared coordinates ever reach the global model: both [`fedavg`] and
//! [`async_apply`] pass deltas through [`restrict`] first, so personal
//! segments of the global vector keep their initial values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{axpy, restrict, ParamVector, Partition};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Client-local generation counter; orders updates from the same client.
    pub sequence: u64,
    /// Global version the client trained from.
    pub base_round: u64,
    pub delta: ParamVector,
    pub num_samples: usize,
    pub wire_bytes: u64,
}

/// Sample-weighted mean of the (shared part of the) update deltas.
///
/// Updates are reduced in `(client_id, sequence)` order, so the result does
/// not depend on arrival order.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::Empty("update list"))?;
    for u in updates {
        first.delta.check_layout(&u.delta)?;
        if u.num_samples == 0 {
            return Err(Error::invalid("num_samples", "must be at least 1"));
        }
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| (u.client_id, u.sequence));

    let dim = first.delta.dim();
    let mut mean = vec![0.0; dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut seen = 0.0;
    for u in order {
        let d = restrict(&u.delta, Partition::Shared);
        seen += u.num_samples as f64;
        let w = u.num_samples as f64 / seen;
        for (i, &x) in d.values().iter().enumerate() {
            // running weighted mean: identical inputs reproduce themselves exactly
            mean[i] += w * (x - mean[i]);
            lo[i] = lo[i].min(x);
            hi[i] = hi[i].max(x);
        }
    }
    for i in 0..dim {
        mean[i] = mean[i].clamp(lo[i], hi[i]);
    }
    first.delta.with_values(mean)
}

/// `global + rate · delta`.
pub fn apply(global: &ParamVector, delta: &ParamVector, rate: f64) -> Result<ParamVector> {
    axpy(rate, delta, global)
}

/// Recency weight `decay^staleness`, correctly rounded.
///
/// `powi` drifts by an ulp for moderate exponents, so the power is taken in
/// double-double arithmetic and rounded once at the end.
pub fn staleness_weight(staleness: u64, decay: f64) -> f64 {
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }
    fn mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        let (p, e) = two_prod(a.0, b.0);
        let e = e + (a.0 * b.1 + a.1 * b.0);
        let s = p + e;
        (s, e - (s - p))
    }
    let mut acc = (1.0, 0.0);
    let mut base = (decay, 0.0);
    let mut s = staleness;
    while s > 0 {
        if s & 1 == 1 {
            acc = mul(acc, base);
        }
        s >>= 1;
        if s > 0 {
            base = mul(base, base);
        }
    }
    acc.0 + acc.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsyncConfig {
    pub decay: f64,
    pub server_rate: f64,
    pub max_staleness: Option<u64>,
    /// Stop after this many accepted updates (default: rounds × clients).
    pub max_updates: Option<u64>,
    /// Stop once simulated time passes this bound.
    pub max_time_s: Option<f64>,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        AsyncConfig {
            decay: 0.9,
            server_rate: 1.0,
            max_staleness: None,
            max_updates: None,
            max_time_s: None,
        }
    }
}

impl AsyncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(
                "async.decay",
                format!("{} is outside the (0,1] bound", self.decay),
            ));
        }
        if !(self.server_rate > 0.0 && self.server_rate.is_finite()) {
            return Err(Error::config("async.server_rate", "must be positive"));
        }
        if let Some(t) = self.max_time_s {
            if !(t > 0.0) {
                return Err(Error::config("async.max_time_s", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncOutcome {
    pub params: ParamVector,
    pub staleness: u64,
    /// `server_rate · decay^staleness`, or 0 when rejected.
    pub weight: f64,
    pub accepted: bool,
}

pub fn async_apply(
    global: &ParamVector,
    update: &ClientUpdate,
    server_version: u64,
    cfg: &AsyncConfig,
) -> Result<AsyncOutcome> {
    global.check_layout(&update.delta)?;
    if update.base_round > server_version {
        return Err(Error::Protocol(format!(
            "update from client {} claims base round {} ahead of server version {}",
            update.client_id, update.base_round, server_version
        )));
    }
    let staleness = server_version - update.base_round;
    if cfg.max_staleness.is_some_and(|m| staleness > m) {
        return Ok(AsyncOutcome {
            params: global.clone(),
            staleness,
            weight: 0.0,
            accepted: false,
        });
    }
    let weight = cfg.server_rate * staleness_weight(staleness, cfg.decay);
    let params = apply(global, &restrict(&update.delta, Partition::Shared), weight)?;
    Ok(AsyncOutcome {
        params,
        staleness,
        weight,
        accepted: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{ModelLayout, Segment};
    use proptest::prelude::*;

    fn upd(id: usize, d: &[f64], n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            sequence: 0,
            base_round: 0,
            delta: ParamVector::from_slice(d),
            num_samples: n,
            wire_bytes: 0,
        }
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg(&[upd(0, &[1.5, -2.0], 7)]).unwrap().values(), &[1.5, -2.0]);
        assert_eq!(
            fedavg(&[upd(0, &[1.0, 3.0], 1), upd(1, &[3.0, 5.0], 1)]).unwrap().values(),
            &[2.0, 4.0]
        );
        assert_eq!(
            fedavg(&[upd(0, &[0.0, 0.0], 1), upd(1, &[4.0, 4.0], 3)]).unwrap().values(),
            &[3.0, 3.0]
        );
        assert!(matches!(fedavg(&[]), Err(Error::Empty(_))));
        assert!(fedavg(&[upd(0, &[1.0], 1), upd(1, &[1.0, 2.0], 1)]).is_err());
    }

    #[test]
    fn personal_entries_never_aggregated() {
        let layout = ModelLayout::new(vec![
            Segment::new("body", 2, Partition::Shared),
            Segment::new("head", 1, Partition::Personal),
        ])
        .unwrap();
        let mk = |id, v: Vec<f64>| ClientUpdate {
            client_id: id,
            sequence: 0,
            base_round: 0,
            delta: ParamVector::new(v, layout.clone()).unwrap(),
            num_samples: 2,
            wire_bytes: 0,
        };
        let agg = fedavg(&[mk(0, vec![1.0, 2.0, 9.0]), mk(1, vec![3.0, 4.0, -9.0])]).unwrap();
        assert_eq!(agg.values(), &[2.0, 3.0, 0.0]);

        let global = ParamVector::new(vec![0.5, 0.5, 0.5], layout.clone()).unwrap();
        let out = async_apply(&global, &mk(0, vec![1.0, 1.0, 1.0]), 0, &AsyncConfig::default())
            .unwrap();
        assert_eq!(out.params.values()[2], 0.5);
    }

    #[test]
    fn apply_examples() {
        let g = ParamVector::from_slice(&[2.0]);
        let d = g.with_values(vec![4.0]).unwrap();
        assert_eq!(apply(&g, &d, 0.0).unwrap(), g);
        assert_eq!(apply(&g, &d, 0.5).unwrap().values(), &[4.0]);
        let new = g.with_values(vec![-1.25]).unwrap();
        assert_eq!(apply(&g, &new.sub(&g).unwrap(), 1.0).unwrap(), new);
    }

    #[test]
    fn staleness_examples() {
        assert_eq!(staleness_weight(0, 0.9), 1.0);
        assert_eq!(staleness_weight(1, 0.9), 0.9);
        assert!((staleness_weight(3, 0.9) - 0.729).abs() < 1e-15);
        for s in 0..30 {
            assert!(staleness_weight(s + 1, 0.9) < staleness_weight(s, 0.9));
        }
    }

    #[test]
    fn async_apply_examples() {
        let cfg = AsyncConfig::default();
        let g = ParamVector::from_slice(&[1.0, 1.0]);
        let mut u = upd(0, &[1.0, 0.0], 1);
        u.base_round = 5;
        let out = async_apply(&g, &u, 5, &cfg).unwrap();
        assert_eq!(out.params, apply(&g, &u.delta, 1.0).unwrap());
        assert_eq!(out.weight, 1.0);

        let out = async_apply(&g, &u, 7, &cfg).unwrap();
        assert!((out.params.values()[0] - 1.81).abs() < 1e-15);
        assert_eq!(out.params.values()[1], 1.0);
        assert_eq!(out.staleness, 2);

        let capped = AsyncConfig {
            max_staleness: Some(10),
            ..cfg.clone()
        };
        let out = async_apply(&g, &u, 16, &capped).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.weight, 0.0);
        assert_eq!(out.params, g);

        assert!(matches!(async_apply(&g, &u, 4, &cfg), Err(Error::Protocol(_))));
    }

    #[test]
    fn decay_bounds_validated() {
        let bad = AsyncConfig {
            decay: 1.5,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("(0,1]"), "{msg}");
        assert!(AsyncConfig {
            decay: 1.0,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }

    fn updates_strategy() -> impl Strategy<Value = Vec<ClientUpdate>> {
        prop::collection::vec(
            (prop::collection::vec(-100.0..100.0f64, 4), 1usize..500),
            1..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (d, n))| upd(i, &d, n))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn fedavg_is_permutation_exact(ups in updates_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = ups.clone();
            shuffled.shuffle(&mut crate::seed::rng(seed));
            prop_assert_eq!(fedavg(&ups).unwrap(), fedavg(&shuffled).unwrap());
        }

        #[test]
        fn fedavg_is_convex(ups in updates_strategy()) {
            let agg = fedavg(&ups).unwrap();
            for i in 0..4 {
                let lo = ups.iter().map(|u| u.delta.values()[i]).fold(f64::INFINITY, f64::min);
                let hi = ups.iter().map(|u| u.delta.values()[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(agg.values()[i] >= lo && agg.values()[i] <= hi);
            }
        }

        #[test]
        fn fedavg_of_identical_updates_is_exact(
            d in prop::collection::vec(-100.0..100.0f64, 4),
            ns in prop::collection::vec(1usize..1000, 1..10),
        ) {
            let ups: Vec<_> = ns.iter().enumerate().map(|(i, &n)| upd(i, &d, n)).collect();
            let agg = fedavg(&ups).unwrap();
            prop_assert_eq!(agg.values(), &d[..]);
        }
    }
}
