//! Datasets: synthetic generators, CSV ingestion, min-max normalisation and
//! client partitioning.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::Task;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels { labels: Vec<usize>, classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Labels { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }
}

/// Row-major feature matrix with per-row targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub d: usize,
    pub features: Vec<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(features: Vec<f64>, d: usize, targets: Targets) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        if d == 0 || features.len() != n * d {
            return Err(Error::Dimension {
                expected: n * d,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features", "all feature values must be finite"));
        }
        match &targets {
            Targets::Labels { labels, classes } => {
                if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::invalid(
                        "labels",
                        format!("label {bad} is not below class count {classes}"),
                    ));
                }
            }
            Targets::Values(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("targets", "regression targets must be finite"));
                }
            }
        }
        Ok(Dataset {
            n,
            d,
            features,
            targets,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn task(&self) -> Task {
        match self.targets {
            Targets::Labels { .. } => Task::Classification,
            Targets::Values(_) => Task::Regression,
        }
    }

    pub fn class_count(&self) -> Option<usize> {
        match self.targets {
            Targets::Labels { classes, .. } => Some(classes),
            Targets::Values(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                classes: *classes,
            },
            Targets::Values(v) => Targets::Values(rows.iter().map(|&r| v[r]).collect()),
        };
        Dataset::new(features, self.d, targets)
    }

    /// Seeded split into (train, held-out) row lists; both sorted ascending.
    pub fn split_rows(&self, held_out_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut rows: Vec<usize> = (0..self.n).collect();
        let mut rng = seed::derived_rng(seed, &[seed::stream::SPLIT]);
        rows.shuffle(&mut rng);
        let held = ((held_out_fraction * self.n as f64).round() as usize).min(self.n);
        let mut test = rows[..held].to_vec();
        let mut train = rows[held..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        (train, test)
    }
}

fn unit_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Gaussian blobs with unit variance around class means on a sphere of radius
/// `separation`. Means are spread by farthest-point selection among seeded
/// candidate directions. Row `i` has label `i mod classes`.
pub fn synth_blobs(seed: u64, n: usize, d: usize, classes: usize, separation: f64) -> Result<Dataset> {
    if classes == 0 || d == 0 {
        return Err(Error::invalid("classes", "classes and d must be positive"));
    }
    if n < classes {
        return Err(Error::invalid("n", format!("{n} rows cannot cover {classes} classes")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation", "must be nonnegative"));
    }
    let mut rng = seed::derived_rng(seed, &[seed::stream::DATA]);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let best = (0..64)
            .map(|_| unit_direction(&mut rng, d))
            .map(|cand| {
                let gap = means
                    .iter()
                    .map(|m| m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                (gap, cand)
            })
            .fold(None::<(f64, Vec<f64>)>, |acc, c| match acc {
                Some(a) if a.0 >= c.0 => Some(a),
                _ => Some(c),
            })
            .expect("candidates")
            .1;
        means.push(best);
    }
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for mu in &means[c] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(separation * mu + z);
        }
        labels.push(c);
    }
    Dataset::new(features, d, Targets::Labels { labels, classes })
}

/// Linear regression data `y = w·x + b + noise·z` with `x ~ U(0,1)^d`.
pub fn synth_linear(seed: u64, n: usize, d: usize, noise: f64) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    let mut rng = seed::derived_rng(seed, &[seed::stream::DATA]);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: f64 = rng.random_range(-0.5..0.5);
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: f64 = rng.sample(StandardNormal);
        targets.push(w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b + noise * z);
        features.extend(x);
    }
    Dataset::new(features, d, Targets::Values(targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(data: &Dataset) -> Self {
        let mut min = vec![f64::INFINITY; data.d];
        let mut max = vec![f64::NEG_INFINITY; data.d];
        for r in 0..data.n {
            for (j, &v) in data.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        NormalizationStats { min, max }
    }

    fn map(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span > 0.0 {
            (v - self.min[j]) / span
        } else {
            0.0
        }
    }

    /// Maps columns with these statistics. Rows outside the fitted range land
    /// outside [0, 1].
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.d != self.min.len() {
            return Err(Error::Dimension {
                expected: self.min.len(),
                actual: data.d,
            });
        }
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(i, &v)| self.map(i % data.d, v))
            .collect();
        Dataset::new(features, data.d, data.targets.clone())
    }

    pub fn denormalize(&self, data: &Dataset) -> Result<Dataset> {
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % data.d;
                self.min[j] + v * (self.max[j] - self.min[j])
            })
            .collect();
        Dataset::new(features, data.d, data.targets.clone())
    }
}

/// Maps every column to [0, 1]; constant columns map to 0.
pub fn normalize_minmax(data: &Dataset) -> Result<(Dataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(data);
    Ok((stats.apply(data)?, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Iid,
    Dirichlet,
    LabelSkew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub scheme: Scheme,
    pub alpha: f64,
    pub classes_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            scheme: Scheme::Iid,
            alpha: 0.5,
            classes_per_client: 2,
        }
    }
}

/// Splits `0..data.n` into `num_clients` disjoint, sorted, nonempty shards.
pub fn partition(
    data: &Dataset,
    cfg: &PartitionConfig,
    num_clients: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients", "must be at least 1"));
    }
    if num_clients > data.n {
        return Err(Error::invalid(
            "num_clients",
            format!("{num_clients} clients exceed {} samples", data.n),
        ));
    }
    let mut rng = seed::derived_rng(seed, &[seed::stream::PARTITION]);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    match cfg.scheme {
        Scheme::Iid => {
            let mut rows: Vec<usize> = (0..data.n).collect();
            rows.shuffle(&mut rng);
            for (i, r) in rows.into_iter().enumerate() {
                shards[i % num_clients].push(r);
            }
        }
        Scheme::Dirichlet => {
            if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
                return Err(Error::invalid("alpha", "must be positive"));
            }
            let gamma = Gamma::new(cfg.alpha, 1.0)
                .map_err(|e| Error::invalid("alpha", e.to_string()))?;
            for mut rows in rows_by_class(data)? {
                rows.shuffle(&mut rng);
                let mut props: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = props.iter().sum();
                if total > 0.0 && total.is_finite() {
                    props.iter_mut().for_each(|p| *p /= total);
                } else {
                    let pick = rng.random_range(0..num_clients);
                    props = (0..num_clients).map(|i| f64::from(u8::from(i == pick))).collect();
                }
                let n_c = rows.len();
                let mut start = 0;
                let mut acc = 0.0;
                for (client, p) in props.iter().enumerate() {
                    acc += p;
                    let end = if client + 1 == num_clients {
                        n_c
                    } else {
                        ((acc * n_c as f64).round() as usize).clamp(start, n_c)
                    };
                    shards[client].extend_from_slice(&rows[start..end]);
                    start = end;
                }
            }
        }
        Scheme::LabelSkew => {
            let by_class = rows_by_class(data)?;
            let classes = by_class.len();
            let per = cfg.classes_per_client;
            if per == 0 || per > classes {
                return Err(Error::invalid(
                    "classes_per_client",
                    format!("must lie in [1, {classes}]"),
                ));
            }
            if num_clients * per < classes {
                return Err(Error::invalid(
                    "classes_per_client",
                    format!("{num_clients} clients x {per} classes cannot cover {classes} classes"),
                ));
            }
            let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for client in 0..num_clients {
                for j in 0..per {
                    holders[(client * per + j) % classes].push(client);
                }
            }
            for (class, mut rows) in by_class.into_iter().enumerate() {
                rows.shuffle(&mut rng);
                let h = &holders[class];
                for (i, r) in rows.into_iter().enumerate() {
                    shards[h[i % h.len()]].push(r);
                }
            }
        }
    }
    repair_empty(&mut shards);
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

fn rows_by_class(data: &Dataset) -> Result<Vec<Vec<usize>>> {
    let Targets::Labels { labels, classes } = &data.targets else {
        return Err(Error::invalid("scheme", "non-IID partitioning needs class labels"));
    };
    let mut out = vec![Vec::new(); *classes];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    Ok(out)
}

fn repair_empty(shards: &mut [Vec<usize>]) {
    while let Some(empty) = shards.iter().position(|s| s.is_empty()) {
        let largest = (0..shards.len())
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("nonempty shard list");
        let moved = shards[largest].pop().expect("largest shard has rows");
        shards[empty].push(moved);
    }
}

/// Reads a headed CSV; every column except `label_column` must be numeric.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, task: Task) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: shown.clone(),
            reason: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::UnknownColumn(label_column.to_string()))?;
    let d = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == label_idx {
                match task {
                    Task::Classification => {
                        let next = ids.len();
                        labels.push(*ids.entry(cell.to_string()).or_insert(next));
                    }
                    Task::Regression => values.push(parse_cell(cell, line, &headers[j])?),
                }
            } else {
                features.push(parse_cell(cell, line, &headers[j])?);
            }
        }
    }
    let targets = match task {
        Task::Classification => Targets::Labels {
            labels,
            classes: ids.len(),
        },
        Task::Regression => Targets::Values(values),
    };
    Dataset::new(features, d, targets)
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row: line,
            column: column.trim().to_string(),
            value: cell.to_string(),
        })
}
