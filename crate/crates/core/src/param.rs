//! Flat parameter vectors with a structural layout.
//!
//! A [`ModelLayout`] is an ordered list of named segments, each tagged as
//! shared (aggregated by the server) or personal (kept on the client). Vectors
//! hold the layout behind an [`Arc`] so that cloning a vector never copies the
//! segment list.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Shared,
    Personal,
}

impl Partition {
    pub fn other(self) -> Self {
        match self {
            Partition::Shared => Partition::Personal,
            Partition::Personal => Partition::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub len: usize,
    pub partition: Partition,
}

impl Segment {
    pub fn new(name: impl Into<String>, len: usize, partition: Partition) -> Self {
        Segment {
            name: name.into(),
            len,
            partition,
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct ModelLayout {
    segments: Vec<Segment>,
    offsets: Vec<usize>,
    dim: usize,
}

impl ModelLayout {
    pub fn new(segments: Vec<Segment>) -> Result<Arc<Self>> {
        let mut seen = HashSet::new();
        let mut offsets = Vec::with_capacity(segments.len());
        let mut dim = 0;
        for seg in &segments {
            if seg.len == 0 {
                return Err(Error::InvalidLayout(format!(
                    "segment `{}` has zero length",
                    seg.name
                )));
            }
            if !seen.insert(seg.name.as_str()) {
                return Err(Error::InvalidLayout(format!(
                    "duplicate segment name `{}`",
                    seg.name
                )));
            }
            offsets.push(dim);
            dim += seg.len;
        }
        Ok(Arc::new(ModelLayout {
            segments,
            offsets,
            dim,
        }))
    }

    /// A single shared segment of length `dim`.
    pub fn flat(dim: usize) -> Arc<Self> {
        Self::new(vec![Segment::new("w", dim, Partition::Shared)]).expect("flat layout")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn range(&self, index: usize) -> Range<usize> {
        let start = self.offsets[index];
        start..start + self.segments[index].len
    }

    pub fn segment_range(&self, name: &str) -> Option<Range<usize>> {
        self.segments
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.range(i))
    }

    /// Per-coordinate flag: true where the coordinate belongs to `partition`.
    pub fn mask(&self, partition: Partition) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.dim);
        for seg in &self.segments {
            out.extend(std::iter::repeat_n(seg.partition == partition, seg.len));
        }
        out
    }

    pub fn partition_dim(&self, partition: Partition) -> usize {
        self.segments
            .iter()
            .filter(|s| s.partition == partition)
            .map(|s| s.len)
            .sum()
    }

    /// Layouts are equal when they are the same allocation or have identical
    /// segment lists.
    pub fn same(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b) || a.segments == b.segments
    }
}

#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ModelLayout>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        ModelLayout::same(&self.layout, &other.layout) && self.values == other.values
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<ModelLayout>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Dimension {
                expected: layout.dim(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("entry {i} is not finite")));
        }
        Ok(ParamVector { values, layout })
    }

    /// Single shared segment wrapping `values`.
    pub fn from_slice(values: &[f64]) -> Self {
        let layout = ModelLayout::flat(values.len());
        ParamVector::new(values.to_vec(), layout).expect("finite values")
    }

    pub fn zeros(layout: Arc<ModelLayout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.dim()],
            layout,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values, self.layout.clone())
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if !ModelLayout::same(&self.layout, &other.layout) {
            if self.dim() != other.dim() {
                return Err(Error::Dimension {
                    expected: self.dim(),
                    actual: other.dim(),
                });
            }
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        ParamVector {
            values: self.values.iter().map(|v| v * c).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn sub(&self, other: &ParamVector) -> Result<Self> {
        self.check_layout(other)?;
        Ok(ParamVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn add(&self, other: &ParamVector) -> Result<Self> {
        axpy(1.0, other, self)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `y + a·x`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.check_layout(y)?;
    let values = if a == 0.0 {
        y.values.clone()
    } else {
        y.values
            .iter()
            .zip(&x.values)
            .map(|(yi, xi)| yi + a * xi)
            .collect()
    };
    Ok(ParamVector {
        values,
        layout: y.layout.clone(),
    })
}

pub fn l2_norm(x: &ParamVector) -> f64 {
    l2_norm_slice(&x.values)
}

pub fn l2_norm_slice(x: &[f64]) -> f64 {
    // Scaled accumulation avoids overflow for very large entries.
    let max = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let sum: f64 = x.iter().map(|v| (v / max) * (v / max)).sum();
    max * sum.sqrt()
}

/// Zeroes every coordinate outside `partition`.
pub fn restrict(x: &ParamVector, partition: Partition) -> ParamVector {
    let mut values = x.values.clone();
    for (i, seg) in x.layout.segments().iter().enumerate() {
        if seg.partition != partition {
            values[x.layout.range(i)].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    ParamVector {
        values,
        layout: x.layout.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn mixed() -> Arc<ModelLayout> {
        ModelLayout::new(vec![
            Segment::new("a", 2, Partition::Shared),
            Segment::new("b", 2, Partition::Personal),
        ])
        .unwrap()
    }

    #[test]
    fn axpy_examples() {
        let v = ParamVector::from_slice(&[1.5, -2.0]);
        let x = v.with_values(vec![9.0, 9.0]).unwrap();
        assert_eq!(axpy(0.0, &x, &v).unwrap().values(), v.values());

        let x = ParamVector::from_slice(&[1.0, 2.0]);
        let y = x.with_values(vec![3.0, 4.0]).unwrap();
        assert_eq!(axpy(1.0, &x, &y).unwrap().values(), &[4.0, 6.0]);

        let x = ParamVector::from_slice(&[2.0, 4.0]);
        let y = x.with_values(vec![1.0, 1.0]).unwrap();
        assert_eq!(axpy(-0.5, &x, &y).unwrap().values(), &[0.0, -1.0]);
    }

    #[test]
    fn axpy_rejects_mismatch() {
        let x = ParamVector::from_slice(&[1.0, 2.0]);
        let y = ParamVector::from_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(axpy(1.0, &x, &y), Err(Error::Dimension { .. })));
        let z = ParamVector::new(vec![0.0; 4], mixed()).unwrap();
        let w = ParamVector::from_slice(&[0.0; 4]);
        assert!(matches!(axpy(1.0, &z, &w), Err(Error::LayoutMismatch)));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&ParamVector::from_slice(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(l2_norm(&ParamVector::from_slice(&[3.0, 4.0])), 5.0);

        let mut rng = crate::seed::rng(11);
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(-10.0..10.0)).collect();
        // double loop: accumulate squares pairwise-by-index
        let mut acc = 0.0;
        for i in 0..v.len() {
            for j in 0..v.len() {
                if i == j {
                    acc += v[i] * v[j];
                }
            }
        }
        let got = l2_norm(&ParamVector::from_slice(&v));
        assert!((got - acc.sqrt()).abs() <= 1e-12 * acc.sqrt());
    }

    #[test]
    fn restrict_examples() {
        let x = ParamVector::from_slice(&[1.0, 2.0]);
        assert_eq!(restrict(&x, Partition::Shared), x);

        let personal = ModelLayout::new(vec![Segment::new("h", 2, Partition::Personal)]).unwrap();
        let x = ParamVector::new(vec![1.0, 2.0], personal).unwrap();
        assert_eq!(restrict(&x, Partition::Shared).values(), &[0.0, 0.0]);

        let x = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0], mixed()).unwrap();
        assert_eq!(restrict(&x, Partition::Shared).values(), &[1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn layout_validation() {
        assert!(ModelLayout::new(vec![
            Segment::new("a", 1, Partition::Shared),
            Segment::new("a", 1, Partition::Shared)
        ])
        .is_err());
        assert!(ModelLayout::new(vec![Segment::new("a", 0, Partition::Shared)]).is_err());
        assert!(ParamVector::new(vec![f64::NAN], ModelLayout::flat(1)).is_err());
    }

    proptest! {
        #[test]
        fn restrict_partitions_sum_to_original(v in prop::collection::vec(-1e6..1e6f64, 4)) {
            let x = ParamVector::new(v.clone(), mixed()).unwrap();
            let s = restrict(&x, Partition::Shared);
            let p = restrict(&x, Partition::Personal);
            let sum = s.add(&p).unwrap();
            prop_assert_eq!(sum.values(), &v[..]);
        }

        #[test]
        fn norm_is_absolutely_homogeneous(
            v in prop::collection::vec(-1e3..1e3f64, 1..50),
            c in -100.0..100.0f64,
        ) {
            let x = ParamVector::from_slice(&v);
            let lhs = l2_norm(&x.scale(c));
            let rhs = c.abs() * l2_norm(&x);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn axpy_identity_and_addition(
            x in prop::collection::vec(-1e3..1e3f64, 3),
            y in prop::collection::vec(-1e3..1e3f64, 3),
        ) {
            let xv = ParamVector::from_slice(&x);
            let yv = xv.with_values(y.clone()).unwrap();
            let out = axpy(0.0, &xv, &yv).unwrap();
            prop_assert_eq!(out.values(), &y[..]);
            let s = axpy(1.0, &xv, &yv).unwrap();
            for i in 0..3 {
                prop_assert_eq!(s.values()[i], x[i] + y[i]);
            }
        }
    }
}
