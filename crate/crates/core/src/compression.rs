//! Update codecs and model-reduction mechanisms.
//!
//! Values are `f64` in memory and `f32` on the wire. The binary layout is
//!
//! ```text
//! header  (16 bytes, little-endian)
//!   magic     u32  0x46445531
//!   version   u8   1
//!   encoding  u8   0 dense | 1 sparse | 2 quantized | 3 encrypted
//!   reserved  u16  quantizer bit width for encoding 2, else 0
//!   dim       u32  length of the coordinate space
//!   count     u32  number of transmitted coordinates
//! payload
//!   dense      f32 × dim
//!   sparse     u32 index × count, f32 value × count
//!   quantized  f32 lo, f32 hi, [u32 index × count if count < dim],
//!              code × count (u8 when bits ≤ 8, else u16)
//!   encrypted  u32 count, [u32 index × count if count < dim],
//!              per ciphertext: u32 byte length + big-endian magnitude
//! ```

use num_bigint::BigUint;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::MlpSpec;
use crate::param::{ModelLayout, ParamVector};
use crate::privacy::paillier::Ciphertext;
use crate::privacy::EncryptedVector;
use crate::seed;

pub const MAGIC: u32 = 0x4644_5531;
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: u64 = 16;

/// `⌈frac·dim⌉`, guarding against products like `0.7 × 10 = 7.000000000000001`.
fn fraction_ceil(frac: f64, dim: usize) -> usize {
    let exact = frac * dim as f64;
    let rounded = exact.round();
    let c = if (exact - rounded).abs() <= 1e-9 * exact.abs().max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    c as usize
}

fn fraction_floor(frac: f64, dim: usize) -> usize {
    let exact = frac * dim as f64;
    let rounded = exact.round();
    let c = if (exact - rounded).abs() <= 1e-9 * exact.abs().max(1.0) {
        rounded
    } else {
        exact.floor()
    };
    c as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub dim: usize,
    /// Strictly ascending.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

/// Number of coordinates top-k keeps for a vector of length `dim`.
pub fn topk_count(k: f64, dim: usize) -> usize {
    fraction_ceil(k, dim).clamp(1, dim.max(1))
}

/// Keeps the `⌈k·dim⌉` largest-magnitude entries; ties go to the lower index.
pub fn topk(delta: &[f64], k: f64) -> Result<SparseUpdate> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::invalid("k", format!("{k} is outside (0, 1]")));
    }
    if delta.is_empty() {
        return Err(Error::Empty("delta"));
    }
    let count = topk_count(k, delta.len());
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[b].abs().total_cmp(&delta[a].abs()).then(a.cmp(&b)));
    let mut kept = order[..count].to_vec();
    kept.sort_unstable();
    Ok(SparseUpdate {
        dim: delta.len(),
        indices: kept.iter().map(|&i| i as u32).collect(),
        values: kept.iter().map(|&i| delta[i]).collect(),
    })
}

impl SparseUpdate {
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::Wire("index and value counts differ".into()));
        }
        for w in self.indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Wire("indices must be strictly ascending".into()));
            }
        }
        if let Some(&last) = self.indices.last() {
            if last as usize >= self.dim {
                return Err(Error::Wire(format!("index {last} out of range for dim {}", self.dim)));
            }
        }
        Ok(())
    }

    pub fn densify_values(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        Ok(out)
    }
}

/// Dense vector with the sparse entries scattered into zeros.
pub fn densify(s: &SparseUpdate) -> Result<ParamVector> {
    ParamVector::new(s.densify_values()?, ModelLayout::flat(s.dim))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUpdate {
    pub dim: usize,
    pub bits: u8,
    pub lo: f64,
    pub hi: f64,
    /// Present when only a subset of coordinates is carried.
    pub indices: Option<Vec<u32>>,
    pub codes: Vec<u16>,
}

fn levels(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=16).contains(&bits) {
        return Err(Error::invalid("bits", format!("{bits} is outside [1, 16]")));
    }
    Ok(())
}

impl QuantizedUpdate {
    pub fn step(&self) -> f64 {
        if self.hi > self.lo {
            (self.hi - self.lo) / levels(self.bits) as f64
        } else {
            0.0
        }
    }

    pub fn dequantize_values(&self) -> Vec<f64> {
        let max = levels(self.bits) as u16;
        let step = self.step();
        self.codes
            .iter()
            .map(|&c| {
                if c == 0 || step == 0.0 {
                    self.lo
                } else if c == max {
                    self.hi
                } else {
                    self.lo + c as f64 * step
                }
            })
            .collect()
    }
}

/// Uniform quantization of `values` on `2^bits` levels spanning their range.
pub fn quantize_values(values: &[f64], bits: u8) -> Result<QuantizedUpdate> {
    check_bits(bits)?;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let max = levels(bits);
    let mut q = QuantizedUpdate {
        dim: values.len(),
        bits,
        lo,
        hi,
        indices: None,
        codes: Vec::with_capacity(values.len()),
    };
    let step = q.step();
    for &v in values {
        let code = if step == 0.0 {
            0
        } else {
            ((v - lo) / step).round().clamp(0.0, max as f64) as u16
        };
        q.codes.push(code);
    }
    Ok(q)
}

pub fn quantize(delta: &ParamVector, bits: u8) -> Result<QuantizedUpdate> {
    quantize_values(delta.values(), bits)
}

pub fn dequantize(q: &QuantizedUpdate) -> Result<ParamVector> {
    if q.indices.is_some() {
        return Err(Error::invalid("quantized", "sparse quantized updates need densify first"));
    }
    ParamVector::new(q.dequantize_values(), ModelLayout::flat(q.dim))
}

/// Zeroes the `⌊frac·dim⌋` smallest-magnitude entries (lower index first on ties).
pub fn prune_magnitude(params: &ParamVector, frac: f64) -> Result<ParamVector> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::invalid("frac", format!("{frac} is outside [0, 1)")));
    }
    let v = params.values();
    let count = fraction_floor(frac, v.len());
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(a.cmp(&b)));
    let mut out = v.to_vec();
    for &i in &order[..count] {
        out[i] = 0.0;
    }
    params.with_values(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    /// Kept unit indices per hidden layer, ascending.
    pub kept: Vec<Vec<usize>>,
    pub keep_rate: f64,
}

pub fn make_dropout_mask(spec: &MlpSpec, keep_rate: f64, seed: u64) -> Result<DropoutMask> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::invalid("keep_rate", format!("{keep_rate} is outside (0, 1]")));
    }
    let mut rng = seed::derived_rng(seed, &[seed::stream::DROPOUT]);
    let kept = spec
        .hidden
        .iter()
        .map(|&width| {
            let keep = fraction_ceil(keep_rate, width).clamp(1, width);
            let mut units = sample(&mut rng, width, keep).into_vec();
            units.sort_unstable();
            units
        })
        .collect();
    Ok(DropoutMask { kept, keep_rate })
}

impl DropoutMask {
    /// Architecture of the sub-network that trains under this mask.
    pub fn sub_spec(&self, spec: &MlpSpec) -> MlpSpec {
        MlpSpec {
            hidden: self.kept.iter().map(|k| k.len()).collect(),
            ..spec.clone()
        }
    }

    /// Full-model coordinate of every sub-network coordinate, in sub-layout order.
    pub fn coordinate_map(&self, spec: &MlpSpec) -> Vec<usize> {
        let widths = spec.widths();
        let layers = widths.len() - 1;
        let units = |layer: usize| -> Vec<usize> {
            if layer == 0 || layer == layers {
                (0..widths[layer]).collect()
            } else {
                self.kept[layer - 1].clone()
            }
        };
        let mut map = Vec::new();
        let mut off = 0;
        for k in 0..layers {
            let (n_in, n_out) = (widths[k], widths[k + 1]);
            let ins = units(k);
            let outs = units(k + 1);
            for &o in &outs {
                for &i in &ins {
                    map.push(off + o * n_in + i);
                }
            }
            off += n_in * n_out;
            for &o in &outs {
                map.push(off + o);
            }
            off += n_out;
        }
        map
    }

    /// Extracts the weights touching kept units.
    pub fn project(&self, params: &ParamVector, spec: &MlpSpec) -> Result<ParamVector> {
        let sub = self.sub_spec(spec);
        let map = self.coordinate_map(spec);
        let full = params.values();
        if full.len() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                actual: full.len(),
            });
        }
        ParamVector::new(map.iter().map(|&i| full[i]).collect(), sub.layout())
    }

    /// Scatters sub-network values into a copy of `base`; other entries keep
    /// their values from `base`.
    pub fn expand(
        &self,
        reduced: &ParamVector,
        spec: &MlpSpec,
        base: &ParamVector,
    ) -> Result<ParamVector> {
        let map = self.coordinate_map(spec);
        if reduced.dim() != map.len() {
            return Err(Error::Dimension {
                expected: map.len(),
                actual: reduced.dim(),
            });
        }
        let mut out = base.values().to_vec();
        for (&i, &v) in map.iter().zip(reduced.values()) {
            out[i] = v;
        }
        base.with_values(out)
    }
}

/// What goes on the wire for one update.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    Sparse(SparseUpdate),
    Quantized(QuantizedUpdate),
    Encrypted(EncryptedVector),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Dense,
    Sparse,
    Quantized,
    Encrypted,
}

impl Encoding {
    fn tag(self) -> u8 {
        match self {
            Encoding::Dense => 0,
            Encoding::Sparse => 1,
            Encoding::Quantized => 2,
            Encoding::Encrypted => 3,
        }
    }
}

impl Payload {
    pub fn encoding(&self) -> Encoding {
        match self {
            Payload::Dense(_) => Encoding::Dense,
            Payload::Sparse(_) => Encoding::Sparse,
            Payload::Quantized(_) => Encoding::Quantized,
            Payload::Encrypted(_) => Encoding::Encrypted,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Payload::Dense(v) => v.len(),
            Payload::Sparse(s) => s.dim,
            Payload::Quantized(q) => q.dim,
            Payload::Encrypted(e) => e.dim,
        }
    }

    /// Number of transmitted coordinates.
    pub fn count(&self) -> usize {
        match self {
            Payload::Dense(v) => v.len(),
            Payload::Sparse(s) => s.indices.len(),
            Payload::Quantized(q) => q.codes.len(),
            Payload::Encrypted(e) => e.ciphertexts.len(),
        }
    }

    /// Transmitted coordinate indices, ascending.
    pub fn indices(&self) -> Vec<usize> {
        let explicit = match self {
            Payload::Dense(_) => None,
            Payload::Sparse(s) => Some(&s.indices),
            Payload::Quantized(q) => q.indices.as_ref(),
            Payload::Encrypted(e) => e.indices.as_ref(),
        };
        match explicit {
            Some(ix) => ix.iter().map(|&i| i as usize).collect(),
            None => (0..self.dim()).collect(),
        }
    }

    /// Plaintext values in transmitted-coordinate order. Encrypted payloads
    /// have none.
    pub fn plain_values(&self) -> Option<Vec<f64>> {
        match self {
            Payload::Dense(v) => Some(v.clone()),
            Payload::Sparse(s) => Some(s.values.clone()),
            Payload::Quantized(q) => Some(q.dequantize_values()),
            Payload::Encrypted(_) => None,
        }
    }
}

fn index_block_bytes(count: usize, dim: usize) -> u64 {
    if count < dim {
        4 * count as u64
    } else {
        0
    }
}

/// Exact byte count of [`encode`]'s output.
pub fn encoded_size(payload: &Payload) -> u64 {
    HEADER_BYTES
        + match payload {
            Payload::Dense(v) => 4 * v.len() as u64,
            Payload::Sparse(s) => 8 * s.indices.len() as u64,
            Payload::Quantized(q) => {
                let width = if q.bits <= 8 { 1 } else { 2 };
                8 + q.indices.as_ref().map_or(0, |ix| 4 * ix.len() as u64)
                    + width * q.codes.len() as u64
            }
            Payload::Encrypted(e) => {
                4 + index_block_bytes(e.ciphertexts.len(), e.dim)
                    + e.ciphertexts
                        .iter()
                        .map(|c| 4 + c.byte_len() as u64)
                        .sum::<u64>()
            }
        }
}

/// Size of a dense update of `dim` coordinates.
pub fn dense_size(dim: usize) -> u64 {
    HEADER_BYTES + 4 * dim as u64
}

pub fn encode(payload: &Payload) -> Result<Vec<u8>> {
    let dim = payload.dim();
    let count = payload.count();
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Wire(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(encoded_size(payload) as usize);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(VERSION);
    out.push(payload.encoding().tag());
    let reserved: u16 = match payload {
        Payload::Quantized(q) => q.bits as u16,
        _ => 0,
    };
    out.extend_from_slice(&reserved.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(count, "count")?.to_le_bytes());
    let put_indices = |out: &mut Vec<u8>, ix: &[u32]| {
        for i in ix {
            out.extend_from_slice(&i.to_le_bytes());
        }
    };
    match payload {
        Payload::Dense(v) => {
            for &x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Payload::Sparse(s) => {
            s.validate()?;
            put_indices(&mut out, &s.indices);
            for &x in &s.values {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Payload::Quantized(q) => {
            out.extend_from_slice(&(q.lo as f32).to_le_bytes());
            out.extend_from_slice(&(q.hi as f32).to_le_bytes());
            if let Some(ix) = &q.indices {
                put_indices(&mut out, ix);
            }
            for &c in &q.codes {
                if q.bits <= 8 {
                    out.push(c as u8);
                } else {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        Payload::Encrypted(e) => {
            out.extend_from_slice(&to_u32(count, "count")?.to_le_bytes());
            if count < dim {
                let ix = e
                    .indices
                    .as_ref()
                    .ok_or_else(|| Error::Wire("partial encrypted update without indices".into()))?;
                put_indices(&mut out, ix);
            }
            for c in &e.ciphertexts {
                let bytes = c.to_bytes_be();
                out.extend_from_slice(&to_u32(bytes.len(), "ciphertext length")?.to_le_bytes());
                out.extend_from_slice(&bytes);
            }
        }
    }
    debug_assert_eq!(out.len() as u64, encoded_size(payload));
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Wire(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }

    fn indices(&mut self, count: usize) -> Result<Vec<u32>> {
        (0..count).map(|_| self.u32()).collect()
    }
}

/// Parses bytes produced by [`encode`]. Encrypted payloads come back with
/// `key_id` 0; the receiver knows which key it expects.
pub fn decode(bytes: &[u8]) -> Result<Payload> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.u32()? != MAGIC {
        return Err(Error::Wire("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Wire(format!("unsupported version {version}")));
    }
    let tag = r.u8()?;
    let reserved = r.u16()?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count > dim {
        return Err(Error::Wire(format!("count {count} exceeds dim {dim}")));
    }
    let payload = match tag {
        0 => {
            if count != dim {
                return Err(Error::Wire("dense payload must carry every coordinate".into()));
            }
            Payload::Dense((0..dim).map(|_| r.f32()).collect::<Result<_>>()?)
        }
        1 => {
            let indices = r.indices(count)?;
            let values = (0..count).map(|_| r.f32()).collect::<Result<_>>()?;
            let s = SparseUpdate {
                dim,
                indices,
                values,
            };
            s.validate()?;
            Payload::Sparse(s)
        }
        2 => {
            let bits = u8::try_from(reserved).map_err(|_| Error::Wire("bad bit width".into()))?;
            check_bits(bits).map_err(|e| Error::Wire(e.to_string()))?;
            let lo = r.f32()?;
            let hi = r.f32()?;
            let indices = if count < dim { Some(r.indices(count)?) } else { None };
            let codes = (0..count)
                .map(|_| if bits <= 8 { r.u8().map(u16::from) } else { r.u16() })
                .collect::<Result<Vec<u16>>>()?;
            if codes.iter().any(|&c| c as u32 > levels(bits)) {
                return Err(Error::Wire("quantization code out of range".into()));
            }
            Payload::Quantized(QuantizedUpdate {
                dim,
                bits,
                lo,
                hi,
                indices,
                codes,
            })
        }
        3 => {
            if r.u32()? as usize != count {
                return Err(Error::Wire("ciphertext count disagrees with header".into()));
            }
            let indices = if count < dim { Some(r.indices(count)?) } else { None };
            let mut ciphertexts = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.u32()? as usize;
                ciphertexts.push(Ciphertext::from(BigUint::from_bytes_be(r.take(len)?)));
            }
            Payload::Encrypted(EncryptedVector {
                key_id: 0,
                dim,
                indices,
                ciphertexts,
            })
        }
        t => return Err(Error::Wire(format!("unknown encoding tag {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Wire(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(payload)
}
