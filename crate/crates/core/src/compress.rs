//! Sparsify-and-ternarize codec: keep the k largest-magnitude coordinates,
//! quantize them to the mean kept magnitude with their signs, and account for
//! the wire cost. Also provides the identity codec used by uncompressed
//! baselines, and residual (error-feedback) computation.

use crate::error::{Error, Result};
use crate::numkit::ParamVector;

/// Ternary-encoded sparse update taking values in `{-mu, 0, +mu}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate {
    dim: usize,
    mu: f64,
    pos_indices: Vec<u32>,
    neg_indices: Vec<u32>,
}

impl CompressedUpdate {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn pos_indices(&self) -> &[u32] {
        &self.pos_indices
    }

    pub fn neg_indices(&self) -> &[u32] {
        &self.neg_indices
    }

    pub fn nnz(&self) -> usize {
        self.pos_indices.len() + self.neg_indices.len()
    }
}

/// Number of kept coordinates for dimension `d` and sparsity `q`:
/// `max(floor(d*q), 1)`.
pub fn keep_count(dim: usize, q: f64) -> usize {
    assert!(q > 0.0 && q <= 1.0, "sparsity q must be in (0, 1], got {q}");
    ((dim as f64 * q).floor() as usize).max(1)
}

/// Compress `t` keeping the `k = max(floor(d*q), 1)` largest-magnitude
/// coordinates (ties break to the lowest index). The quantization level is
/// the mean of the kept magnitudes; signs are preserved. Zero-magnitude
/// coordinates among the selected contribute nothing and are dropped from
/// the index lists, while the divisor stays k.
pub fn st_compress(t: &ParamVector, q: f64) -> CompressedUpdate {
    let d = t.dim();
    assert!(d >= 1, "st_compress on empty vector");
    let k = keep_count(d, q);

    let values = t.as_slice();
    let mut order: Vec<u32> = (0..d as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let ma = values[a as usize].abs();
        let mb = values[b as usize].abs();
        mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
    });

    let mut mass = 0.0;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in order.iter().take(k) {
        let v = values[i as usize];
        if v > 0.0 {
            mass += v;
            pos.push(i);
        } else if v < 0.0 {
            mass -= v;
            neg.push(i);
        }
    }
    pos.sort_unstable();
    neg.sort_unstable();

    CompressedUpdate {
        dim: d,
        mu: mass / k as f64,
        pos_indices: pos,
        neg_indices: neg,
    }
}

/// Dense vector with `+mu` at positive indices, `-mu` at negative indices,
/// zero elsewhere.
pub fn decode(c: &CompressedUpdate) -> ParamVector {
    let mut v = vec![0.0; c.dim];
    for &i in &c.pos_indices {
        v[i as usize] = c.mu;
    }
    for &i in &c.neg_indices {
        v[i as usize] = -c.mu;
    }
    ParamVector::from_vec(v)
}

/// Error-feedback residual: `delta - decode(c)`, elementwise.
pub fn residual(delta: &ParamVector, c: &CompressedUpdate) -> ParamVector {
    delta.sub(&decode(c))
}

fn ceil_log2(d: usize) -> u64 {
    debug_assert!(d >= 1);
    (usize::BITS - (d - 1).leading_zeros()) as u64
}

/// Idealized payload size in bits: 64 (mu) + 32 (count) plus, per kept
/// coordinate, an index (`ceil(log2 d)` bits) and a sign bit.
pub fn encoded_bits(c: &CompressedUpdate) -> u64 {
    64 + 32 + (c.nnz() as u64) * (ceil_log2(c.dim) + 1)
}

/// Bits for an uncompressed vector of dimension `d` (64-bit reals).
pub fn dense_bits(dim: usize) -> u64 {
    64 * dim as u64
}

const SIGN_POS: u8 = 0;
const SIGN_NEG: u8 = 1;

/// Serialized wire form: little-endian `[d: u32][k: u32][mu: f64]` followed
/// by `k` records of `[index: u32][sign: u8]`, sorted by index.
pub fn to_bytes(c: &CompressedUpdate) -> Vec<u8> {
    let k = c.nnz() as u32;
    let mut out = Vec::with_capacity(16 + 5 * k as usize);
    out.extend_from_slice(&(c.dim as u32).to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&c.mu.to_le_bytes());

    let mut records: Vec<(u32, u8)> = c
        .pos_indices
        .iter()
        .map(|&i| (i, SIGN_POS))
        .chain(c.neg_indices.iter().map(|&i| (i, SIGN_NEG)))
        .collect();
    records.sort_unstable_by_key(|r| r.0);
    for (i, sign) in records {
        out.extend_from_slice(&i.to_le_bytes());
        out.push(sign);
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<CompressedUpdate> {
    let fail = |reason: &str| Error::IdxFormat {
        path: "<wire>".into(),
        reason: reason.into(),
    };
    if bytes.len() < 16 {
        return Err(fail("truncated header"));
    }
    let dim = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mu = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if bytes.len() != 16 + 5 * k {
        return Err(fail("payload length does not match record count"));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in 0..k {
        let off = 16 + 5 * r;
        let idx = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if idx as usize >= dim {
            return Err(fail("index out of range"));
        }
        match bytes[off + 4] {
            SIGN_POS => pos.push(idx),
            SIGN_NEG => neg.push(idx),
            _ => return Err(fail("bad sign byte")),
        }
    }
    pos.sort_unstable();
    neg.sort_unstable();
    Ok(CompressedUpdate {
        dim,
        mu,
        pos_indices: pos,
        neg_indices: neg,
    })
}

/// Encoder choice for one direction of communication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Codec {
    /// Identity: payloads travel dense and residuals are identically zero.
    None,
    /// Ternary top-k at sparsity `q`.
    Ternary { q: f64 },
}

impl Codec {
    pub fn ternary(q: f64) -> Result<Codec> {
        if q > 0.0 && q <= 1.0 {
            Ok(Codec::Ternary { q })
        } else {
            Err(Error::config("q", format!("sparsity must be in (0, 1], got {q}")))
        }
    }

    pub fn encode(&self, delta: &ParamVector) -> Payload {
        match *self {
            Codec::None => Payload::Dense(delta.clone()),
            Codec::Ternary { q } => Payload::Ternary(st_compress(delta, q)),
        }
    }
}

/// A model-update message, either dense (identity codec) or ternary.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(ParamVector),
    Ternary(CompressedUpdate),
}

impl Payload {
    pub fn zero(dim: usize) -> Payload {
        Payload::Dense(ParamVector::zeros(dim))
    }

    pub fn decode(&self) -> ParamVector {
        match self {
            Payload::Dense(v) => v.clone(),
            Payload::Ternary(c) => decode(c),
        }
    }

    pub fn bits(&self) -> u64 {
        match self {
            Payload::Dense(v) => dense_bits(v.dim()),
            Payload::Ternary(c) => encoded_bits(c),
        }
    }

    /// Residual left after this payload stands in for `delta`. Exactly zero
    /// for dense payloads.
    pub fn residual_from(&self, delta: &ParamVector) -> ParamVector {
        match self {
            Payload::Dense(_) => ParamVector::zeros(delta.dim()),
            Payload::Ternary(c) => residual(delta, c),
        }
    }
}
