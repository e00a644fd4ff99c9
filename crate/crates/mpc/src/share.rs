//! Additive shares and the local (communication-free) operations on them.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{MpcError, Result};
use crate::fixed::{encode, FixedPointConfig, RingTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    P0,
    P1,
}

impl PartyId {
    pub fn index(self) -> usize {
        match self {
            PartyId::P0 => 0,
            PartyId::P1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<PartyId> {
        match i {
            0 => Some(PartyId::P0),
            1 => Some(PartyId::P1),
            _ => None,
        }
    }

    pub fn other(self) -> PartyId {
        match self {
            PartyId::P0 => PartyId::P1,
            PartyId::P1 => PartyId::P0,
        }
    }
}

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "party{}", self.index())
    }
}

/// Deterministic tensor-id derivation. Both parties run the same sequence of
/// operations, so ids agree without any coordination.
pub fn derive_id(op: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(op ^ 0x5EC0_4E5E_u64);
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) mod op {
    pub const ADD: u64 = 1;
    pub const SUB: u64 = 2;
    pub const NEG: u64 = 3;
    pub const ADD_PUBLIC: u64 = 4;
    pub const MUL_INT: u64 = 5;
    pub const TRUNC: u64 = 6;
    pub const DIV: u64 = 7;
    pub const MUL: u64 = 8;
    pub const MATMUL: u64 = 9;
    pub const TRANSPOSE: u64 = 10;
    pub const GATHER: u64 = 11;
    pub const SUM: u64 = 12;
    pub const PUBLIC: u64 = 13;
    pub const INPUT: u64 = 14;
    pub const CONCAT: u64 = 15;
    pub const LTZ: u64 = 16;
    pub const RESHAPE: u64 = 17;
    pub const SCALE: u64 = 18;
}

/// One party's additive share of a tensor.
///
/// Shares of the two parties for the same value carry the same `id`, `session`
/// and `shape`; their elementwise sum mod 2^64 is the encoded value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedTensor {
    owner: PartyId,
    id: u64,
    session: u32,
    shape: Vec<usize>,
    share: Vec<u64>,
    cfg: FixedPointConfig,
}

impl SharedTensor {
    pub fn from_parts(
        owner: PartyId,
        id: u64,
        session: u32,
        shape: Vec<usize>,
        share: Vec<u64>,
        cfg: FixedPointConfig,
    ) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != share.len() {
            return Err(MpcError::ShapeMismatch(shape, vec![share.len()]));
        }
        Ok(SharedTensor {
            owner,
            id,
            session,
            shape,
            share,
            cfg,
        })
    }

    /// Sharing of a public value: party 0 holds the value, party 1 holds zeros.
    pub fn public(owner: PartyId, session: u32, value: &RingTensor) -> Self {
        let share = match owner {
            PartyId::P0 => value.data().to_vec(),
            PartyId::P1 => vec![0; value.len()],
        };
        let id = derive_id(op::PUBLIC, value.data());
        SharedTensor {
            owner,
            id,
            session,
            shape: value.shape().to_vec(),
            share,
            cfg: value.cfg(),
        }
    }

    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn session(&self) -> u32 {
        self.session
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn share(&self) -> &[u64] {
        &self.share
    }

    pub fn cfg(&self) -> FixedPointConfig {
        self.cfg
    }

    pub fn len(&self) -> usize {
        self.share.len()
    }

    pub fn is_empty(&self) -> bool {
        self.share.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(MpcError::ShapeMismatch(self.shape.clone(), vec![0, 0])),
        }
    }

    pub(crate) fn derived(&self, id: u64, shape: Vec<usize>, share: Vec<u64>) -> SharedTensor {
        SharedTensor {
            owner: self.owner,
            id,
            session: self.session,
            shape,
            share,
            cfg: self.cfg,
        }
    }

    fn check_compatible(&self, other: &SharedTensor) -> Result<()> {
        if self.session != other.session {
            return Err(MpcError::SessionMismatch(self.session, other.session));
        }
        if self.shape != other.shape {
            return Err(MpcError::ShapeMismatch(
                self.shape.clone(),
                other.shape.clone(),
            ));
        }
        if self.cfg != other.cfg {
            return Err(MpcError::ConfigMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &SharedTensor) -> Result<SharedTensor> {
        self.check_compatible(other)?;
        let share = zip_map(&self.share, &other.share, u64::wrapping_add);
        Ok(self.derived(
            derive_id(op::ADD, &[self.id, other.id]),
            self.shape.clone(),
            share,
        ))
    }

    pub fn sub(&self, other: &SharedTensor) -> Result<SharedTensor> {
        self.check_compatible(other)?;
        let share = zip_map(&self.share, &other.share, u64::wrapping_sub);
        Ok(self.derived(
            derive_id(op::SUB, &[self.id, other.id]),
            self.shape.clone(),
            share,
        ))
    }

    pub fn neg(&self) -> SharedTensor {
        let share = self.share.iter().map(|s| s.wrapping_neg()).collect();
        self.derived(derive_id(op::NEG, &[self.id]), self.shape.clone(), share)
    }

    /// Adds a public tensor; only party 0 touches its share.
    pub fn add_public(&self, value: &RingTensor) -> Result<SharedTensor> {
        if value.shape() != self.shape.as_slice() {
            return Err(MpcError::ShapeMismatch(
                self.shape.clone(),
                value.shape().to_vec(),
            ));
        }
        let share = match self.owner {
            PartyId::P0 => zip_map(&self.share, value.data(), u64::wrapping_add),
            PartyId::P1 => self.share.clone(),
        };
        let id = derive_id(op::ADD_PUBLIC, &[self.id, derive_id(0, value.data())]);
        Ok(self.derived(id, self.shape.clone(), share))
    }

    /// Adds the same public real to every element.
    pub fn add_scalar(&self, c: f64) -> Result<SharedTensor> {
        let e = encode(c, self.cfg)?;
        let share = match self.owner {
            PartyId::P0 => self.share.iter().map(|s| s.wrapping_add(e)).collect(),
            PartyId::P1 => self.share.clone(),
        };
        Ok(self.derived(
            derive_id(op::ADD_PUBLIC, &[self.id, e]),
            self.shape.clone(),
            share,
        ))
    }

    /// Multiplies by a public integer. No rescaling is needed.
    pub fn mul_int(&self, k: i64) -> SharedTensor {
        let k = k as u64;
        let share = self.share.iter().map(|s| s.wrapping_mul(k)).collect();
        self.derived(
            derive_id(op::MUL_INT, &[self.id, k]),
            self.shape.clone(),
            share,
        )
    }

    /// Multiplies elementwise by public integers (e.g. 0/1 masks).
    pub fn mul_int_elementwise(&self, ks: &[i64]) -> Result<SharedTensor> {
        if ks.len() != self.share.len() {
            return Err(MpcError::ShapeMismatch(self.shape.clone(), vec![ks.len()]));
        }
        let share = self
            .share
            .iter()
            .zip(ks)
            .map(|(s, &k)| s.wrapping_mul(k as u64))
            .collect();
        let kh = derive_id(0, &ks.iter().map(|&k| k as u64).collect::<Vec<_>>());
        Ok(self.derived(
            derive_id(op::MUL_INT, &[self.id, kh]),
            self.shape.clone(),
            share,
        ))
    }

    /// Multiplies by a public real, then truncates.
    pub fn mul_public(&self, c: f64) -> Result<SharedTensor> {
        let e = encode(c, self.cfg)?;
        let share = self.share.iter().map(|s| s.wrapping_mul(e)).collect();
        let scaled = self.derived(
            derive_id(op::SCALE, &[self.id, e]),
            self.shape.clone(),
            share,
        );
        Ok(scaled.truncate(self.cfg.frac_bits()))
    }

    /// Local probabilistic truncation by `bits`.
    ///
    /// Party 0 shifts its share; party 1 shifts the negation of its share and
    /// negates back. The result is off by at most one unit in the last place,
    /// except with probability about `|x| / 2^64` where the shares wrap.
    pub fn truncate(&self, bits: u32) -> SharedTensor {
        let share = match self.owner {
            PartyId::P0 => self.share.iter().map(|s| s >> bits).collect(),
            PartyId::P1 => self
                .share
                .iter()
                .map(|s| (s.wrapping_neg() >> bits).wrapping_neg())
                .collect(),
        };
        self.derived(
            derive_id(op::TRUNC, &[self.id, bits as u64]),
            self.shape.clone(),
            share,
        )
    }

    /// Local division by a public positive integer, same error profile as [`truncate`].
    ///
    /// [`truncate`]: SharedTensor::truncate
    pub fn div_public(&self, d: u64) -> SharedTensor {
        assert!(d > 0, "division by zero");
        let share = match self.owner {
            PartyId::P0 => self.share.iter().map(|s| s / d).collect(),
            PartyId::P1 => self
                .share
                .iter()
                .map(|s| (s.wrapping_neg() / d).wrapping_neg())
                .collect(),
        };
        self.derived(
            derive_id(op::DIV, &[self.id, d]),
            self.shape.clone(),
            share,
        )
    }

    pub fn transpose(&self) -> Result<SharedTensor> {
        let (r, c) = self.dims2()?;
        let share = transpose(&self.share, r, c);
        Ok(self.derived(derive_id(op::TRANSPOSE, &[self.id]), vec![c, r], share))
    }

    /// Selects rows of a matrix in the given order.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<SharedTensor> {
        let (r, c) = self.dims2()?;
        let mut share = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(MpcError::ShapeMismatch(vec![r, c], vec![i, c]));
            }
            share.extend_from_slice(&self.share[i * c..(i + 1) * c]);
        }
        let rh = derive_id(0, &rows.iter().map(|&i| i as u64).collect::<Vec<_>>());
        Ok(self.derived(
            derive_id(op::GATHER, &[self.id, rh]),
            vec![rows.len(), c],
            share,
        ))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum(&self) -> SharedTensor {
        let s = self.share.iter().fold(0u64, |acc, &v| acc.wrapping_add(v));
        self.derived(derive_id(op::SUM, &[self.id]), vec![1], vec![s])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<SharedTensor> {
        if shape.iter().product::<usize>() != self.share.len() {
            return Err(MpcError::ShapeMismatch(self.shape.clone(), shape));
        }
        let sh = derive_id(0, &shape.iter().map(|&i| i as u64).collect::<Vec<_>>());
        Ok(self.derived(
            derive_id(op::RESHAPE, &[self.id, sh]),
            shape,
            self.share.clone(),
        ))
    }

    /// Concatenates tensors along the flat element axis (result is 1-D).
    pub fn concat(parts: &[&SharedTensor]) -> Result<SharedTensor> {
        let first = parts
            .first()
            .ok_or_else(|| MpcError::ShapeMismatch(vec![], vec![]))?;
        let mut share = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            if p.session != first.session {
                return Err(MpcError::SessionMismatch(first.session, p.session));
            }
            share.extend_from_slice(&p.share);
            ids.push(p.id);
        }
        let n = share.len();
        Ok(first.derived(derive_id(op::CONCAT, &ids), vec![n], share))
    }

    /// Splits a flat tensor into consecutive pieces with the given shapes.
    pub fn split(&self, shapes: &[Vec<usize>]) -> Result<Vec<SharedTensor>> {
        let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if total != self.share.len() {
            return Err(MpcError::ShapeMismatch(self.shape.clone(), vec![total]));
        }
        let mut out = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for (i, s) in shapes.iter().enumerate() {
            let n: usize = s.iter().product();
            out.push(self.derived(
                derive_id(op::CONCAT, &[self.id, i as u64]),
                s.clone(),
                self.share[at..at + n].to_vec(),
            ));
            at += n;
        }
        Ok(out)
    }
}

fn zip_map(a: &[u64], b: &[u64], f: impl Fn(u64, u64) -> u64) -> Vec<u64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Splits `value` into two uniformly masked shares.
pub fn share<R: RngCore + ?Sized>(
    value: &RingTensor,
    session: u32,
    rng: &mut R,
) -> (SharedTensor, SharedTensor) {
    let id = rng.next_u64();
    let mask: Vec<u64> = (0..value.len()).map(|_| rng.next_u64()).collect();
    let other = zip_map(value.data(), &mask, u64::wrapping_sub);
    let make = |owner, share| SharedTensor {
        owner,
        id,
        session,
        shape: value.shape().to_vec(),
        share,
        cfg: value.cfg(),
    };
    (make(PartyId::P0, mask), make(PartyId::P1, other))
}

/// Elementwise modular sum of two shares of the same tensor.
pub fn reconstruct(s0: &SharedTensor, s1: &SharedTensor) -> Result<RingTensor> {
    if s0.session != s1.session {
        return Err(MpcError::SessionMismatch(s0.session, s1.session));
    }
    if s0.shape != s1.shape {
        return Err(MpcError::ShapeMismatch(s0.shape.clone(), s1.shape.clone()));
    }
    if s0.cfg != s1.cfg {
        return Err(MpcError::ConfigMismatch);
    }
    let data = zip_map(&s0.share, &s1.share, u64::wrapping_add);
    RingTensor::new(s0.shape.clone(), data, s0.cfg)
}

/// Local share addition; no communication.
pub fn secure_add(x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
    x.add(y)
}

/// Row-major `[n x d] * [d x k]` product in the ring.
pub fn ring_matmul(a: &[u64], b: &[u64], n: usize, d: usize, k: usize) -> Vec<u64> {
    debug_assert_eq!(a.len(), n * d);
    debug_assert_eq!(b.len(), d * k);
    let mut out = vec![0u64; n * k];
    for i in 0..n {
        let row = &a[i * d..(i + 1) * d];
        let acc = &mut out[i * k..(i + 1) * k];
        for (j, &aij) in row.iter().enumerate() {
            if aij == 0 {
                continue;
            }
            let brow = &b[j * k..(j + 1) * k];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o = o.wrapping_add(aij.wrapping_mul(bv));
            }
        }
    }
    out
}

pub fn transpose(a: &[u64], rows: usize, cols: usize) -> Vec<u64> {
    let mut out = vec![0u64; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
