//! One party's view of a two-party protocol session.
//!
//! Every interactive step is a symmetric exchange: party 0 sends then
//! receives, party 1 receives then sends, so neither side can block the other
//! on a full socket buffer. Both parties hash every frame they see into two
//! running digests (frames sent by party 0, frames sent by party 1); equal
//! inputs and seeds give equal digests on both sides and across transports.

use std::collections::HashSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dealer::{BeaverTriple, CorrelationSource, Material, TripleKind};
use crate::error::{MpcError, Result};
use crate::fixed::{decode, FixedPointConfig, RingTensor};
use crate::frame::{Frame, Opcode, Tag};
use crate::share::{derive_id, op, ring_matmul, PartyId, SharedTensor};
use crate::trace::{EventKind, Trace, TraceEvent};
use crate::transport::Transport;

/// A multiplication to run inside one batched round.
#[derive(Debug, Clone, Copy)]
pub enum MulOp<'a> {
    /// Elementwise product of equal-shaped tensors.
    Elementwise(&'a SharedTensor, &'a SharedTensor),
    /// `[n x d] . [d x k]`.
    Matmul(&'a SharedTensor, &'a SharedTensor),
}

impl MulOp<'_> {
    fn operands(&self) -> (&SharedTensor, &SharedTensor) {
        match *self {
            MulOp::Elementwise(x, y) | MulOp::Matmul(x, y) => (x, y),
        }
    }

    fn kind(&self) -> Result<TripleKind> {
        match *self {
            MulOp::Elementwise(x, y) => {
                if x.shape() != y.shape() {
                    return Err(MpcError::ShapeMismatch(
                        x.shape().to_vec(),
                        y.shape().to_vec(),
                    ));
                }
                Ok(TripleKind::Elementwise { len: x.len() })
            }
            MulOp::Matmul(x, w) => {
                let (n, d) = x.dims2()?;
                let (d2, k) = w.dims2()?;
                if d != d2 {
                    return Err(MpcError::ShapeMismatch(
                        x.shape().to_vec(),
                        w.shape().to_vec(),
                    ));
                }
                Ok(TripleKind::Matmul { n, d, k })
            }
        }
    }

    fn out_shape(&self) -> Vec<usize> {
        match *self {
            MulOp::Elementwise(x, _) => x.shape().to_vec(),
            MulOp::Matmul(x, w) => vec![x.shape()[0], w.shape()[1]],
        }
    }
}

/// Hex SHA-256 digests of the frames each party sent during a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptDigest {
    pub party0: String,
    pub party1: String,
    pub frames: [u64; 2],
    pub bytes: [u64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionReport {
    pub party: PartyId,
    pub session: u32,
    pub rounds: u64,
    pub transcript: TranscriptDigest,
    pub trace: Trace,
}

pub struct Session {
    party: PartyId,
    id: u32,
    cfg: FixedPointConfig,
    peer: Box<dyn Transport>,
    corr: Box<dyn CorrelationSource>,
    rng: ChaCha12Rng,
    used: HashSet<u64>,
    trace: Trace,
    digests: [Sha256; 2],
    frames: [u64; 2],
    bytes: [u64; 2],
    inputs: u64,
    rounds: u64,
}

impl Session {
    /// Opens a session over an established peer link and performs the hello
    /// exchange, which checks that both sides agree on session id and encoding.
    pub fn new(
        party: PartyId,
        id: u32,
        cfg: FixedPointConfig,
        mask_seed: u64,
        peer: Box<dyn Transport>,
        corr: Box<dyn CorrelationSource>,
    ) -> Result<Session> {
        let mut s = Session {
            party,
            id,
            cfg,
            peer,
            corr,
            rng: ChaCha12Rng::seed_from_u64(mask_seed),
            used: HashSet::new(),
            trace: Trace::new(),
            digests: [Sha256::new(), Sha256::new()],
            frames: [0; 2],
            bytes: [0; 2],
            inputs: 0,
            rounds: 0,
        };
        let hello = Frame::new(Opcode::Hello, Tag::Meta, id, 0, vec![cfg.frac_bits() as u8]);
        let got = match party {
            PartyId::P0 => {
                s.send(&hello)?;
                s.recv()?
            }
            PartyId::P1 => {
                let f = s.recv()?;
                s.send(&hello)?;
                f
            }
        };
        if got.opcode != Opcode::Hello {
            return Err(MpcError::ProtocolDesync(format!(
                "expected hello, got {:?}",
                got.opcode
            )));
        }
        if got.session != id {
            return Err(MpcError::SessionMismatch(id, got.session));
        }
        if got.payload != hello.payload {
            return Err(MpcError::ConfigMismatch);
        }
        Ok(s)
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn cfg(&self) -> FixedPointConfig {
        self.cfg
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    fn send(&mut self, f: &Frame) -> Result<()> {
        let i = self.party.index();
        let bytes = f.to_bytes();
        self.digests[i].update(&bytes);
        self.frames[i] += 1;
        self.bytes[i] += bytes.len() as u64;
        self.peer.send(f)
    }

    fn recv(&mut self) -> Result<Frame> {
        let f = self.peer.recv()?;
        let i = self.party.other().index();
        let bytes = f.to_bytes();
        self.digests[i].update(&bytes);
        self.frames[i] += 1;
        self.bytes[i] += bytes.len() as u64;
        Ok(f)
    }

    /// Sends `out` and receives the peer's matching frame.
    fn exchange(&mut self, out: Frame) -> Result<Frame> {
        self.rounds += 1;
        let got = match self.party {
            PartyId::P0 => {
                self.send(&out)?;
                self.recv()?
            }
            PartyId::P1 => {
                let f = self.recv()?;
                self.send(&out)?;
                f
            }
        };
        self.check_matches(&out, &got)?;
        Ok(got)
    }

    fn check_matches(&self, want: &Frame, got: &Frame) -> Result<()> {
        if got.session != want.session {
            return Err(MpcError::SessionMismatch(want.session, got.session));
        }
        if got.opcode != want.opcode || got.tag != want.tag || got.tensor != want.tensor {
            return Err(MpcError::ProtocolDesync(format!(
                "{} expected {:?}/{:?} for tensor {:#010x}, peer sent {:?}/{:?} for {:#010x}",
                self.party, want.opcode, want.tag, want.tensor, got.opcode, got.tag, got.tensor
            )));
        }
        if got.payload.len() != want.payload.len() {
            return Err(MpcError::ProtocolDesync(format!(
                "payload length {} vs {}",
                want.payload.len(),
                got.payload.len()
            )));
        }
        Ok(())
    }

    fn check_session(&self, x: &SharedTensor) -> Result<()> {
        if x.session() != self.id {
            return Err(MpcError::SessionMismatch(self.id, x.session()));
        }
        if x.owner() != self.party {
            return Err(MpcError::ProtocolDesync(format!(
                "{} was handed a share owned by {}",
                self.party,
                x.owner()
            )));
        }
        Ok(())
    }

    /// Shares a private tensor held by `owner`. The owner passes `Some(value)`;
    /// the other party passes `None` and the publicly known shape.
    pub fn input(
        &mut self,
        owner: PartyId,
        value: Option<&RingTensor>,
        shape: Vec<usize>,
    ) -> Result<SharedTensor> {
        self.inputs += 1;
        let id = derive_id(op::INPUT, &[self.id as u64, self.inputs, owner.index() as u64]);
        let len: usize = shape.iter().product();
        let share = if owner == self.party {
            let value = value.ok_or_else(|| {
                MpcError::Config("the owning party must supply its input".into())
            })?;
            if value.shape() != shape.as_slice() {
                return Err(MpcError::ShapeMismatch(shape, value.shape().to_vec()));
            }
            let mask: Vec<u64> = (0..len).map(|_| self.rng.next_u64()).collect();
            let f = Frame::with_ring(Opcode::Input, Tag::Input, self.id, id, &mask);
            self.send(&f)?;
            value
                .data()
                .iter()
                .zip(&mask)
                .map(|(v, m)| v.wrapping_sub(*m))
                .collect()
        } else {
            let f = self.recv()?;
            let want = Frame::new(Opcode::Input, Tag::Input, self.id, id, vec![0; len * 8]);
            self.check_matches(&want, &f)?;
            f.ring_payload()?
        };
        self.trace.record(TraceEvent {
            seq: 0,
            party: owner,
            session: self.id,
            kind: EventKind::Input,
            tag: Tag::Input,
            tensor: id as u32,
            elements: len,
            value: None,
        });
        SharedTensor::from_parts(self.party, id, self.id, shape, share, self.cfg)
    }

    /// This party's share of a public tensor.
    pub fn public(&self, value: &RingTensor) -> SharedTensor {
        SharedTensor::public(self.party, self.id, value)
    }

    pub fn public_f64(&self, shape: Vec<usize>, values: &[f64]) -> Result<SharedTensor> {
        Ok(self.public(&RingTensor::from_f64(shape, values, self.cfg)?))
    }

    /// Swaps public metadata (row counts, dimensions) with the peer.
    pub fn exchange_public(&mut self, words: &[u64]) -> Result<Vec<u64>> {
        self.inputs += 1;
        let id = derive_id(op::PUBLIC, &[self.id as u64, self.inputs]);
        let f = Frame::with_ring(Opcode::Open, Tag::Meta, self.id, id, words);
        let got = self.exchange(f)?;
        self.trace.record(TraceEvent {
            seq: 0,
            party: self.party,
            session: self.id,
            kind: EventKind::Open,
            tag: Tag::Meta,
            tensor: id as u32,
            elements: words.len(),
            value: None,
        });
        got.ring_payload()
    }

    /// Reveals `x` to both parties. The tag says what the value is for the trace.
    pub fn open(&mut self, x: &SharedTensor, tag: Tag) -> Result<RingTensor> {
        self.check_session(x)?;
        let f = Frame::with_ring(Opcode::Open, tag, self.id, x.id(), x.share());
        let got = self.exchange(f)?;
        let theirs = got.ring_payload()?;
        let data: Vec<u64> = x
            .share()
            .iter()
            .zip(&theirs)
            .map(|(a, b)| a.wrapping_add(*b))
            .collect();
        let value = (data.len() == 1 && matches!(tag, Tag::Loss | Tag::Final))
            .then(|| decode(data[0], self.cfg));
        self.trace.record(TraceEvent {
            seq: 0,
            party: self.party,
            session: self.id,
            kind: EventKind::Open,
            tag,
            tensor: x.id() as u32,
            elements: data.len(),
            value,
        });
        RingTensor::new(x.shape().to_vec(), data, self.cfg)
    }

    fn open_words(&mut self, opcode: Opcode, tensor: u64, words: &[u64]) -> Result<Vec<u64>> {
        let f = Frame::with_ring(opcode, Tag::Mask, self.id, tensor, words);
        let got = self.exchange(f)?;
        self.trace.record(TraceEvent {
            seq: 0,
            party: self.party,
            session: self.id,
            kind: EventKind::Open,
            tag: Tag::Mask,
            tensor: tensor as u32,
            elements: words.len(),
            value: None,
        });
        got.ring_payload()
    }

    /// Fixed-point elementwise product (truncated).
    pub fn mul(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        Ok(self.mul_many(&[MulOp::Elementwise(x, y)], true)?.remove(0))
    }

    /// Ring product without truncation, for multiplying by shared integers.
    pub fn mul_raw(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        Ok(self.mul_many(&[MulOp::Elementwise(x, y)], false)?.remove(0))
    }

    /// Fixed-point matrix product (truncated).
    pub fn matmul(&mut self, x: &SharedTensor, w: &SharedTensor) -> Result<SharedTensor> {
        Ok(self.mul_many(&[MulOp::Matmul(x, w)], true)?.remove(0))
    }

    /// Runs several independent products in a single round of openings.
    pub fn mul_many(&mut self, ops: &[MulOp<'_>], truncate: bool) -> Result<Vec<SharedTensor>> {
        let mut mats = Vec::with_capacity(ops.len());
        for o in ops {
            let kind = o.kind()?;
            mats.push(self.corr.begin(kind)?);
        }
        self.beaver(ops, mats, false, truncate)
    }

    /// Elementwise product using a caller-supplied triple. Each triple may be
    /// consumed once per session.
    pub fn secure_mul(
        &mut self,
        x: &SharedTensor,
        y: &SharedTensor,
        t: BeaverTriple,
    ) -> Result<SharedTensor> {
        let m = self.take_triple(MulOp::Elementwise(x, y), t)?;
        Ok(self
            .beaver(&[MulOp::Elementwise(x, y)], vec![m], true, true)?
            .remove(0))
    }

    /// Matrix product using a caller-supplied matrix triple.
    pub fn secure_matmul(
        &mut self,
        x: &SharedTensor,
        w: &SharedTensor,
        t: BeaverTriple,
    ) -> Result<SharedTensor> {
        let m = self.take_triple(MulOp::Matmul(x, w), t)?;
        Ok(self
            .beaver(&[MulOp::Matmul(x, w)], vec![m], true, true)?
            .remove(0))
    }

    fn take_triple(&mut self, o: MulOp<'_>, t: BeaverTriple) -> Result<Material> {
        if !self.used.insert(t.id) {
            return Err(MpcError::TripleReuse(t.id));
        }
        let kind = o.kind()?;
        if kind != t.kind {
            return Err(MpcError::ShapeMismatch(
                t.a.shape().to_vec(),
                o.operands().0.shape().to_vec(),
            ));
        }
        if t.a.owner() != self.party {
            return Err(MpcError::ProtocolDesync(format!(
                "{} was handed {}'s triple",
                self.party,
                t.a.owner()
            )));
        }
        Ok(Material {
            id: t.id,
            kind,
            parts: vec![
                t.a.share().to_vec(),
                t.b.share().to_vec(),
                t.c.share().to_vec(),
            ],
        })
    }

    fn beaver(
        &mut self,
        ops: &[MulOp<'_>],
        mats: Vec<Material>,
        ready: bool,
        truncate: bool,
    ) -> Result<Vec<SharedTensor>> {
        let mut masked = Vec::new();
        let mut ids = Vec::with_capacity(ops.len() * 2);
        for (o, m) in ops.iter().zip(&mats) {
            let (x, y) = o.operands();
            self.check_session(x)?;
            self.check_session(y)?;
            masked.extend(x.share().iter().zip(&m.parts[0]).map(|(v, a)| v.wrapping_sub(*a)));
            masked.extend(y.share().iter().zip(&m.parts[1]).map(|(v, b)| v.wrapping_sub(*b)));
            ids.push(x.id());
            ids.push(y.id());
        }
        let round_id = derive_id(op::MUL, &ids);
        let theirs = self.open_words(Opcode::Open, round_id, &masked)?;

        let mut out = Vec::with_capacity(ops.len());
        let mut at = 0;
        for (o, m) in ops.iter().zip(mats) {
            let m = if ready { m } else { self.corr.finish(m)? };
            let (x, y) = o.operands();
            let (lx, ly) = (x.len(), y.len());
            let open = |i: usize| masked[i].wrapping_add(theirs[i]);
            let e: Vec<u64> = (at..at + lx).map(open).collect();
            let f: Vec<u64> = (at + lx..at + lx + ly).map(open).collect();
            at += lx + ly;
            let (a, b, c) = (&m.parts[0], &m.parts[1], &m.parts[2]);
            let p0 = self.party == PartyId::P0;
            let z: Vec<u64> = match *o {
                MulOp::Elementwise(..) => (0..lx)
                    .map(|i| {
                        let mut v = c[i]
                            .wrapping_add(e[i].wrapping_mul(b[i]))
                            .wrapping_add(f[i].wrapping_mul(a[i]));
                        if p0 {
                            v = v.wrapping_add(e[i].wrapping_mul(f[i]));
                        }
                        v
                    })
                    .collect(),
                MulOp::Matmul(..) => {
                    let (n, d) = x.dims2()?;
                    let k = y.dims2()?.1;
                    let eb = ring_matmul(&e, b, n, d, k);
                    let af = ring_matmul(a, &f, n, d, k);
                    let mut v: Vec<u64> = c
                        .iter()
                        .zip(&eb)
                        .zip(&af)
                        .map(|((c, p), q)| c.wrapping_add(*p).wrapping_add(*q))
                        .collect();
                    if p0 {
                        let ef = ring_matmul(&e, &f, n, d, k);
                        for (v, w) in v.iter_mut().zip(ef) {
                            *v = v.wrapping_add(w);
                        }
                    }
                    v
                }
            };
            let tag = match o {
                MulOp::Elementwise(..) => op::MUL,
                MulOp::Matmul(..) => op::MATMUL,
            };
            let prod = x.derived(derive_id(tag, &[x.id(), y.id()]), o.out_shape(), z);
            out.push(if truncate {
                prod.truncate(self.cfg.frac_bits())
            } else {
                prod
            });
        }
        Ok(out)
    }

    /// AND of XOR-shared words, one round.
    pub fn and_words(&mut self, x: &[u64], y: &[u64]) -> Result<Vec<u64>> {
        if x.len() != y.len() {
            return Err(MpcError::ShapeMismatch(vec![x.len()], vec![y.len()]));
        }
        let n = x.len();
        let pending = self.corr.begin(TripleKind::BoolAnd { len: n })?;
        let mut masked: Vec<u64> = x.iter().zip(&pending.parts[0]).map(|(v, a)| v ^ a).collect();
        masked.extend(y.iter().zip(&pending.parts[1]).map(|(v, b)| v ^ b));
        let round_id = derive_id(op::LTZ, &[pending.id, n as u64]);
        let theirs = self.open_words(Opcode::OpenBool, round_id, &masked)?;
        let m = self.corr.finish(pending)?;
        let p0 = self.party == PartyId::P0;
        Ok((0..n)
            .map(|i| {
                let e = masked[i] ^ theirs[i];
                let f = masked[n + i] ^ theirs[n + i];
                let mut z = m.parts[2][i] ^ (e & m.parts[1][i]) ^ (f & m.parts[0][i]);
                if p0 {
                    z ^= e & f;
                }
                z
            })
            .collect())
    }

    /// Arithmetic shares of `[x < 0]` as plain ring integers (0 or 1, not
    /// fixed-point scaled). Exact for every ring element; eight rounds.
    ///
    /// The two additive shares are added by a Kogge-Stone carry network over
    /// XOR-shared words; the sign is bit 63 of the sum.
    pub fn ltz(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        self.check_session(x)?;
        let s = x.share();
        let n = s.len();
        let zeros = vec![0u64; n];
        // XOR sharings of A = share0 and B = share1.
        let (a, b) = match self.party {
            PartyId::P0 => (s.to_vec(), zeros),
            PartyId::P1 => (zeros, s.to_vec()),
        };
        let mut g = self.and_words(&a, &b)?;
        let p_orig: Vec<u64> = s.to_vec();
        let mut p = p_orig.clone();
        for k in [1u32, 2, 4, 8, 16, 32] {
            let gs: Vec<u64> = g.iter().map(|v| v << k).collect();
            if k < 32 {
                let ps: Vec<u64> = p.iter().map(|v| v << k).collect();
                let mut lhs = p.clone();
                lhs.extend_from_slice(&p);
                let mut rhs = gs;
                rhs.extend_from_slice(&ps);
                let r = self.and_words(&lhs, &rhs)?;
                for i in 0..n {
                    g[i] ^= r[i];
                }
                p = r[n..].to_vec();
            } else {
                let r = self.and_words(&p, &gs)?;
                for i in 0..n {
                    g[i] ^= r[i];
                }
            }
        }
        let msb: Vec<u64> = (0..n)
            .map(|i| ((p_orig[i] >> 63) ^ (g[i] >> 62)) & 1)
            .collect();
        let bits = self.bool_to_arith(&msb)?;
        Ok(x.derived(derive_id(op::LTZ, &[x.id()]), x.shape().to_vec(), bits))
    }

    /// Converts XOR-shared bits (in bit 0) to additive shares with a dealer random bit.
    fn bool_to_arith(&mut self, bits: &[u64]) -> Result<Vec<u64>> {
        let n = bits.len();
        let pending = self.corr.begin(TripleKind::RandBit { len: n })?;
        let masked: Vec<u64> = bits.iter().zip(&pending.parts[0]).map(|(v, r)| v ^ r).collect();
        let round_id = derive_id(op::LTZ, &[pending.id, 1 << 40]);
        let theirs = self.open_words(Opcode::OpenBool, round_id, &masked)?;
        let m = self.corr.finish(pending)?;
        let p0 = self.party == PartyId::P0;
        Ok((0..n)
            .map(|i| {
                let c = (masked[i] ^ theirs[i]) & 1;
                let r = m.parts[1][i];
                let flipped = if c == 1 { r.wrapping_neg() } else { r };
                if p0 {
                    flipped.wrapping_add(c)
                } else {
                    flipped
                }
            })
            .collect())
    }

    /// Releases the dealer link and returns the session's trace and digests.
    pub fn finish(mut self) -> Result<SessionReport> {
        self.corr.close()?;
        let [d0, d1] = self.digests;
        Ok(SessionReport {
            party: self.party,
            session: self.id,
            rounds: self.rounds,
            transcript: TranscriptDigest {
                party0: hex::encode(d0.finalize()),
                party1: hex::encode(d1.finalize()),
                frames: self.frames,
                bytes: self.bytes,
            },
            trace: self.trace,
        })
    }
}
