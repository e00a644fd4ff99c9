//! Correlated randomness from a semi-honest trusted dealer.
//!
//! The dealer shares a PRG seed with each party. Everything a party needs is
//! expanded locally from its own seed, except party 1's share of each product
//! (or of each arithmetic random bit), which the dealer computes from both
//! streams and sends as a correction. The dealer never sees any input.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::debug;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MpcError, Result};
use crate::fixed::FixedPointConfig;
use crate::frame::{bytes_to_ring, ring_to_bytes, Frame, Opcode, Tag};
use crate::share::{ring_matmul, PartyId, SharedTensor};
use crate::transport::Transport;

/// Shape of a piece of correlated randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripleKind {
    /// `c = a * b` elementwise over `len` ring elements (no rescaling).
    Elementwise { len: usize },
    /// `c = a . b` with `a: [n x d]`, `b: [d x k]`.
    Matmul { n: usize, d: usize, k: usize },
    /// XOR-shared words with `c = a & b`.
    BoolAnd { len: usize },
    /// A random bit held both XOR-shared (in bit 0) and additively shared.
    RandBit { len: usize },
}

impl TripleKind {
    fn encode(&self) -> [u64; 4] {
        match *self {
            TripleKind::Elementwise { len } => [1, len as u64, 0, 0],
            TripleKind::Matmul { n, d, k } => [2, n as u64, d as u64, k as u64],
            TripleKind::BoolAnd { len } => [3, len as u64, 0, 0],
            TripleKind::RandBit { len } => [4, len as u64, 0, 0],
        }
    }

    fn decode(w: &[u64]) -> Result<TripleKind> {
        let bad = || MpcError::Frame(format!("bad triple kind {w:?}"));
        if w.len() != 4 {
            return Err(bad());
        }
        let u = |i: usize| w[i] as usize;
        Ok(match w[0] {
            1 => TripleKind::Elementwise { len: u(1) },
            2 => TripleKind::Matmul {
                n: u(1),
                d: u(2),
                k: u(3),
            },
            3 => TripleKind::BoolAnd { len: u(1) },
            4 => TripleKind::RandBit { len: u(1) },
            _ => return Err(bad()),
        })
    }

    /// Lengths of `(a, b, c)`, or `(bool bit, arith bit, -)` for random bits.
    fn part_lens(&self) -> [usize; 3] {
        match *self {
            TripleKind::Elementwise { len } | TripleKind::BoolAnd { len } => [len, len, len],
            TripleKind::Matmul { n, d, k } => [n * d, d * k, n * k],
            TripleKind::RandBit { len } => [len, len, 0],
        }
    }

    fn part_shapes(&self) -> [Vec<usize>; 3] {
        match *self {
            TripleKind::Matmul { n, d, k } => [vec![n, d], vec![d, k], vec![n, k]],
            _ => {
                let [a, b, c] = self.part_lens();
                [vec![a], vec![b], vec![c]]
            }
        }
    }
}

/// One party's share of a piece of correlated randomness, as raw ring words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Material {
    pub id: u64,
    pub kind: TripleKind,
    pub parts: Vec<Vec<u64>>,
}

/// One party's share of a Beaver triple.
#[derive(Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub id: u64,
    pub kind: TripleKind,
    pub a: SharedTensor,
    pub b: SharedTensor,
    pub c: SharedTensor,
}

impl BeaverTriple {
    pub fn from_material(
        m: Material,
        owner: PartyId,
        session: u32,
        cfg: FixedPointConfig,
    ) -> Result<BeaverTriple> {
        if !matches!(
            m.kind,
            TripleKind::Elementwise { .. } | TripleKind::Matmul { .. }
        ) {
            return Err(MpcError::ProtocolDesync(format!(
                "expected an arithmetic triple, got {:?}",
                m.kind
            )));
        }
        let [sa, sb, sc] = m.kind.part_shapes();
        let mut parts = m.parts.into_iter();
        let mut next = |shape: Vec<usize>, salt: u64| {
            SharedTensor::from_parts(
                owner,
                crate::share::derive_id(0xDEA1, &[m.id, salt]),
                session,
                shape,
                parts.next().unwrap_or_default(),
                cfg,
            )
        };
        Ok(BeaverTriple {
            id: m.id,
            kind: m.kind,
            a: next(sa, 0)?,
            b: next(sb, 1)?,
            c: next(sc, 2)?,
        })
    }
}

fn draw<R: RngCore>(rng: &mut R, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Expands the locally derivable part of a party's material from its stream.
/// For party 1 the third part is left empty; it arrives as a correction.
fn expand_local<R: RngCore>(kind: TripleKind, party: PartyId, rng: &mut R) -> Vec<Vec<u64>> {
    let [la, lb, lc] = kind.part_lens();
    match kind {
        TripleKind::RandBit { .. } => {
            let bits: Vec<u64> = draw(rng, la).into_iter().map(|w| w & 1).collect();
            let arith = match party {
                PartyId::P0 => draw(rng, lb),
                PartyId::P1 => Vec::new(),
            };
            vec![bits, arith, Vec::new()]
        }
        _ => {
            let a = draw(rng, la);
            let b = draw(rng, lb);
            let c = match party {
                PartyId::P0 => draw(rng, lc),
                PartyId::P1 => Vec::new(),
            };
            vec![a, b, c]
        }
    }
}

/// Dealer side: replays both streams and returns party 1's missing part.
fn correction<R: RngCore>(kind: TripleKind, rng0: &mut R, rng1: &mut R) -> Vec<u64> {
    let m0 = expand_local(kind, PartyId::P0, rng0);
    let m1 = expand_local(kind, PartyId::P1, rng1);
    match kind {
        TripleKind::Elementwise { .. } => {
            let a = add(&m0[0], &m1[0]);
            let b = add(&m0[1], &m1[1]);
            let c: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x.wrapping_mul(*y)).collect();
            sub(&c, &m0[2])
        }
        TripleKind::Matmul { n, d, k } => {
            let a = add(&m0[0], &m1[0]);
            let b = add(&m0[1], &m1[1]);
            let c = ring_matmul(&a, &b, n, d, k);
            sub(&c, &m0[2])
        }
        TripleKind::BoolAnd { .. } => {
            let a: Vec<u64> = m0[0].iter().zip(&m1[0]).map(|(x, y)| x ^ y).collect();
            let b: Vec<u64> = m0[1].iter().zip(&m1[1]).map(|(x, y)| x ^ y).collect();
            a.iter()
                .zip(&b)
                .zip(&m0[2])
                .map(|((x, y), c0)| (x & y) ^ c0)
                .collect()
        }
        TripleKind::RandBit { .. } => {
            let r: Vec<u64> = m0[0].iter().zip(&m1[0]).map(|(x, y)| x ^ y).collect();
            sub(&r, &m0[1])
        }
    }
}

fn add(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x.wrapping_add(*y)).collect()
}

fn sub(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x.wrapping_sub(*y)).collect()
}

/// Generates `count` complete arithmetic triples, returning both parties' shares.
/// Used for offline preprocessing and for tests; the online path expands seeds instead.
pub fn dealer_generate<R: RngCore>(
    count: usize,
    kind: TripleKind,
    session: u32,
    cfg: FixedPointConfig,
    rng: &mut R,
) -> Result<Vec<(BeaverTriple, BeaverTriple)>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (m0, m1) = generate_pair(kind, rng)?;
        out.push((
            BeaverTriple::from_material(m0, PartyId::P0, session, cfg)?,
            BeaverTriple::from_material(m1, PartyId::P1, session, cfg)?,
        ));
    }
    Ok(out)
}

/// Both parties' material for one item, drawn directly from `rng`.
pub fn generate_pair<R: RngCore>(kind: TripleKind, rng: &mut R) -> Result<(Material, Material)> {
    let id = rng.next_u64();
    let mut s0 = ChaCha12Rng::seed_from_u64(rng.next_u64());
    let mut s1 = ChaCha12Rng::seed_from_u64(rng.next_u64());
    let mut p0 = expand_local(kind, PartyId::P0, &mut s0.clone());
    let mut p1 = expand_local(kind, PartyId::P1, &mut s1.clone());
    let fix = correction(kind, &mut s0, &mut s1);
    match kind {
        TripleKind::RandBit { .. } => p1[1] = fix,
        _ => p1[2] = fix,
    }
    if let TripleKind::RandBit { .. } = kind {
        p0.truncate(2);
        p1.truncate(2);
    }
    Ok((
        Material {
            id,
            kind,
            parts: p0,
        },
        Material {
            id,
            kind,
            parts: p1,
        },
    ))
}

/// A party's supply of correlated randomness.
///
/// `begin` returns everything available without waiting; `finish` completes
/// the item, possibly blocking on the dealer. Callers overlap the two with
/// their own round of communication.
pub trait CorrelationSource: Send {
    fn begin(&mut self, kind: TripleKind) -> Result<Material>;
    fn finish(&mut self, pending: Material) -> Result<Material>;
    /// Tells the dealer no more material is needed.
    fn close(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Online client of a dealer reached over a [`Transport`].
pub struct DealerClient {
    party: PartyId,
    link: Box<dyn Transport>,
    prg: ChaCha12Rng,
    next_id: u64,
    closed: bool,
}

impl DealerClient {
    /// Announces the party's role and session and receives its PRG seed.
    pub fn connect(party: PartyId, session: u32, mut link: Box<dyn Transport>) -> Result<DealerClient> {
        link.send(&Frame::new(
            Opcode::Hello,
            Tag::Meta,
            session,
            0,
            vec![party.index() as u8],
        ))?;
        let f = link.recv()?;
        if f.opcode != Opcode::DealerSeed || f.payload.len() != 32 {
            return Err(MpcError::ProtocolDesync(format!(
                "expected dealer seed, got {:?}",
                f.opcode
            )));
        }
        let seed: [u8; 32] = f.payload[..].try_into().unwrap();
        Ok(DealerClient {
            party,
            link,
            prg: ChaCha12Rng::from_seed(seed),
            next_id: 0,
            closed: false,
        })
    }
}

impl CorrelationSource for DealerClient {
    fn begin(&mut self, kind: TripleKind) -> Result<Material> {
        let id = self.next_id;
        self.next_id += 1;
        let parts = expand_local(kind, self.party, &mut self.prg);
        if self.party == PartyId::P1 {
            let req = Frame::with_ring(Opcode::DealerRequest, Tag::Meta, 0, id, &kind.encode());
            self.link.send(&req)?;
        }
        Ok(Material { id, kind, parts })
    }

    fn finish(&mut self, mut pending: Material) -> Result<Material> {
        if self.party == PartyId::P1 {
            let f = self.link.recv()?;
            if f.opcode != Opcode::DealerCorrection || f.tensor != pending.id as u32 {
                return Err(MpcError::ProtocolDesync(format!(
                    "dealer answered {:?} for item {}, expected item {}",
                    f.opcode, f.tensor, pending.id
                )));
            }
            let fix = f.ring_payload()?;
            let slot = match pending.kind {
                TripleKind::RandBit { .. } => 1,
                _ => 2,
            };
            pending.parts[slot] = fix;
        }
        if let TripleKind::RandBit { .. } = pending.kind {
            pending.parts.truncate(2);
        }
        Ok(pending)
    }

    fn close(&mut self) -> Result<()> {
        if !self.closed {
            self.closed = true;
            self.link.send(&Frame::new(Opcode::Bye, Tag::Meta, 0, 0, vec![]))?;
        }
        Ok(())
    }
}

/// Dealer loop with a fixed seed.
pub fn run_dealer(master_seed: u64, a: Box<dyn Transport>, b: Box<dyn Transport>) -> Result<DealerStats> {
    run_dealer_with(&|_| master_seed, a, b)
}

/// Dealer loop. Accepts a hello from each link (in either order), seeds itself
/// from the announced session, hands out party seeds, then answers party 1's
/// requests until it says goodbye.
pub fn run_dealer_with(
    seed_for: &dyn Fn(u32) -> u64,
    mut a: Box<dyn Transport>,
    mut b: Box<dyn Transport>,
) -> Result<DealerStats> {
    let hello = |t: &mut Box<dyn Transport>| -> Result<(PartyId, u32)> {
        let f = t.recv()?;
        if f.opcode != Opcode::Hello || f.payload.len() != 1 {
            return Err(MpcError::ProtocolDesync("dealer expected hello".into()));
        }
        let role = PartyId::from_index(f.payload[0] as usize)
            .ok_or_else(|| MpcError::ProtocolDesync("bad role in hello".into()))?;
        Ok((role, f.session))
    };
    let (ra, sa) = hello(&mut a)?;
    let (rb, sb) = hello(&mut b)?;
    if ra == rb {
        return Err(MpcError::ProtocolDesync(format!(
            "both dealer links claim {ra}"
        )));
    }
    if sa != sb {
        return Err(MpcError::SessionMismatch(sa, sb));
    }
    let (mut l0, mut l1) = if ra == PartyId::P0 { (a, b) } else { (b, a) };

    let mut root = ChaCha12Rng::seed_from_u64(seed_for(sa));
    let mut seed0 = [0u8; 32];
    let mut seed1 = [0u8; 32];
    root.fill_bytes(&mut seed0);
    root.fill_bytes(&mut seed1);
    l0.send(&Frame::new(Opcode::DealerSeed, Tag::Meta, 0, 0, seed0.to_vec()))?;
    l1.send(&Frame::new(Opcode::DealerSeed, Tag::Meta, 0, 0, seed1.to_vec()))?;
    let mut prg0 = ChaCha12Rng::from_seed(seed0);
    let mut prg1 = ChaCha12Rng::from_seed(seed1);

    let mut stats = DealerStats::default();
    loop {
        let f = match l1.recv() {
            Ok(f) => f,
            Err(MpcError::Disconnected) => break,
            Err(e) => return Err(e),
        };
        match f.opcode {
            Opcode::DealerRequest => {
                let kind = TripleKind::decode(&f.ring_payload()?)?;
                let fix = correction(kind, &mut prg0, &mut prg1);
                l1.send(&Frame::new(
                    Opcode::DealerCorrection,
                    Tag::None,
                    0,
                    f.tensor as u64,
                    ring_to_bytes(&fix),
                ))?;
                stats.items += 1;
                stats.words += fix.len() as u64;
            }
            Opcode::Bye => break,
            other => {
                return Err(MpcError::ProtocolDesync(format!(
                    "dealer got unexpected {other:?}"
                )))
            }
        }
    }
    // Party 0 only ever says goodbye; wait for it so its link closes cleanly.
    let _ = l0.recv();
    debug!("dealer served {} items ({} words)", stats.items, stats.words);
    Ok(stats)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DealerStats {
    pub items: u64,
    pub words: u64,
}

const TRIPLE_MAGIC: &[u8; 8] = b"PDVTRIP1";

/// Writes one party's material as `magic | count | items`, little-endian.
pub fn write_triple_file(path: &Path, items: &[Material]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRIPLE_MAGIC)?;
    w.write_all(&(items.len() as u64).to_le_bytes())?;
    for m in items {
        w.write_all(&ring_to_bytes(&m.kind.encode()))?;
        w.write_all(&m.id.to_le_bytes())?;
        for p in &m.parts {
            w.write_all(&ring_to_bytes(p))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_words<R: Read>(r: &mut R, n: usize) -> Result<Vec<u64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| MpcError::TripleFile(format!("truncated file: {e}")))?;
    bytes_to_ring(&buf)
}

pub fn read_triple_file(path: &Path) -> Result<Vec<Material>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| MpcError::TripleFile("missing header".into()))?;
    if &magic != TRIPLE_MAGIC {
        return Err(MpcError::TripleFile("bad magic".into()));
    }
    let count = read_words(&mut r, 1)?[0] as usize;
    let mut items = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let kind = TripleKind::decode(&read_words(&mut r, 4)?)?;
        let id = read_words(&mut r, 1)?[0];
        let lens = kind.part_lens();
        let nparts = if matches!(kind, TripleKind::RandBit { .. }) { 2 } else { 3 };
        let parts = lens[..nparts]
            .iter()
            .map(|&n| read_words(&mut r, n))
            .collect::<Result<Vec<_>>>()?;
        items.push(Material { id, kind, parts });
    }
    Ok(items)
}

/// Offline source that replays a preprocessed triple file in order.
pub struct TripleFileSource {
    items: std::vec::IntoIter<Material>,
}

impl TripleFileSource {
    pub fn open(path: &Path) -> Result<TripleFileSource> {
        Ok(TripleFileSource {
            items: read_triple_file(path)?.into_iter(),
        })
    }

    pub fn from_items(items: Vec<Material>) -> TripleFileSource {
        TripleFileSource {
            items: items.into_iter(),
        }
    }
}

impl CorrelationSource for TripleFileSource {
    fn begin(&mut self, kind: TripleKind) -> Result<Material> {
        let m = self
            .items
            .next()
            .ok_or_else(|| MpcError::TripleFile("preprocessed material exhausted".into()))?;
        if m.kind != kind {
            return Err(MpcError::TripleFile(format!(
                "next item is {:?}, protocol asked for {kind:?}",
                m.kind
            )));
        }
        Ok(m)
    }

    fn finish(&mut self, pending: Material) -> Result<Material> {
        Ok(pending)
    }
}
