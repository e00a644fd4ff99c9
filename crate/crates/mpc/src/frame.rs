//! Length-prefixed binary frames.
//!
//! ```text
//! offset  size  field
//!      0     1  version (currently 1)
//!      1     1  opcode
//!      2     1  tag (what an opened value is, for the leakage trace)
//!      3     1  reserved, zero
//!      4     4  session id        (u32 LE)
//!      8     4  tensor id, low 32 bits (u32 LE)
//!     12     4  payload length in bytes (u32 LE)
//!     16     n  payload; ring elements are u64 LE
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MpcError, Result};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
/// Frames larger than this are rejected before allocating.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Hello = 1,
    Input = 2,
    Open = 3,
    OpenBool = 4,
    DealerRequest = 5,
    DealerCorrection = 6,
    DealerSeed = 7,
    Bye = 8,
}

impl Opcode {
    fn from_u8(b: u8) -> Result<Opcode> {
        Ok(match b {
            1 => Opcode::Hello,
            2 => Opcode::Input,
            3 => Opcode::Open,
            4 => Opcode::OpenBool,
            5 => Opcode::DealerRequest,
            6 => Opcode::DealerCorrection,
            7 => Opcode::DealerSeed,
            8 => Opcode::Bye,
            other => return Err(MpcError::Frame(format!("unknown opcode {other}"))),
        })
    }
}

/// What a transmitted value is. Every open is tagged so the trace can be audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Tag {
    None = 0,
    /// Raw (unmasked) private data. The divergence flows never open this.
    Data = 1,
    /// Beaver masks and other values blinded by fresh dealer randomness.
    Mask = 2,
    /// Per-epoch training loss.
    Loss = 3,
    /// The single result of a protocol run.
    Final = 4,
    /// An input share sent to the other party.
    Input = 5,
    /// Public metadata (row counts, dimensions).
    Meta = 6,
}

impl Tag {
    fn from_u8(b: u8) -> Result<Tag> {
        Ok(match b {
            0 => Tag::None,
            1 => Tag::Data,
            2 => Tag::Mask,
            3 => Tag::Loss,
            4 => Tag::Final,
            5 => Tag::Input,
            6 => Tag::Meta,
            other => return Err(MpcError::Frame(format!("unknown tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub tag: Tag,
    pub session: u32,
    pub tensor: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, tag: Tag, session: u32, tensor: u64, payload: Vec<u8>) -> Frame {
        Frame {
            opcode,
            tag,
            session,
            tensor: tensor as u32,
            payload,
        }
    }

    pub fn with_ring(opcode: Opcode, tag: Tag, session: u32, tensor: u64, data: &[u64]) -> Frame {
        Frame::new(opcode, tag, session, tensor, ring_to_bytes(data))
    }

    pub fn ring_payload(&self) -> Result<Vec<u64>> {
        bytes_to_ring(&self.payload)
    }

    pub fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = WIRE_VERSION;
        h[1] = self.opcode as u8;
        h[2] = self.tag as u8;
        h[4..8].copy_from_slice(&self.session.to_le_bytes());
        h[8..12].copy_from_slice(&self.tensor.to_le_bytes());
        h[12..16].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Frame> {
        let mut cursor = bytes;
        let frame = Frame::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(MpcError::Frame(format!(
                "{} trailing bytes after frame",
                cursor.len()
            )));
        }
        Ok(frame)
    }

    pub fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(MpcError::Frame(format!(
                "payload of {} bytes exceeds limit",
                self.payload.len()
            )));
        }
        w.write_all(&self.header())?;
        w.write_all(&self.payload)?;
        Ok(())
    }

    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> Result<Frame> {
        let mut h = [0u8; HEADER_LEN];
        match r.read_exact(&mut h) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                return Err(MpcError::Disconnected)
            }
            Err(e) => return Err(e.into()),
        }
        if h[0] != WIRE_VERSION {
            return Err(MpcError::Frame(format!(
                "unsupported wire version {}",
                h[0]
            )));
        }
        let opcode = Opcode::from_u8(h[1])?;
        let tag = Tag::from_u8(h[2])?;
        let session = u32::from_le_bytes(h[4..8].try_into().unwrap());
        let tensor = u32::from_le_bytes(h[8..12].try_into().unwrap());
        let len = u32::from_le_bytes(h[12..16].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(MpcError::Frame(format!("payload length {len} exceeds limit")));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Frame {
            opcode,
            tag,
            session,
            tensor,
            payload,
        })
    }
}

pub fn ring_to_bytes(data: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn bytes_to_ring(bytes: &[u8]) -> Result<Vec<u64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(MpcError::Frame(format!(
            "ring payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
