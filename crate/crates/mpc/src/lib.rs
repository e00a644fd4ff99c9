//! Semi-honest two-party computation over additive shares in Z_2^64.
//!
//! Reals are fixed-point encoded ([`fixed`]), split into additive shares
//! ([`share`]), and combined with help from a trusted dealer that hands out
//! correlated randomness ([`dealer`]). A [`Session`] is one party's end of a
//! protocol run; [`run_local`] wires two parties and a dealer together on
//! threads of one process.

pub mod dealer;
pub mod error;
pub mod fixed;
pub mod frame;
pub mod local;
pub mod net;
pub mod session;
pub mod share;
pub mod trace;
pub mod transport;

pub use dealer::{
    dealer_generate, run_dealer, run_dealer_with, BeaverTriple, CorrelationSource, DealerClient, TripleFileSource,
    TripleKind,
};
pub use error::{MpcError, Result};
pub use fixed::{decode, encode, fx_mul, FixedPointConfig, RingTensor};
pub use frame::Tag;
pub use local::{run_local, LocalRun, PartyError, SessionSpec};
pub use session::{MulOp, Session, SessionReport, TranscriptDigest};
pub use share::{reconstruct, secure_add, share, PartyId, SharedTensor};
pub use trace::{Trace, TraceAudit};
pub use transport::{channel_pair, ChannelTransport, RetryPolicy, TcpTransport, Transport};
