//! Two-process deployment over TCP: party 0 listens for party 1, and both
//! parties connect to a separately running dealer.

use std::net::TcpListener;
use std::time::Duration;

use log::info;

use crate::dealer::{run_dealer_with, DealerClient, DealerStats};
use crate::error::Result;
use crate::local::SessionSpec;
use crate::session::Session;
use crate::share::PartyId;
use crate::transport::{RetryPolicy, TcpTransport};

/// Generous default so a slow peer is not mistaken for a dead one.
pub const DEFAULT_READ_TIMEOUT: Duration = Duration::from_secs(600);

pub enum PeerLink<'a> {
    /// Wait for the peer on an already bound listener.
    Listen(&'a TcpListener),
    /// Connect to the peer at `host:port`.
    Connect(&'a str),
}

/// Accepts both parties on `listener` and serves one session with `seed`.
pub fn serve_dealer(listener: &TcpListener, seed: u64) -> Result<DealerStats> {
    serve_dealer_with(listener, &|_| seed)
}

/// Serves one session, seeding from the session id both parties announce.
pub fn serve_dealer_with(listener: &TcpListener, seed_for: &dyn Fn(u32) -> u64) -> Result<DealerStats> {
    let a = TcpTransport::accept(listener, Some(DEFAULT_READ_TIMEOUT))?;
    let b = TcpTransport::accept(listener, Some(DEFAULT_READ_TIMEOUT))?;
    let stats = run_dealer_with(seed_for, Box::new(a), Box::new(b))?;
    info!("dealer finished: {} items", stats.items);
    Ok(stats)
}

/// Establishes one party's session: dealer link first, then the peer link.
pub fn tcp_session(
    party: PartyId,
    spec: &SessionSpec,
    peer: PeerLink<'_>,
    dealer_addr: &str,
    retry: RetryPolicy,
) -> Result<Session> {
    let dealer = TcpTransport::connect(dealer_addr, retry, Some(DEFAULT_READ_TIMEOUT))?;
    let corr = DealerClient::connect(party, spec.session, Box::new(dealer))?;
    let link = match peer {
        PeerLink::Listen(l) => TcpTransport::accept(l, Some(DEFAULT_READ_TIMEOUT))?,
        PeerLink::Connect(addr) => TcpTransport::connect(addr, retry, Some(DEFAULT_READ_TIMEOUT))?,
    };
    Session::new(
        party,
        spec.session,
        spec.cfg,
        spec.mask_seeds[party.index()],
        Box::new(link),
        Box::new(corr),
    )
}
