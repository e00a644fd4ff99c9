//! Runs both parties and the dealer on threads of one process, connected by
//! in-memory channels that carry the same bytes a socket would.

use serde::{Deserialize, Serialize};

use crate::dealer::{run_dealer, DealerClient};
use crate::error::MpcError;
use crate::fixed::FixedPointConfig;
use crate::session::{Session, SessionReport};
use crate::share::PartyId;
use crate::transport::channel_pair;

/// Seeds and parameters fixing everything random in a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session: u32,
    pub cfg: FixedPointConfig,
    pub dealer_seed: u64,
    pub mask_seeds: [u64; 2],
}

impl SessionSpec {
    /// Derives all seeds from one value, which also serves as the dealer's
    /// master seed.
    pub fn from_seed(session: u32, seed: u64) -> SessionSpec {
        let mix = |salt: u64| crate::share::derive_id(salt, &[seed, session as u64]);
        SessionSpec {
            session,
            cfg: FixedPointConfig::default(),
            dealer_seed: SessionSpec::dealer_seed_for(seed, session),
            mask_seeds: [mix(0xA0), mix(0xA1)],
        }
    }

    /// Per-session dealer seed under a dealer master seed.
    pub fn dealer_seed_for(master: u64, session: u32) -> u64 {
        crate::share::derive_id(0xD0, &[master, session as u64])
    }

    /// Replaces the dealer seed with one derived from a separate master.
    pub fn with_dealer_master(mut self, master: u64) -> SessionSpec {
        self.dealer_seed = SessionSpec::dealer_seed_for(master, self.session);
        self
    }
}

pub struct LocalRun<T0, T1> {
    pub out0: T0,
    pub out1: T1,
    pub report0: SessionReport,
    pub report1: SessionReport,
}

/// Runs `f0` as party 0 and `f1` as party 1 against a fresh dealer.
///
/// If either party fails, the other sees a disconnect; the first error that is
/// not a bare disconnect is returned.
pub fn run_local<T0, T1, E, F0, F1>(
    spec: &SessionSpec,
    f0: F0,
    f1: F1,
) -> std::result::Result<LocalRun<T0, T1>, E>
where
    T0: Send,
    T1: Send,
    E: PartyError,
    F0: FnOnce(&mut Session) -> std::result::Result<T0, E> + Send,
    F1: FnOnce(&mut Session) -> std::result::Result<T1, E> + Send,
{
    let (peer0, peer1) = channel_pair();
    let (d0, c0) = channel_pair();
    let (d1, c1) = channel_pair();
    let spec = *spec;

    std::thread::scope(|scope| {
        let dealer = scope.spawn(move || run_dealer(spec.dealer_seed, Box::new(d0), Box::new(d1)));
        let h0 = scope.spawn(move || -> std::result::Result<(T0, SessionReport), E> {
            let corr = DealerClient::connect(PartyId::P0, spec.session, Box::new(c0))?;
            let mut s = Session::new(
                PartyId::P0,
                spec.session,
                spec.cfg,
                spec.mask_seeds[0],
                Box::new(peer0),
                Box::new(corr),
            )?;
            let out = f0(&mut s)?;
            Ok((out, s.finish()?))
        });
        let r1 = (|| -> std::result::Result<(T1, SessionReport), E> {
            let corr = DealerClient::connect(PartyId::P1, spec.session, Box::new(c1))?;
            let mut s = Session::new(
                PartyId::P1,
                spec.session,
                spec.cfg,
                spec.mask_seeds[1],
                Box::new(peer1),
                Box::new(corr),
            )?;
            let out = f1(&mut s)?;
            Ok((out, s.finish()?))
        })();
        let r0 = h0.join().map_err(|_| E::from(panic_error(PartyId::P0)))?;
        let rd = dealer
            .join()
            .map_err(|_| E::from(MpcError::ProtocolDesync("dealer panicked".into())))?;
        match (r0, r1) {
            (Ok((out0, report0)), Ok((out1, report1))) => {
                rd.map_err(E::from)?;
                Ok(LocalRun {
                    out0,
                    out1,
                    report0,
                    report1,
                })
            }
            (Err(e0), Err(e1)) => Err(pick(e0, e1)),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })
}

fn panic_error(p: PartyId) -> MpcError {
    MpcError::ProtocolDesync(format!("{p} panicked"))
}

fn pick<E: PartyError>(a: E, b: E) -> E {
    if a.is_disconnect() {
        b
    } else {
        a
    }
}

/// Error types a party closure may return.
pub trait PartyError: From<MpcError> + Send {
    /// True when the error only reports that the other side went away.
    fn is_disconnect(&self) -> bool;
}

impl PartyError for MpcError {
    fn is_disconnect(&self) -> bool {
        matches!(self, MpcError::Disconnected)
    }
}
