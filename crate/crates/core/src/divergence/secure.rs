//! Classifier scores computed under secret sharing.
//!
//! Party 0 holds the source, party 1 the target. Each side scales its own rows
//! with the public bounds and shares them; row counts are public, so the
//! membership targets are public too. Only the final mean (and, outside strict
//! mode, the epoch losses) is opened.

use log::{debug, warn};
use privdiv_mpc::share::derive_id;
use privdiv_mpc::{run_local, PartyId, RingTensor, Session, SessionReport, SessionSpec, SharedTensor};
use serde::{Deserialize, Serialize};

use super::{DivergenceScore, Method};
use crate::data::{membership_features, FeatureBounds, SiteDataset};
use crate::error::{CoreError, Result};
use crate::plain_ml::SgdHyperparams;
use crate::secure_ml::{secure_logreg_train, secure_mean_score};

/// Attempts per score; a retry follows a range-check failure, which signals a
/// rare local-truncation wrap.
pub const MAX_ATTEMPTS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecureOptions {
    pub use_labels: bool,
    pub hp: SgdHyperparams,
    pub seed: u64,
    /// Open no epoch losses and run exactly `hp.max_epochs`.
    pub strict: bool,
}

impl SecureOptions {
    pub fn new(method: Method, seed: u64) -> SecureOptions {
        SecureOptions {
            use_labels: method.uses_labels(),
            hp: SgdHyperparams::encrypted(),
            seed,
            strict: false,
        }
    }
}

/// What one party learns from a secure score: the opened value and the
/// public row counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyScore {
    pub value: f64,
    /// Membership rows contributed by party 0 (source) and party 1 (target).
    pub rows: [usize; 2],
}

impl PartyScore {
    pub fn into_score(self, source: &str, target: &str, opts: &SecureOptions) -> DivergenceScore {
        DivergenceScore {
            source: source.to_string(),
            target: target.to_string(),
            method: if opts.use_labels {
                Method::SecureKlXy
            } else {
                Method::SecureKlX
            },
            value: self.value,
            k: self.rows[1],
            seed: opts.seed,
        }
    }
}

/// Runs this party's side of one secure score.
pub fn score_as_party(
    s: &mut Session,
    own: &SiteDataset,
    bounds: &FeatureBounds,
    opts: &SecureOptions,
) -> Result<PartyScore> {
    let feats = membership_features(own, bounds, opts.use_labels)?;
    let (n, c) = (feats.rows(), feats.cols());
    let peer = s.exchange_public(&[n as u64, c as u64])?;
    if peer[1] as usize != c {
        return Err(CoreError::DimensionMismatch(c, peer[1] as usize));
    }
    let (n0, n1) = match s.party() {
        PartyId::P0 => (n, peer[0] as usize),
        PartyId::P1 => (peer[0] as usize, n),
    };
    if n0 == 0 {
        return Err(CoreError::EmptySource);
    }
    let mine = RingTensor::from_f64(vec![n, c], feats.data(), s.cfg())?;
    let mut shared = Vec::with_capacity(2);
    for (owner, rows) in [(PartyId::P0, n0), (PartyId::P1, n1)] {
        let value = (owner == s.party()).then_some(&mine);
        shared.push(s.input(owner, value, vec![rows, c])?);
    }
    let (x_src, x_tgt) = (&shared[0], &shared[1]);
    let flat = SharedTensor::concat(&[&x_src.reshape(vec![n0 * c])?, &x_tgt.reshape(vec![n1 * c])?])?;
    let x = flat.reshape(vec![n0 + n1, c])?;
    let mut labels = vec![1.0; n0];
    labels.resize(n0 + n1, 0.0);

    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = if attempt == 0 {
            opts.seed
        } else {
            derive_id(0x5EC0, &[opts.seed, attempt])
        };
        let run = secure_logreg_train(s, &x, &labels, &opts.hp, seed, opts.strict)
            .and_then(|model| {
                debug!("trained {} epochs, losses {:?}", model.epochs, model.training_log);
                secure_mean_score(s, &model, x_src)
            })
            .map(|value| PartyScore { value, rows: [n0, n1] });
        match run {
            Err(CoreError::NonFinite(why)) => {
                warn!("attempt {attempt} rejected: {why}");
                last = Some(CoreError::NonFinite(why));
            }
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Score plus both parties' protocol reports.
#[derive(Debug, Clone)]
pub struct SecureRun {
    pub score: DivergenceScore,
    pub report0: SessionReport,
    pub report1: SessionReport,
}

/// Session id for a (source, target) pair, stable across processes.
pub fn session_id(source: &str, target: &str, seed: u64) -> u32 {
    let h = |s: &str| derive_id(0x51D, &s.bytes().map(u64::from).collect::<Vec<_>>());
    derive_id(0x5E55, &[h(source), h(target), seed]) as u32
}

/// Runs both parties and the dealer in this process.
pub fn kl_secure_local(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    opts: &SecureOptions,
) -> Result<SecureRun> {
    if src.d() != tgt.d() {
        return Err(CoreError::DimensionMismatch(src.d(), tgt.d()));
    }
    let spec = SessionSpec::from_seed(session_id(&src.site_id, &tgt.site_id, opts.seed), opts.seed);
    let run = run_local(
        &spec,
        |s| score_as_party(s, src, bounds, opts),
        |s| score_as_party(s, tgt, bounds, opts),
    )?;
    if run.out0.value.to_bits() != run.out1.value.to_bits() || run.out0.rows != run.out1.rows {
        return Err(CoreError::Mpc(privdiv_mpc::MpcError::ProtocolDesync(format!(
            "parties disagree on the score: {:?} vs {:?}",
            run.out0, run.out1
        ))));
    }
    Ok(SecureRun {
        score: run.out0.into_score(&src.site_id, &tgt.site_id, opts),
        report0: run.report0,
        report1: run.report1,
    })
}

pub fn kl_xy_secure(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    seed: u64,
) -> Result<DivergenceScore> {
    Ok(kl_secure_local(src, tgt, bounds, &SecureOptions::new(Method::SecureKlXy, seed))?.score)
}

pub fn kl_x_secure(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    seed: u64,
) -> Result<DivergenceScore> {
    Ok(kl_secure_local(src, tgt, bounds, &SecureOptions::new(Method::SecureKlX, seed))?.score)
}
