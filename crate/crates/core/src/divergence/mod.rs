//! Directional dataset divergence scores.
//!
//! The classifier scores train a membership classifier (source rows labeled 1,
//! target rows 0) and report its mean predicted probability over the source
//! rows: 0.5 means the two datasets cannot be told apart, values near 1 mean
//! they are easy to separate.

pub mod kde;
pub mod secure;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{membership_features, FeatureBounds, Matrix, SiteDataset};
use crate::error::{CoreError, Result};
use crate::plain_ml::{train_sgd, SgdHyperparams};

pub use kde::{kde_kl, KdeConfig};
pub use secure::{
    kl_secure_local, kl_x_secure, kl_xy_secure, score_as_party, session_id, PartyScore, SecureOptions,
    SecureRun,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "KL_XY")]
    KlXy,
    #[serde(rename = "KL_X")]
    KlX,
    #[serde(rename = "SecureKL_XY")]
    SecureKlXy,
    #[serde(rename = "SecureKL_X")]
    SecureKlX,
    #[serde(rename = "KDE_KL")]
    KdeKl,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::KlXy,
        Method::KlX,
        Method::SecureKlXy,
        Method::SecureKlX,
        Method::KdeKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::KlXy => "KL_XY",
            Method::KlX => "KL_X",
            Method::SecureKlXy => "SecureKL_XY",
            Method::SecureKlX => "SecureKL_X",
            Method::KdeKl => "KDE_KL",
        }
    }

    /// Whether the task label is folded into the classifier features.
    pub fn uses_labels(self) -> bool {
        matches!(self, Method::KlXy | Method::SecureKlXy)
    }

    pub fn is_secure(self) -> bool {
        matches!(self, Method::SecureKlXy | Method::SecureKlX)
    }

    /// Classifier scores are bounded in `[0, 1]`; KDE is not.
    pub fn is_classifier(self) -> bool {
        self != Method::KdeKl
    }

    /// The plaintext method computing the same quantity.
    pub fn plaintext(self) -> Method {
        match self {
            Method::SecureKlXy => Method::KlXy,
            Method::SecureKlX => Method::KlX,
            m => m,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::ConfigInvalid(format!("unknown method `{s}`")))
    }
}

/// One directional score; serialized as `{source, target, method, value, k, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceScore {
    pub source: String,
    pub target: String,
    pub method: Method,
    pub value: f64,
    /// Target rows used.
    pub k: usize,
    pub seed: u64,
}

/// Stacked classifier inputs with membership targets.
#[derive(Debug, Clone)]
pub struct MembershipData {
    pub x: Matrix,
    /// 1 for source rows, 0 for target rows.
    pub membership: Vec<f64>,
    /// Positions of the source rows in `x`.
    pub source_rows: Vec<usize>,
}

/// Stacks scaled source and target rows and shuffles them with a public seed.
pub fn build_membership_dataset(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    use_labels: bool,
    seed: u64,
) -> Result<MembershipData> {
    if src.d() != tgt.d() {
        return Err(CoreError::DimensionMismatch(src.d(), tgt.d()));
    }
    let a = membership_features(src, bounds, use_labels)?;
    let b = membership_features(tgt, bounds, use_labels)?;
    let stacked = Matrix::vstack(&[&a, &b])?;
    let n = stacked.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha12Rng::seed_from_u64(seed ^ 0x4d45_4d42));
    let x = stacked.select_rows(&perm);
    let membership = perm
        .iter()
        .map(|&i| if i < src.n() { 1.0 } else { 0.0 })
        .collect::<Vec<_>>();
    let source_rows = (0..n).filter(|&i| membership[i] == 1.0).collect();
    Ok(MembershipData {
        x,
        membership,
        source_rows,
    })
}

/// Plaintext membership-classifier score.
pub fn classifier_score(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    use_labels: bool,
    hp: &SgdHyperparams,
    seed: u64,
) -> Result<f64> {
    if src.n() == 0 {
        return Err(CoreError::EmptySource);
    }
    let data = build_membership_dataset(src, tgt, bounds, use_labels, seed)?;
    let model = train_sgd(&data.x, &data.membership, hp, seed)?.model;
    let p = model.predict(&data.x.select_rows(&data.source_rows));
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

fn plain_score(
    method: Method,
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    hp: &SgdHyperparams,
    seed: u64,
) -> Result<DivergenceScore> {
    let value = classifier_score(src, tgt, bounds, method.uses_labels(), hp, seed)?;
    Ok(DivergenceScore {
        source: src.site_id.clone(),
        target: tgt.site_id.clone(),
        method,
        value,
        k: tgt.n(),
        seed,
    })
}

/// Score with the task label folded into the features.
pub fn kl_xy_plain(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    hp: &SgdHyperparams,
    seed: u64,
) -> Result<DivergenceScore> {
    plain_score(Method::KlXy, src, tgt, bounds, hp, seed)
}

/// Score on covariates alone.
pub fn kl_x_plain(
    src: &SiteDataset,
    tgt: &SiteDataset,
    bounds: &FeatureBounds,
    hp: &SgdHyperparams,
    seed: u64,
) -> Result<DivergenceScore> {
    plain_score(Method::KlX, src, tgt, bounds, hp, seed)
}
