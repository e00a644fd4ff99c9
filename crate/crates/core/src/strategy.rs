//! Acquisition strategies: which `n` candidate datasets a source should pick.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBounds, SiteDataset};
use crate::divergence::{kl_secure_local, kl_xy_plain, DivergenceScore, Method, SecureOptions};
use crate::error::{CoreError, Result};
use crate::par::Execution;
use crate::plain_ml::SgdHyperparams;
use privdiv_mpc::share::derive_id;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    /// Uniformly random candidates.
    Blind,
    /// Closest demographic histogram for one attribute.
    Demographic { attribute: String },
    /// Plaintext KL_XY on `k` rows shared by each candidate.
    Subset { k: usize },
    /// Secure KL_XY on the full datasets.
    Private,
}

impl StrategyKind {
    pub fn leakage(&self) -> LeakageTag {
        match self {
            StrategyKind::Blind => LeakageTag::Zero,
            StrategyKind::Private => LeakageTag::Minimal,
            StrategyKind::Demographic { .. } => LeakageTag::Moderate,
            StrategyKind::Subset { .. } => LeakageTag::High,
        }
    }

    /// Short label: `blind`, `demographic:age`, `subset:30`, `private`.
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Blind => "blind".into(),
            StrategyKind::Demographic { attribute } => format!("demographic:{attribute}"),
            StrategyKind::Subset { k } => format!("subset:{k}"),
            StrategyKind::Private => "private".into(),
        }
    }

    /// Parses [`label`](StrategyKind::label) output; `subset` alone takes
    /// 1% of `samples_per_site`.
    pub fn parse(s: &str, samples_per_site: usize) -> Result<StrategyKind> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let bad = || CoreError::ConfigInvalid(format!("unknown strategy `{s}`"));
        Ok(match (head, arg) {
            ("blind", None) => StrategyKind::Blind,
            ("private", None) => StrategyKind::Private,
            ("demographic", Some(a)) => StrategyKind::Demographic {
                attribute: a.to_string(),
            },
            ("subset", None) => StrategyKind::Subset {
                k: default_subset_size(samples_per_site),
            },
            ("subset", Some(k)) => StrategyKind::Subset {
                k: k.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        })
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One percent of the site size, at least one row.
pub fn default_subset_size(samples_per_site: usize) -> usize {
    (samples_per_site / 100).max(1)
}

/// Subset sizes of the sweep: 0.1%, 1%, 10% and 100% of the site size.
pub fn subset_sweep(samples_per_site: usize) -> Vec<usize> {
    [1000, 100, 10, 1]
        .iter()
        .map(|div| (samples_per_site / div).max(1))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageTag {
    Zero,
    Minimal,
    Moderate,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    #[serde(flatten)]
    pub kind: StrategyKind,
    pub n: usize,
    pub seed: u64,
}

impl StrategySpec {
    pub fn validate(&self, candidates: usize, samples_per_site: usize) -> Result<()> {
        if self.n == 0 || self.n > candidates {
            return Err(CoreError::NotEnoughCandidates {
                want: self.n,
                have: candidates,
            });
        }
        if let StrategyKind::Subset { k } = self.kind {
            if k == 0 || k > samples_per_site {
                return Err(CoreError::ConfigInvalid(format!(
                    "subset size {k} outside 1..={samples_per_site}"
                )));
            }
        }
        Ok(())
    }
}

/// A selection with everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub source: String,
    pub strategy: StrategySpec,
    pub selected: Vec<String>,
    pub leakage: LeakageTag,
    /// Scorer behind the ranking; absent for blind selection.
    pub method: Option<String>,
    pub k: Option<usize>,
    /// Ranking values by candidate id; empty for blind selection.
    pub values: Vec<(String, f64)>,
}

/// `n` distinct candidates drawn uniformly with a seeded generator.
pub fn select_blind(n: usize, candidates: &[String], seed: u64) -> Result<Vec<String>> {
    if n > candidates.len() {
        return Err(CoreError::NotEnoughCandidates {
            want: n,
            have: candidates.len(),
        });
    }
    let mut sorted = candidates.to_vec();
    sorted.sort();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, sorted.len(), n)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect())
}

/// Euclidean distance between two sites' histograms of `attribute`.
pub fn demographic_distance(src: &SiteDataset, tgt: &SiteDataset, attribute: &str) -> Result<f64> {
    let a = src.histogram(attribute)?;
    let b = tgt.histogram(attribute)?;
    if a.len() != b.len() {
        return Err(CoreError::CategoryMismatch(attribute.to_string()));
    }
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
}

/// The `n` candidates with the smallest values; ties go to the smaller id.
pub fn rank_ascending(values: &[(String, f64)], candidates: &[String], n: usize) -> Result<Vec<String>> {
    if n > candidates.len() {
        return Err(CoreError::NotEnoughCandidates {
            want: n,
            have: candidates.len(),
        });
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = values
            .iter()
            .find(|(id, _)| id == c)
            .map(|(_, v)| *v)
            .ok_or_else(|| CoreError::IncompleteScores(c.clone()))?;
        if !v.is_finite() {
            return Err(CoreError::NonFinite(format!("score for {c}")));
        }
        rows.push((v, c.clone()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(rows.into_iter().take(n).map(|(_, c)| c).collect())
}

/// Greedy top-`n` by smallest score among `candidates`. All scores must share
/// one source.
pub fn select_by_score(scores: &[DivergenceScore], candidates: &[String], n: usize) -> Result<Vec<String>> {
    let sources: BTreeSet<&str> = scores.iter().map(|s| s.source.as_str()).collect();
    if sources.len() > 1 {
        return Err(CoreError::ConfigInvalid(format!(
            "scores from several sources: {sources:?}"
        )));
    }
    let values: Vec<(String, f64)> = scores.iter().map(|s| (s.target.clone(), s.value)).collect();
    rank_ascending(&values, candidates, n)
}

/// Scorers and settings shared by the strategies.
#[derive(Debug, Clone)]
pub struct ScoringContext {
    pub bounds: FeatureBounds,
    pub plain_hp: SgdHyperparams,
    pub secure_hp: SgdHyperparams,
    pub strict: bool,
    pub execution: Execution,
}

impl ScoringContext {
    pub fn new(bounds: FeatureBounds) -> ScoringContext {
        ScoringContext {
            bounds,
            plain_hp: SgdHyperparams::plaintext(),
            secure_hp: SgdHyperparams::encrypted(),
            strict: false,
            execution: Execution::default(),
        }
    }

    /// Score seed for one (strategy seed, target) cell.
    pub fn cell_seed(seed: u64, target: &str) -> u64 {
        derive_id(0xCE11, &[seed, derive_id(0, &target.bytes().map(u64::from).collect::<Vec<_>>())])
    }

    /// Secure KL_XY of `source` against every candidate.
    pub fn private_scores(
        &self,
        source: &SiteDataset,
        candidates: &[&SiteDataset],
        seed: u64,
    ) -> Result<Vec<DivergenceScore>> {
        self.execution.try_map(candidates, |t| {
            let mut opts = SecureOptions::new(Method::SecureKlXy, seed);
            opts.hp = self.secure_hp;
            opts.strict = self.strict;
            Ok(kl_secure_local(source, t, &self.bounds, &opts)?.score)
        })
    }

    /// Plaintext KL_XY of `source` against `k` rows of every candidate.
    pub fn subset_scores(
        &self,
        source: &SiteDataset,
        candidates: &[&SiteDataset],
        k: usize,
        seed: u64,
    ) -> Result<Vec<DivergenceScore>> {
        self.execution.try_map(candidates, |t| {
            let cell = ScoringContext::cell_seed(seed, &t.site_id);
            let shared = t.subsample(k, cell)?;
            kl_xy_plain(source, &shared, &self.bounds, &self.plain_hp, seed)
        })
    }
}

/// Runs one strategy for `source` over `candidates` (which must not include
/// the source itself).
pub fn run_strategy(
    spec: &StrategySpec,
    source: &SiteDataset,
    candidates: &[&SiteDataset],
    ctx: &ScoringContext,
) -> Result<Selection> {
    let ids: Vec<String> = candidates.iter().map(|c| c.site_id.clone()).collect();
    if ids.contains(&source.site_id) {
        return Err(CoreError::ConfigInvalid(format!(
            "{} is listed as its own candidate",
            source.site_id
        )));
    }
    let size = candidates.iter().map(|c| c.n()).min().unwrap_or(0);
    spec.validate(ids.len(), size)?;
    let (method, k, values) = match &spec.kind {
        StrategyKind::Blind => (None, None, vec![]),
        StrategyKind::Demographic { attribute } => {
            let mut v = Vec::with_capacity(candidates.len());
            for c in candidates {
                v.push((c.site_id.clone(), demographic_distance(source, c, attribute)?));
            }
            (Some(format!("demographic_l2:{attribute}")), None, v)
        }
        StrategyKind::Subset { k } => {
            let s = ctx.subset_scores(source, candidates, *k, spec.seed)?;
            (Some(Method::KlXy.to_string()), Some(*k), pairs(&s))
        }
        StrategyKind::Private => {
            let s = ctx.private_scores(source, candidates, spec.seed)?;
            (Some(Method::SecureKlXy.to_string()), Some(size), pairs(&s))
        }
    };
    let selected = match spec.kind {
        StrategyKind::Blind => select_blind(spec.n, &ids, spec.seed)?,
        _ => rank_ascending(&values, &ids, spec.n)?,
    };
    Ok(Selection {
        source: source.site_id.clone(),
        strategy: spec.clone(),
        selected,
        leakage: spec.kind.leakage(),
        method,
        k,
        values,
    })
}

fn pairs(scores: &[DivergenceScore]) -> Vec<(String, f64)> {
    scores.iter().map(|s| (s.target.clone(), s.value)).collect()
}
