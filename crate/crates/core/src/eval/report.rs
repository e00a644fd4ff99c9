//! Report assembly: per-source consistency tables and strategy outcome tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{bh_fdr, spearman};
use crate::divergence::DivergenceScore;
use crate::error::{CoreError, Result};
use crate::strategy::StrategySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConsistency {
    pub source: String,
    pub pairs: usize,
    pub rho: f64,
    pub p_value: f64,
    /// Rejected under Benjamini-Hochberg across all sources.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub q: f64,
    pub sources: Vec<SourceConsistency>,
    pub mean_rho: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub significant: usize,
}

type Key = (String, String);

fn index(scores: &[DivergenceScore]) -> Result<BTreeMap<Key, &DivergenceScore>> {
    let mut m = BTreeMap::new();
    for s in scores {
        if m.insert((s.source.clone(), s.target.clone()), s).is_some() {
            return Err(CoreError::ConfigInvalid(format!(
                "duplicate score {} -> {}",
                s.source, s.target
            )));
        }
    }
    Ok(m)
}

/// Per-source Spearman agreement between two score sets over matched
/// (source, target) pairs, with BH-FDR flags at level `q`.
pub fn consistency_report(
    plain: &[DivergenceScore],
    secure: &[DivergenceScore],
    q: f64,
) -> Result<ConsistencyReport> {
    let a = index(plain)?;
    let b = index(secure)?;
    for (key, s) in &b {
        match a.get(key) {
            None => return Err(CoreError::MissingPairs(format!("{} -> {} in the first set", key.0, key.1))),
            Some(p) if p.method != s.method.plaintext() && p.method != s.method => {
                return Err(CoreError::MissingPairs(format!(
                    "{} -> {}: {} has no {} counterpart",
                    key.0, key.1, s.method, p.method
                )))
            }
            _ => {}
        }
    }
    if let Some(key) = a.keys().find(|k| !b.contains_key(*k)) {
        return Err(CoreError::MissingPairs(format!("{} -> {} in the second set", key.0, key.1)));
    }
    let mut grouped: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, p) in &a {
        let e = grouped.entry(key.0.as_str()).or_default();
        e.0.push(p.value);
        e.1.push(b[key].value);
    }
    let mut sources = Vec::with_capacity(grouped.len());
    for (src, (xs, ys)) in grouped {
        let (rho, p_value) = spearman(&xs, &ys)?;
        sources.push(SourceConsistency {
            source: src.to_string(),
            pairs: xs.len(),
            rho,
            p_value,
            significant: false,
        });
    }
    if sources.is_empty() {
        return Err(CoreError::MissingPairs("no score pairs".into()));
    }
    let flags = bh_fdr(&sources.iter().map(|s| s.p_value).collect::<Vec<_>>(), q);
    for (s, f) in sources.iter_mut().zip(flags) {
        s.significant = f;
    }
    let rhos: Vec<f64> = sources.iter().map(|s| s.rho).collect();
    Ok(ConsistencyReport {
        q,
        mean_rho: rhos.iter().sum::<f64>() / rhos.len() as f64,
        min_rho: rhos.iter().cloned().fold(f64::INFINITY, f64::min),
        max_rho: rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        significant: sources.iter().filter(|s| s.significant).count(),
        sources,
    })
}

/// Downstream result of one selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub source: String,
    pub strategy: StrategySpec,
    pub selected: Vec<String>,
    pub auc_baseline: f64,
    pub auc_combined: f64,
    pub delta: f64,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

pub const OUTCOME_COLUMNS: [&str; 10] = [
    "source",
    "strategy",
    "n",
    "seed",
    "selected",
    "auc_baseline",
    "auc_combined",
    "delta",
    "folds",
    "repeats",
];

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "strategy",
    "n",
    "cells",
    "mean_delta",
    "std_delta",
    "improved",
    "leakage",
];

pub fn write_outcomes_csv<W: Write>(w: W, rows: &[StrategyOutcome]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(OUTCOME_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.source.clone(),
            r.strategy.kind.label(),
            r.strategy.n.to_string(),
            r.seed.to_string(),
            r.selected.join(";"),
            r.auc_baseline.to_string(),
            r.auc_combined.to_string(),
            r.delta.to_string(),
            r.folds.to_string(),
            r.repeats.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row of the strategy x n table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub strategy: String,
    pub n: usize,
    pub cells: usize,
    pub mean_delta: f64,
    /// Sample standard deviation; zero for a single cell.
    pub std_delta: f64,
    /// Fraction of cells with a positive delta.
    pub improved: f64,
    pub leakage: crate::strategy::LeakageTag,
}

/// Aggregates outcomes by (strategy, n), sorted by strategy label then n.
pub fn summarize(rows: &[StrategyOutcome]) -> Vec<OutcomeSummary> {
    let mut groups: BTreeMap<(String, usize), Vec<&StrategyOutcome>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.strategy.kind.label(), r.strategy.n)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, n), g)| {
            let m = g.len() as f64;
            let mean = g.iter().map(|r| r.delta).sum::<f64>() / m;
            let var = if g.len() > 1 {
                g.iter().map(|r| (r.delta - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            OutcomeSummary {
                leakage: g[0].strategy.kind.leakage(),
                strategy,
                n,
                cells: g.len(),
                mean_delta: mean,
                std_delta: var.sqrt(),
                improved: g.iter().filter(|r| r.delta > 0.0).count() as f64 / m,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[OutcomeSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let leakage = serde_json::to_value(r.leakage)?;
        out.write_record([
            r.strategy.clone(),
            r.n.to_string(),
            r.cells.to_string(),
            r.mean_delta.to_string(),
            r.std_delta.to_string(),
            r.improved.to_string(),
            leakage.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
