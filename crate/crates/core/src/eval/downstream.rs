//! Ground-truth utility of a data combination: the change in held-out AUC on
//! the source task when selected target rows join the training set.

use serde::{Deserialize, Serialize};

use super::stats::auc;
use crate::data::{Matrix, SiteDataset};
use crate::error::{CoreError, Result};
use crate::par::Execution;
use crate::plain_ml::{train_sgd, LogisticModel, SgdHyperparams};
use privdiv_mpc::share::derive_id;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaConfig {
    pub folds: usize,
    pub repeats: usize,
    /// Source rows drawn per repeat, split into folds.
    pub source_rows: usize,
    /// Rows drawn from each selected target per repeat.
    pub target_rows: usize,
    pub hp: SgdHyperparams,
    pub execution: Execution,
}

impl Default for DeltaConfig {
    fn default() -> DeltaConfig {
        DeltaConfig {
            folds: 5,
            repeats: 5,
            source_rows: 1900,
            target_rows: 1500,
            hp: SgdHyperparams::plaintext(),
            execution: Execution::default(),
        }
    }
}

/// Logistic regression on features z-scored with training statistics. The
/// weights are the SGD iterates averaged after a one-epoch burn-in, which
/// removes most of the jitter a fixed learning rate leaves in the final
/// iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamModel {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub model: LogisticModel,
}

impl DownstreamModel {
    fn design(&self, x: &Matrix) -> Result<Matrix> {
        let d = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.sd[i % d])
            .collect();
        Matrix::new(x.rows(), d, data)?.with_columns(&[&vec![1.0; x.rows()]])
    }

    pub fn predict(&self, site: &SiteDataset) -> Result<Vec<f64>> {
        Ok(self.model.predict(&self.design(&site.x)?))
    }
}

pub fn train_downstream(train: &SiteDataset, hp: &SgdHyperparams, seed: u64) -> Result<DownstreamModel> {
    let (n, d) = (train.n(), train.d());
    if n == 0 {
        return Err(CoreError::EmptySource);
    }
    let mut mean = vec![0.0; d];
    let mut sd = vec![1.0; d];
    for j in 0..d {
        let col = train.x.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        if v > 0.0 {
            sd[j] = v.sqrt();
        }
    }
    let mut out = DownstreamModel {
        mean,
        sd,
        model: LogisticModel { weights: vec![] },
    };
    let x = out.design(&train.x)?;
    out.model = LogisticModel {
        weights: train_sgd(&x, &train.labels_f64(), hp, seed)?.averaged,
    };
    Ok(out)
}

/// Cross-validated AUCs with and without the selected targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub auc_baseline: f64,
    pub auc_combined: f64,
    pub delta: f64,
}

/// Repeated k-fold evaluation on the source; AUCs are averaged over folds
/// first, then over repeats.
pub fn delta_eval(
    source: &SiteDataset,
    selected: &[&SiteDataset],
    cfg: &DeltaConfig,
    seed: u64,
) -> Result<DeltaResult> {
    if cfg.folds < 2 || cfg.repeats == 0 {
        return Err(CoreError::ConfigInvalid("need folds >= 2 and repeats >= 1".into()));
    }
    let cells: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let results = cfg.execution.try_map(&cells, |&(r, f)| -> Result<(f64, f64)> {
        let rs = derive_id(0xDE17A, &[seed, r as u64]);
        let pool = source.subsample(cfg.source_rows.min(source.n()), rs)?;
        let order = crate::plain_ml::epoch_order(&pool.labels_f64(), rs, 0);
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..pool.n()).partition(|&i| i % cfg.folds == f);
        let test = pool.select_rows(&test_idx.iter().map(|&i| order[i]).collect::<Vec<_>>());
        let train = pool.select_rows(&train_idx.iter().map(|&i| order[i]).collect::<Vec<_>>());
        let train_seed = derive_id(0x7EA1, &[seed, r as u64, f as u64]);
        let base = train_downstream(&train, &cfg.hp, train_seed)?;
        let auc_base = auc(&base.predict(&test)?, &test.y)?;
        if selected.is_empty() {
            return Ok((auc_base, auc_base));
        }
        let mut extra = Vec::with_capacity(selected.len());
        for (t, site) in selected.iter().enumerate() {
            let ts = derive_id(0x7A6E7, &[seed, r as u64, t as u64]);
            extra.push(site.subsample(cfg.target_rows.min(site.n()), ts)?);
        }
        let mut parts = vec![&train];
        parts.extend(extra.iter());
        let combined = train_downstream(&SiteDataset::concat(&parts)?, &cfg.hp, train_seed)?;
        Ok((auc_base, auc(&combined.predict(&test)?, &test.y)?))
    })?;
    let mut base = 0.0;
    let mut comb = 0.0;
    for chunk in results.chunks(cfg.folds) {
        base += chunk.iter().map(|c| c.0).sum::<f64>() / cfg.folds as f64;
        comb += chunk.iter().map(|c| c.1).sum::<f64>() / cfg.folds as f64;
    }
    let auc_baseline = base / cfg.repeats as f64;
    let auc_combined = comb / cfg.repeats as f64;
    Ok(DeltaResult {
        auc_baseline,
        auc_combined,
        delta: auc_combined - auc_baseline,
    })
}
