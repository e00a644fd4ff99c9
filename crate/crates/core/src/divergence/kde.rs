//! Direct KL estimate from Gaussian kernel density estimates, for
//! low-dimensional data.
//!
//! Pooled rows are z-normalized and projected onto their top principal
//! components; each side gets its own KDE with a bandwidth picked by
//! cross-validated log-likelihood, and the score is the source-averaged log
//! density ratio.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{DivergenceScore, Method};
use crate::data::{Matrix, SiteDataset};
use crate::error::{CoreError, Result};
use crate::par::Execution;

/// Smallest side accepted.
pub const MIN_SAMPLES: usize = 50;
const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub n_components: usize,
    pub bandwidths: Vec<f64>,
    pub cv_folds: usize,
    /// Estimates below `-slack` are raised to `-slack`.
    pub slack: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for KdeConfig {
    fn default() -> KdeConfig {
        KdeConfig {
            n_components: 3,
            bandwidths: log_grid(0.05, 1.0, 10),
            cv_folds: 5,
            slack: 0.05,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Row-major points in `q` dimensions.
#[derive(Debug, Clone)]
struct Points {
    q: usize,
    data: Vec<f64>,
}

impl Points {
    fn len(&self) -> usize {
        self.data.len() / self.q
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    fn subset(&self, idx: &[usize]) -> Points {
        Points {
            q: self.q,
            data: idx.iter().flat_map(|&i| self.point(i).iter().copied()).collect(),
        }
    }
}

/// Log density of a Gaussian KDE with bandwidth `h` at `x`, leaving out
/// point `skip` when given.
fn log_density(pts: &Points, h: f64, x: &[f64], skip: Option<usize>) -> f64 {
    let inv = 0.5 / (h * h);
    let mut exps: Vec<f64> = Vec::with_capacity(pts.len());
    let mut max = f64::NEG_INFINITY;
    for i in (0..pts.len()).filter(|&i| Some(i) != skip) {
        let d2: f64 = pts.point(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let e = -d2 * inv;
        max = max.max(e);
        exps.push(e);
    }
    let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
    let q = pts.q as f64;
    max + sum.ln() - (exps.len() as f64).ln() - 0.5 * q * (2.0 * std::f64::consts::PI).ln() - q * h.ln()
}

fn mean_log_density(fit: &Points, h: f64, eval: &Points) -> f64 {
    (0..eval.len()).map(|i| log_density(fit, h, eval.point(i), None)).sum::<f64>() / eval.len() as f64
}

/// Bandwidth with the best mean held-out log-likelihood over `folds` folds.
fn select_bandwidth(pts: &Points, cfg: &KdeConfig, salt: u64) -> f64 {
    let n = pts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha12Rng::seed_from_u64(cfg.seed ^ salt));
    let folds = cfg.cv_folds.clamp(2, n);
    let splits: Vec<(Points, Points)> = (0..folds)
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) =
                (0..n).map(|i| (i, order[i])).fold((vec![], vec![]), |(mut h, mut k), (i, r)| {
                    if i % folds == f {
                        h.push(r)
                    } else {
                        k.push(r)
                    }
                    (h, k)
                });
            (pts.subset(&kept), pts.subset(&held))
        })
        .collect();
    let scores = cfg.execution.map(&cfg.bandwidths, |&h| {
        splits
            .iter()
            .map(|(fit, held)| mean_log_density(fit, h, held))
            .sum::<f64>()
            / folds as f64
    });
    let mut best = (f64::NEG_INFINITY, cfg.bandwidths[0]);
    for (&h, &s) in cfg.bandwidths.iter().zip(&scores) {
        if s > best.0 {
            best = (s, h);
        }
    }
    best.1
}

/// Projects both matrices onto the top principal components of their pooled,
/// z-normalized rows.
fn pca_project(a: &Matrix, b: &Matrix, q: usize) -> Result<(Points, Points)> {
    let d = a.cols();
    let n = a.rows() + b.rows();
    let pooled = Matrix::vstack(&[a, b])?;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        let col = pooled.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        mean[j] = m;
        sd[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    let z = DMatrix::from_fn(n, d, |i, j| (pooled.get(i, j) - mean[j]) / sd[j]);
    let mut cov = z.transpose() * &z / (n - 1) as f64;
    let mut eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) || eig.eigenvalues.max() <= 0.0 {
        for i in 0..d {
            cov[(i, i)] += RIDGE;
        }
        eig = SymmetricEigen::new(cov);
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::SingularCovariance);
        }
    }
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let q = q.min(d);
    let basis = DMatrix::from_fn(d, q, |r, c| eig.eigenvectors[(r, idx[c])]);
    let proj = z * basis;
    let take = |rows: std::ops::Range<usize>| Points {
        q,
        data: rows.flat_map(|i| (0..q).map(move |c| (i, c))).map(|(i, c)| proj[(i, c)]).collect(),
    };
    Ok((take(0..a.rows()), take(a.rows()..n)))
}

/// KL(source || target) estimated from kernel density estimates.
pub fn kde_kl(src: &SiteDataset, tgt: &SiteDataset, cfg: &KdeConfig) -> Result<DivergenceScore> {
    if src.d() != tgt.d() {
        return Err(CoreError::DimensionMismatch(src.d(), tgt.d()));
    }
    let small = src.n().min(tgt.n());
    if small < MIN_SAMPLES {
        return Err(CoreError::TooFewSamples {
            got: small,
            need: MIN_SAMPLES,
        });
    }
    if cfg.bandwidths.is_empty() || cfg.bandwidths.iter().any(|h| !(*h > 0.0)) || cfg.n_components == 0 {
        return Err(CoreError::ConfigInvalid("KDE needs positive bandwidths and components".into()));
    }
    let (ps, pt) = pca_project(&src.x, &tgt.x, cfg.n_components)?;
    let hs = select_bandwidth(&ps, cfg, 0x0A);
    let ht = select_bandwidth(&pt, cfg, 0x0B);
    log::debug!("kde bandwidths: source {hs:.4}, target {ht:.4}");
    let idx: Vec<usize> = (0..ps.len()).collect();
    // Leave-one-out on the source side: a point's own kernel would otherwise
    // inflate the source density exactly where it is evaluated.
    let ratios = cfg.execution.map(&idx, |&i| {
        log_density(&ps, hs, ps.point(i), Some(i)) - log_density(&pt, ht, ps.point(i), None)
    });
    let value = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(DivergenceScore {
        source: src.site_id.clone(),
        target: tgt.site_id.clone(),
        method: Method::KdeKl,
        value: value.max(-cfg.slack),
        k: tgt.n(),
        seed: cfg.seed,
    })
}
