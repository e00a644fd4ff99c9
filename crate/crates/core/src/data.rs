//! Tabular site data and the small dense-matrix type the scorers work on.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Demographic attributes and their number of categories.
pub const DEMOGRAPHICS: [(&str, usize); 3] = [("gender", 2), ("age", 4), ("race", 4)];

pub fn demographic_levels(attribute: &str) -> Option<usize> {
    DEMOGRAPHICS
        .iter()
        .find(|(name, _)| *name == attribute)
        .map(|(_, k)| *k)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(CoreError::LengthMismatch(rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(CoreError::DimensionMismatch(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(CoreError::DimensionMismatch(cols, m.cols));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Appends columns given as one value per row each.
    pub fn with_columns(&self, extra: &[&[f64]]) -> Result<Matrix> {
        for c in extra {
            if c.len() != self.rows {
                return Err(CoreError::LengthMismatch(self.rows, c.len()));
            }
        }
        let cols = self.cols + extra.len();
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend(extra.iter().map(|c| c[i]));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// `self . w` for a column vector `w`.
    pub fn matvec(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// One entity's labeled tabular data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDataset {
    pub site_id: String,
    pub x: Matrix,
    pub y: Vec<u8>,
    /// Per-row category codes for each demographic attribute.
    pub demographics: BTreeMap<String, Vec<u32>>,
}

impl SiteDataset {
    pub fn new(
        site_id: impl Into<String>,
        x: Matrix,
        y: Vec<u8>,
        demographics: BTreeMap<String, Vec<u32>>,
    ) -> Result<SiteDataset> {
        if y.len() != x.rows() {
            return Err(CoreError::LengthMismatch(x.rows(), y.len()));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(CoreError::ConfigInvalid(format!("label {bad} is not 0 or 1")));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("feature value".into()));
        }
        for (attr, codes) in &demographics {
            if codes.len() != y.len() {
                return Err(CoreError::LengthMismatch(y.len(), codes.len()));
            }
            if let Some(k) = demographic_levels(attr) {
                if codes.iter().any(|&c| c as usize >= k) {
                    return Err(CoreError::CategoryMismatch(attr.clone()));
                }
            }
        }
        Ok(SiteDataset {
            site_id: site_id.into(),
            x,
            y,
            demographics,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| v as f64).collect()
    }

    /// Category frequencies of a demographic attribute; sums to one.
    pub fn histogram(&self, attribute: &str) -> Result<Vec<f64>> {
        let missing = || CoreError::MissingAttribute {
            site: self.site_id.clone(),
            attribute: attribute.to_string(),
        };
        let codes = self.demographics.get(attribute).ok_or_else(missing)?;
        let k = demographic_levels(attribute).ok_or_else(missing)?;
        let mut h = vec![0.0; k];
        for &c in codes {
            h[c as usize] += 1.0;
        }
        let n = codes.len().max(1) as f64;
        Ok(h.into_iter().map(|c| c / n).collect())
    }

    pub fn select_rows(&self, idx: &[usize]) -> SiteDataset {
        SiteDataset {
            site_id: self.site_id.clone(),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            demographics: self
                .demographics
                .iter()
                .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// `k` rows drawn uniformly without replacement, in ascending row order.
    pub fn subsample(&self, k: usize, seed: u64) -> Result<SiteDataset> {
        if k > self.n() {
            return Err(CoreError::TooFewSamples {
                got: self.n(),
                need: k,
            });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.n(), k).into_vec();
        idx.sort_unstable();
        Ok(self.select_rows(&idx))
    }

    /// Rows of several sites stacked; the result keeps the first site's id.
    pub fn concat(parts: &[&SiteDataset]) -> Result<SiteDataset> {
        let first = parts.first().ok_or(CoreError::EmptySource)?;
        let x = Matrix::vstack(&parts.iter().map(|p| &p.x).collect::<Vec<_>>())?;
        let y = parts.iter().flat_map(|p| p.y.iter().copied()).collect();
        let mut demographics = BTreeMap::new();
        for attr in first.demographics.keys() {
            let mut all = Vec::new();
            for p in parts {
                match p.demographics.get(attr) {
                    Some(v) => all.extend_from_slice(v),
                    None => all.clear(),
                }
            }
            if all.len() == x.rows() {
                demographics.insert(attr.clone(), all);
            }
        }
        Ok(SiteDataset {
            site_id: first.site_id.clone(),
            x,
            y,
            demographics,
        })
    }
}

/// Publicly agreed per-feature clipping range. Features map linearly onto
/// `[0, 1]`; values outside the range are clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FeatureBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<FeatureBounds> {
        if lo.len() != hi.len() {
            return Err(CoreError::DimensionMismatch(lo.len(), hi.len()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(CoreError::ConfigInvalid("feature bounds need lo < hi".into()));
        }
        Ok(FeatureBounds { lo, hi })
    }

    pub fn symmetric(d: usize, half_width: f64) -> FeatureBounds {
        FeatureBounds {
            lo: vec![-half_width; d],
            hi: vec![half_width; d],
        }
    }

    /// Observed min/max over all given sites, widened slightly.
    pub fn from_sites(sites: &[&SiteDataset]) -> Result<FeatureBounds> {
        let d = sites.first().ok_or(CoreError::EmptySource)?.d();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for s in sites {
            if s.d() != d {
                return Err(CoreError::DimensionMismatch(d, s.d()));
            }
            for i in 0..s.n() {
                for (j, v) in s.x.row(i).iter().enumerate() {
                    lo[j] = lo[j].min(*v);
                    hi[j] = hi[j].max(*v);
                }
            }
        }
        for j in 0..d {
            if !(hi[j] > lo[j]) {
                hi[j] = lo[j] + 1.0;
            }
        }
        FeatureBounds::new(lo, hi)
    }

    pub fn d(&self) -> usize {
        self.lo.len()
    }

    pub fn scale(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d() {
            return Err(CoreError::DimensionMismatch(self.d(), x.cols()));
        }
        let d = self.d();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % d;
                ((v - self.lo[j]) / (self.hi[j] - self.lo[j])).clamp(0.0, 1.0)
            })
            .collect();
        Matrix::new(x.rows(), d, data)
    }
}

/// Classifier inputs for one side of a membership problem: scaled features,
/// optionally the task label, and a constant bias column last.
pub fn membership_features(
    site: &SiteDataset,
    bounds: &FeatureBounds,
    use_labels: bool,
) -> Result<Matrix> {
    let scaled = bounds.scale(&site.x)?;
    let ones = vec![1.0; site.n()];
    let labels = site.labels_f64();
    if use_labels {
        scaled.with_columns(&[&labels, &ones])
    } else {
        scaled.with_columns(&[&ones])
    }
}
