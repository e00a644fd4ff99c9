#![allow(dead_code)]

use std::collections::BTreeMap;

use privdiv_core::data::{Matrix, SiteDataset};
use privdiv_core::plain_ml::sigmoid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Rows `x ~ N(mean, sd^2 I)` labeled by a noisy logistic teacher.
pub struct Gaussian<'a> {
    pub mean: &'a [f64],
    pub sd: f64,
    pub teacher: &'a [f64],
}

impl Gaussian<'_> {
    pub fn sample(&self, id: &str, n: usize, seed: u64) -> SiteDataset {
        let d = self.mean.len();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = self
                .mean
                .iter()
                .map(|m| m + self.sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let z: f64 = row.iter().zip(self.teacher).map(|(a, b)| a * b).sum();
            y.push(u8::from(rng.random::<f64>() < sigmoid(z)));
            x.extend(row);
        }
        SiteDataset::new(id, Matrix::new(n, d, x).unwrap(), y, BTreeMap::new()).unwrap()
    }
}

/// A site with given rows and labels and no demographics.
pub fn site(id: &str, rows: &[Vec<f64>], y: Vec<u8>) -> SiteDataset {
    SiteDataset::new(id, Matrix::from_rows(rows).unwrap(), y, BTreeMap::new()).unwrap()
}

pub fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}
