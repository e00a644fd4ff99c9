//! Plaintext logistic regression trained by mini-batch SGD.
//!
//! The update rule, batch order and stopping rule are the same ones the
//! secure trainer follows, so the two can be compared run for run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyperparams {
    pub learning_rate: f64,
    pub patience: usize,
    pub tolerance: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dampening: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
}

/// Epoch cap shared by both presets.
pub const DEFAULT_MAX_EPOCHS: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 64;

impl SgdHyperparams {
    /// Tuned for training on secret-shared fixed-point data.
    pub fn encrypted() -> SgdHyperparams {
        SgdHyperparams {
            learning_rate: 0.0974,
            patience: 5,
            tolerance: 0.000132,
            momentum: 0.907,
            weight_decay: 8.14e-7,
            dampening: 0.0545,
            max_epochs: DEFAULT_MAX_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    /// Tuned for plaintext training.
    pub fn plaintext() -> SgdHyperparams {
        SgdHyperparams {
            learning_rate: 0.0795,
            patience: 2,
            tolerance: 0.000117,
            momentum: 0.886,
            weight_decay: 1.81e-9,
            dampening: 0.0545,
            max_epochs: DEFAULT_MAX_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.tolerance > 0.0
            && self.batch_size >= 1
            && self.weight_decay >= 0.0
            && (0.0..=1.0).contains(&self.dampening);
        if ok {
            Ok(())
        } else {
            Err(CoreError::ConfigInvalid(format!("bad SGD hyperparameters {self:?}")))
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Public row order for one epoch, stratified by the 0/1 `labels`.
///
/// Each class is shuffled separately and the two are interleaved so every
/// prefix holds the classes in proportion. Mini-batches then carry the global
/// class ratio, which keeps the intercept gradient from drifting with batch
/// composition.
pub fn epoch_order(labels: &[f64], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(privdiv_mpc::share::derive_id(
        0xE90C,
        &[seed, epoch as u64],
    ));
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i] > 0.5);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let n = labels.len();
    let mut out = Vec::with_capacity(n);
    let (mut p, mut q) = (0, 0);
    while out.len() < n {
        // Take a positive while the positive share of the prefix lags its quota.
        let take_pos = q == neg.len() || (p < pos.len() && p * n < (out.len() + 1) * pos.len());
        if take_pos {
            out.push(pos[p]);
            p += 1;
        } else {
            out.push(neg[q]);
            q += 1;
        }
    }
    out
}

/// Early-stopping bookkeeping shared by the plaintext and secure trainers.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    tolerance: f64,
    best: f64,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(hp: &SgdHyperparams) -> EarlyStopping {
        EarlyStopping {
            patience: hp.patience,
            tolerance: hp.tolerance,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records an epoch loss; returns true when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best - self.tolerance {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weights with the bias last; inputs carry a trailing ones column.
    pub weights: Vec<f64>,
}

impl LogisticModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.matvec(&self.weights).into_iter().map(sigmoid).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: LogisticModel,
    pub epochs: usize,
    /// Mean squared error of the pre-update predictions, one per epoch.
    pub losses: Vec<f64>,
    /// Weights averaged over every step after the first epoch (over the first
    /// epoch when only one ran).
    pub averaged: Vec<f64>,
}

/// Momentum buffer with the first-step convention: the buffer starts as the
/// first gradient, later steps blend with `1 - dampening`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Momentum {
    buf: Option<Vec<f64>>,
}

impl Momentum {
    pub(crate) fn step(&mut self, g: &[f64], hp: &SgdHyperparams) -> &[f64] {
        match &mut self.buf {
            None => self.buf = Some(g.to_vec()),
            Some(b) => {
                for (bi, gi) in b.iter_mut().zip(g) {
                    *bi = hp.momentum * *bi + (1.0 - hp.dampening) * gi;
                }
            }
        }
        self.buf.as_deref().unwrap()
    }
}

/// Trains on `x` (bias column included) against 0/1 targets `y`.
pub fn train_sgd(x: &Matrix, y: &[f64], hp: &SgdHyperparams, seed: u64) -> Result<TrainOutcome> {
    hp.validate()?;
    if y.len() != x.rows() {
        return Err(CoreError::LengthMismatch(x.rows(), y.len()));
    }
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == y.len() {
        return Err(CoreError::DegenerateLabels);
    }
    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut mom = Momentum::default();
    let mut stop = EarlyStopping::new(hp);
    let mut losses = Vec::new();
    let mut epochs = 0;
    let mut sum = vec![0.0; d];
    let mut steps = 0usize;
    for epoch in 0..hp.max_epochs {
        let order = epoch_order(y, seed, epoch);
        let mut sq = 0.0;
        if epoch == 1 {
            sum.iter_mut().for_each(|a| *a = 0.0);
            steps = 0;
        }
        for batch in order.chunks(hp.batch_size) {
            let mut g = vec![0.0; d];
            for &i in batch {
                let row = x.row(i);
                let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                let err = sigmoid(z) - y[i];
                sq += err * err;
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += err * xj;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for (gj, wj) in g.iter_mut().zip(&w) {
                *gj = *gj * inv + hp.weight_decay * wj;
            }
            let step = mom.step(&g, hp);
            for (wj, s) in w.iter_mut().zip(step) {
                *wj -= hp.learning_rate * s;
            }
            for (a, wj) in sum.iter_mut().zip(&w) {
                *a += wj;
            }
            steps += 1;
        }
        epochs += 1;
        let loss = sq / x.rows() as f64;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite(format!("epoch {epoch} loss")));
        }
        losses.push(loss);
        if stop.update(loss) {
            break;
        }
    }
    Ok(TrainOutcome {
        model: LogisticModel { weights: w },
        epochs,
        losses,
        averaged: sum.iter().map(|a| a / steps.max(1) as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn separable_toy() -> (Matrix, Vec<f64>) {
        // 20 points in [0,1]^2 split by x1 + x2 = 1, bias column appended.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let a = (i % 5) as f64 / 4.0;
            let b = ((i * 3) % 7) as f64 / 6.0;
            let label = if a + b > 1.0 { 1.0 } else { 0.0 };
            let (a, b) = if label == 1.0 { (a.max(0.3), b.max(0.3)) } else { (a * 0.7, b * 0.7) };
            rows.push(vec![a, b, 1.0]);
            y.push(label);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn presets_validate() {
        SgdHyperparams::encrypted().validate().unwrap();
        SgdHyperparams::plaintext().validate().unwrap();
        let mut bad = SgdHyperparams::plaintext();
        bad.momentum = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let (x, y) = separable_toy();
        let mut hp = SgdHyperparams::plaintext();
        hp.max_epochs = 0;
        let out = train_sgd(&x, &y, &hp, 1).unwrap();
        assert_eq!(out.model.weights, vec![0.0; 3]);
        assert_eq!(out.epochs, 0);
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = separable_toy();
        let y = vec![1.0; 20];
        assert!(matches!(
            train_sgd(&x, &y, &SgdHyperparams::plaintext(), 1),
            Err(CoreError::DegenerateLabels)
        ));
    }

    #[test]
    fn early_stopping_counts_non_improving_epochs() {
        let mut hp = SgdHyperparams::plaintext();
        hp.patience = 2;
        hp.tolerance = 0.01;
        let mut s = EarlyStopping::new(&hp);
        assert!(!s.update(1.0));
        assert!(!s.update(0.995));
        assert!(s.update(0.99));
    }

    #[test]
    fn epoch_order_is_a_stratified_permutation() {
        let labels: Vec<f64> = (0..100).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let mut o = epoch_order(&labels, 3, 2);
        assert_ne!(o, (0..100).collect::<Vec<_>>());
        assert_eq!(o, epoch_order(&labels, 3, 2));
        assert_ne!(o, epoch_order(&labels, 3, 3));
        for chunk in o.chunks(20) {
            let pos = chunk.iter().filter(|&&i| labels[i] == 1.0).count();
            assert_eq!(pos, 5);
        }
        o.sort_unstable();
        assert_eq!(o, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn momentum_first_step_uses_raw_gradient() {
        let hp = SgdHyperparams::plaintext();
        let mut m = Momentum::default();
        assert_eq!(m.step(&[1.0, -2.0], &hp), &[1.0, -2.0]);
        let b = m.step(&[1.0, 0.0], &hp).to_vec();
        assert!((b[0] - (hp.momentum + 1.0 - hp.dampening)).abs() < 1e-12);
        assert!((b[1] + 2.0 * hp.momentum).abs() < 1e-12);
    }
}
