//! Logistic regression on secret-shared data.
//!
//! Everything here runs inside one party's [`Session`]; both parties call the
//! same functions in the same order.

use privdiv_mpc::{encode, MulOp, RingTensor, Session, SharedTensor, Tag};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plain_ml::{epoch_order, EarlyStopping, SgdHyperparams};

/// Squarings in the exp limit approximation `(1 + x/2^m)^(2^m)`.
pub const EXP_ITERATIONS: u32 = 8;
pub const NEWTON_ITERATIONS: usize = 10;
/// The sigmoid is evaluated on `z` clamped to `[-SIGMOID_CLAMP, SIGMOID_CLAMP]`.
pub const SIGMOID_CLAMP: f64 = 16.0;
/// Slack around `[0, 1]` tolerated on opened losses and scores.
pub const RANGE_SLACK: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecureModel {
    /// `[(d+1) x 1]` share, bias last.
    pub weights: SharedTensor,
    pub epochs: usize,
    /// Opened per-epoch losses; empty in strict mode.
    pub training_log: Vec<f64>,
}

impl SecureModel {
    /// Opens the weights. Only for diagnostics: this reveals the model.
    pub fn reveal(&self, s: &mut Session) -> Result<Vec<f64>> {
        Ok(s.open(&self.weights, Tag::Data)?.to_f64())
    }
}

/// `exp(x)` for shared `x <= 0` via `(1 + x/256)^256`.
pub fn secure_exp(s: &mut Session, x: &SharedTensor) -> Result<SharedTensor> {
    let mut t = x.truncate(EXP_ITERATIONS).add_scalar(1.0)?;
    for _ in 0..EXP_ITERATIONS {
        t = s.mul(&t, &t)?;
    }
    Ok(t)
}

/// `1/v` for shared `v` in `[1, 2]` by Newton iteration.
pub fn secure_reciprocal(s: &mut Session, v: &SharedTensor) -> Result<SharedTensor> {
    let init = secure_exp(s, &v.neg().add_scalar(0.5)?)?;
    let mut y = init.mul_int(3).add_scalar(0.003)?;
    for _ in 0..NEWTON_ITERATIONS {
        let vy = s.mul(v, &y)?;
        y = s.mul(&y, &vy.neg().add_scalar(2.0)?)?;
    }
    Ok(y)
}

/// Elementwise logistic function.
///
/// Computes `r = 1/(1 + exp(-|z|))` on `|z|` clamped to 16, then reflects:
/// `sigma(z) = r` for `z >= 0` and `1 - r` otherwise. The clamp keeps the exp
/// input in `[-16, 0]` and the reciprocal input in `[1, 2]`, where both
/// approximations converge.
pub fn secure_sigmoid(s: &mut Session, z: &SharedTensor) -> Result<SharedTensor> {
    let n = z.len();
    let cfg = s.cfg();
    let shape = z.shape().to_vec();
    let zf = z.reshape(vec![n])?;
    let above = zf.add_scalar(-SIGMOID_CLAMP)?;
    let below = zf.add_scalar(SIGMOID_CLAMP)?;
    let bits = s.ltz(&SharedTensor::concat(&[&zf, &above, &below])?)?;
    let mut parts = bits.split(&[vec![n], vec![n], vec![n]])?.into_iter();
    let (neg, under_hi, under_lo) = (
        parts.next().unwrap(),
        parts.next().unwrap(),
        parts.next().unwrap(),
    );
    // With hi = [z >= 16] = 1 - under_hi and lo = [z < -16]:
    // |clamp(z)| = z * (1 - hi + lo - 2 neg) + 16 (hi + lo).
    let coef = under_hi.add(&under_lo)?.sub(&neg.mul_int(2))?;
    let ones = RingTensor::new(vec![n], vec![1; n], cfg)?;
    let saturated = under_lo.sub(&under_hi)?.add_public(&ones)?;
    let clamp = encode(SIGMOID_CLAMP, cfg)? as i64;
    let pos = s.mul_raw(&zf, &coef)?.add(&saturated.mul_int(clamp))?;

    let e = secure_exp(s, &pos.neg())?;
    let r = secure_reciprocal(s, &e.add_scalar(1.0)?)?;
    let flip = s.mul_raw(&neg, &r.mul_int(-2).add_scalar(1.0)?)?;
    Ok(r.add(&flip)?.reshape(shape)?)
}

fn check_range(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() && (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
        Ok(v)
    } else {
        Err(CoreError::NonFinite(format!("{what} opened as {v}")))
    }
}

/// Mini-batch SGD on shared rows `x` (bias column included) with public 0/1
/// `labels`. In strict mode no loss is opened and exactly `max_epochs` run.
pub fn secure_logreg_train(
    s: &mut Session,
    x: &SharedTensor,
    labels: &[f64],
    hp: &SgdHyperparams,
    seed: u64,
    strict: bool,
) -> Result<SecureModel> {
    hp.validate()?;
    let (n, d) = x.dims2()?;
    if labels.len() != n {
        return Err(CoreError::LengthMismatch(n, labels.len()));
    }
    let positives = labels.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == n {
        return Err(CoreError::DegenerateLabels);
    }
    let cfg = s.cfg();
    let mut w = s.public(&RingTensor::zeros(vec![d, 1], cfg));
    let mut buf: Option<SharedTensor> = None;
    let mut stop = EarlyStopping::new(hp);
    let mut log = Vec::new();
    let mut epochs = 0;
    for epoch in 0..hp.max_epochs {
        let order = epoch_order(labels, seed, epoch);
        let mut sq: Option<SharedTensor> = None;
        for batch in order.chunks(hp.batch_size) {
            let b = batch.len();
            let xb = x.gather_rows(batch)?;
            let z = s.matmul(&xb, &w)?;
            let p = secure_sigmoid(s, &z)?;
            let yb: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let err = p.sub(&s.public_f64(vec![b, 1], &yb)?)?;
            let xt = xb.transpose()?;
            let mut ops = vec![MulOp::Matmul(&xt, &err)];
            if !strict {
                ops.push(MulOp::Elementwise(&err, &err));
            }
            let mut out = s.mul_many(&ops, true)?.into_iter();
            let g = out.next().unwrap().div_public(b as u64);
            if let Some(e2) = out.next() {
                let total = e2.sum();
                sq = Some(match sq {
                    None => total,
                    Some(acc) => acc.add(&total)?,
                });
            }
            let g = g.add(&w.mul_public(hp.weight_decay)?)?;
            let step = match buf.take() {
                None => g,
                Some(prev) => prev
                    .mul_public(hp.momentum)?
                    .add(&g.mul_public(1.0 - hp.dampening)?)?,
            };
            w = w.sub(&step.mul_public(hp.learning_rate)?)?;
            buf = Some(step);
        }
        epochs += 1;
        if let Some(total) = sq {
            let loss = s.open(&total, Tag::Loss)?.to_f64()[0] / n as f64;
            log.push(check_range("epoch loss", loss)?);
            if stop.update(loss) {
                break;
            }
        }
    }
    Ok(SecureModel {
        weights: w,
        epochs,
        training_log: log,
    })
}

/// Mean predicted probability over shared rows `x_src`; opens only that scalar.
pub fn secure_mean_score(s: &mut Session, model: &SecureModel, x_src: &SharedTensor) -> Result<f64> {
    let (m, _) = x_src.dims2()?;
    if m == 0 {
        return Err(CoreError::EmptySource);
    }
    let z = s.matmul(x_src, &model.weights)?;
    let p = secure_sigmoid(s, &z)?;
    let mean = p.sum().div_public(m as u64);
    check_range("score", s.open(&mean, Tag::Final)?.to_f64()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use crate::plain_ml::{sigmoid, train_sgd};
    use privdiv_mpc::{run_local, PartyId, SessionSpec};

    /// Runs `f` on both parties with `x` input by party 0; returns party 0's output.
    fn with_shared<T, F>(x: &Matrix, seed: u64, f: F) -> T
    where
        T: Send,
        F: Fn(&mut Session, &SharedTensor) -> Result<T> + Sync,
    {
        let shape = vec![x.rows(), x.cols()];
        let spec = SessionSpec::from_seed(7, seed);
        let run = run_local(
            &spec,
            |s| {
                let v = RingTensor::from_f64(shape.clone(), x.data(), s.cfg())?;
                let xs = s.input(PartyId::P0, Some(&v), shape.clone())?;
                f(s, &xs)
            },
            |s| {
                let xs = s.input(PartyId::P0, None, shape.clone())?;
                f(s, &xs)
            },
        )
        .unwrap();
        run.out0
    }

    fn column(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    fn toy() -> (Matrix, Vec<f64>) {
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
    fn sigmoid_matches_exact_on_grid() {
        let grid: Vec<f64> = (0..=40).map(|i| -10.0 + 0.5 * i as f64).collect();
        let got = with_shared(&column(&grid), 1, |s, z| {
            let p = secure_sigmoid(s, z)?;
            Ok(s.open(&p, Tag::Final)?.to_f64())
        });
        let worst = grid
            .iter()
            .zip(&got)
            .map(|(z, p)| (sigmoid(*z) - p).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.01, "max error {worst}");
    }

    #[test]
    fn sigmoid_saturates_outside_the_clamp() {
        let z = [-200.0, -40.0, -16.5, 0.0, 16.5, 40.0, 200.0];
        let got = with_shared(&column(&z), 2, |s, z| {
            let p = secure_sigmoid(s, z)?;
            Ok(s.open(&p, Tag::Final)?.to_f64())
        });
        for (zi, p) in z.iter().zip(&got) {
            assert!((sigmoid(*zi) - p).abs() <= 0.01, "sigma({zi}) = {p}");
        }
    }

    #[test]
    fn training_tracks_plaintext_sgd() {
        let (x, y) = toy();
        let hp = SgdHyperparams::encrypted();
        let plain = train_sgd(&x, &y, &hp, 11).unwrap();
        let (w, epochs) = with_shared(&x, 3, |s, xs| {
            let m = secure_logreg_train(s, xs, &y, &hp, 11, false)?;
            Ok((m.reveal(s)?, m.epochs))
        });
        assert_eq!(epochs, plain.epochs);
        let diff = w
            .iter()
            .zip(&plain.model.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 0.05, "L-inf weight gap {diff}: {w:?} vs {:?}", plain.model.weights);
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = toy();
        let mut hp = SgdHyperparams::encrypted();
        hp.max_epochs = 60;
        hp.patience = 60;
        let w = with_shared(&x, 4, |s, xs| secure_logreg_train(s, xs, &y, &hp, 5, true)?.reveal(s));
        let acc = (0..x.rows())
            .filter(|&i| {
                let z: f64 = x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                (z > 0.0) == (y[i] > 0.5)
            })
            .count() as f64
            / x.rows() as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn flipped_labels_negate_the_model() {
        let (x, y) = toy();
        let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let hp = SgdHyperparams::encrypted();
        let a = with_shared(&x, 5, |s, xs| secure_logreg_train(s, xs, &y, &hp, 9, true)?.reveal(s));
        let b = with_shared(&x, 5, |s, xs| {
            secure_logreg_train(s, xs, &flipped, &hp, 9, true)?.reveal(s)
        });
        let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
        let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
        let cos = dot / (norm(&a) * norm(&b));
        assert!(cos <= -0.9, "cosine {cos}");
    }

    #[test]
    fn zero_epochs_keeps_zero_weights() {
        let (x, y) = toy();
        let mut hp = SgdHyperparams::encrypted();
        hp.max_epochs = 0;
        let (w, log) = with_shared(&x, 6, |s, xs| {
            let m = secure_logreg_train(s, xs, &y, &hp, 1, false)?;
            Ok((m.reveal(s)?, m.training_log))
        });
        assert_eq!(w, vec![0.0; 3]);
        assert!(log.is_empty());
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = toy();
        let shape = vec![x.rows(), x.cols()];
        let ones = vec![1.0; x.rows()];
        let hp = SgdHyperparams::encrypted();
        let spec = SessionSpec::from_seed(1, 1);
        let r = run_local(
            &spec,
            |s| {
                let v = RingTensor::from_f64(shape.clone(), x.data(), s.cfg())?;
                let xs = s.input(PartyId::P0, Some(&v), shape.clone())?;
                secure_logreg_train(s, &xs, &ones, &hp, 1, true).map(|_| ())
            },
            |s| {
                let xs = s.input(PartyId::P0, None, shape.clone())?;
                secure_logreg_train(s, &xs, &ones, &hp, 1, true).map(|_| ())
            },
        );
        assert!(matches!(r, Err(CoreError::DegenerateLabels)));
    }

    #[test]
    fn loss_settles_after_warmup() {
        let (x, y) = toy();
        let mut hp = SgdHyperparams::encrypted();
        hp.patience = 100;
        hp.max_epochs = 12;
        let log = with_shared(&x, 8, |s, xs| {
            Ok(secure_logreg_train(s, xs, &y, &hp, 2, false)?.training_log)
        });
        assert_eq!(log.len(), 12);
        for w in log[3..].windows(2) {
            assert!(w[1] <= w[0] + hp.tolerance, "loss rose: {log:?}");
        }
    }

    #[test]
    fn zero_model_scores_one_half() {
        let (x, _) = toy();
        let v = with_shared(&x, 9, |s, xs| {
            let model = SecureModel {
                weights: s.public(&RingTensor::zeros(vec![3, 1], s.cfg())),
                epochs: 0,
                training_log: vec![],
            };
            secure_mean_score(s, &model, xs)
        });
        assert!((v - 0.5).abs() <= 0.01, "{v}");
    }

    #[test]
    fn mean_score_matches_plaintext() {
        let rows: Vec<Vec<f64>> = (0..37)
            .map(|i| {
                let t = i as f64 / 37.0;
                vec![t, (t * 7.0).sin().abs(), 1.0]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let w = [2.5, -3.0, 0.4];
        let want = x.matvec(&w).into_iter().map(sigmoid).sum::<f64>() / 37.0;
        let got = with_shared(&x, 10, |s, xs| {
            let model = SecureModel {
                weights: s.public_f64(vec![3, 1], &w)?,
                epochs: 0,
                training_log: vec![],
            };
            secure_mean_score(s, &model, xs)
        });
        assert!((got - want).abs() <= 0.02, "{got} vs {want}");
        let one = with_shared(&x.select_rows(&[4]), 11, |s, xs| {
            let model = SecureModel {
                weights: s.public_f64(vec![3, 1], &w)?,
                epochs: 0,
                training_log: vec![],
            };
            secure_mean_score(s, &model, xs)
        });
        assert!((one - sigmoid(x.matvec(&w)[4])).abs() <= 0.01);
    }

    #[test]
    fn strict_mode_opens_only_the_final_scalar() {
        let (x, y) = toy();
        let shape = vec![x.rows(), x.cols()];
        let mut hp = SgdHyperparams::encrypted();
        hp.max_epochs = 3;
        let spec = SessionSpec::from_seed(2, 2);
        let body = |s: &mut Session, xs: SharedTensor| -> Result<f64> {
            let m = secure_logreg_train(s, &xs, &y, &hp, 3, true)?;
            secure_mean_score(s, &m, &xs)
        };
        let run = run_local(
            &spec,
            |s| {
                let v = RingTensor::from_f64(shape.clone(), x.data(), s.cfg())?;
                let xs = s.input(PartyId::P0, Some(&v), shape.clone())?;
                body(s, xs)
            },
            |s| {
                let xs = s.input(PartyId::P0, None, shape.clone())?;
                body(s, xs)
            },
        )
        .unwrap();
        assert_eq!(run.out0, run.out1);
        for r in [&run.report0, &run.report1] {
            let audit = r.trace.audit();
            audit.check(true).unwrap();
            assert_eq!(audit.loss_opens, 0);
        }
    }
}
