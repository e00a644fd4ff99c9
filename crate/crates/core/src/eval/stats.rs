//! Rank statistics, correlation tests and multiple-testing control.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};

/// Largest length for which Spearman p-values are exact permutation values.
pub const EXACT_PERMUTATION_MAX: usize = 8;

/// 1-based ranks with ties given their mean rank.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(CoreError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(CoreError::TooShort { got: xs.len(), need: 3 });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("correlation input".into()));
    }
    Ok(())
}

fn product_moment(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a correlation `r` over `n` pairs via Student's t with
/// `n - 2` degrees of freedom.
pub fn t_test_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Product-moment correlation and its t-test p-value.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    check_pair(xs, ys)?;
    let r = product_moment(xs, ys)?;
    Ok((r, t_test_p(r, xs.len())))
}

/// Visits every permutation of `v` (Heap's algorithm).
fn for_each_permutation(v: &mut [f64], f: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    f(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            f(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Rank correlation and its p-value: exact permutation for at most
/// [`EXACT_PERMUTATION_MAX`] pairs, t-approximation above.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    check_pair(xs, ys)?;
    let rx = midranks(xs);
    let ry = midranks(ys);
    let rho = product_moment(&rx, &ry)?;
    let n = xs.len();
    if n > EXACT_PERMUTATION_MAX {
        return Ok((rho, t_test_p(rho, n)));
    }
    let mut perm = ry.clone();
    let (mut extreme, mut total) = (0u64, 0u64);
    let cutoff = rho.abs() - 1e-12;
    for_each_permutation(&mut perm, &mut |p| {
        total += 1;
        if product_moment(&rx, p).is_ok_and(|r| r.abs() >= cutoff) {
            extreme += 1;
        }
    });
    Ok((rho, extreme as f64 / total as f64))
}

/// Benjamini-Hochberg step-up rejections at false discovery rate `q`.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cut = (0..m)
        .rev()
        .find(|&i| p_values[order[i]] <= (i + 1) as f64 * q / m as f64);
    let mut reject = vec![false; m];
    if let Some(last) = cut {
        for &k in &order[..=last] {
            reject[k] = true;
        }
    }
    reject
}

/// Area under the ROC curve in the Mann-Whitney form with midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CoreError::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}
