#![allow(dead_code)]

//! Independent oracles shared by the integration suites. Nothing in here
//! calls into the scoring or EER code it is used to check.

use localplda::PldaModel;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn random_vector(rng: &mut impl Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub fn random_model(rng: &mut impl Rng, d: usize, q: usize) -> PldaModel {
    let mean = random_vector(rng, d, 0.5);
    let v = gaussian_matrix(rng, d, q);
    let a = gaussian_matrix(rng, d, d);
    let sigma = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.3;
    PldaModel::new(mean, v, (&sigma + sigma.transpose()) * 0.5).unwrap()
}

pub fn random_orthogonal(rng: &mut impl Rng, q: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, q, q).qr().q()
}

/// Joint log density of one class on the explicit (n d) x (n d) covariance
/// with diagonal blocks V V^T + Sigma and off-diagonal blocks V V^T.
pub fn dense_class_loglik(m: &PldaModel, class: &[DVector<f64>]) -> f64 {
    let d = m.dim();
    let n = class.len();
    let b = m.v() * m.v().transpose();
    let mut cov = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let block = if i == j { &b + m.sigma() } else { b.clone() };
            cov.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    let mut x = DVector::zeros(n * d);
    for (i, w) in class.iter().enumerate() {
        x.rows_mut(i * d, d).copy_from(&(w - m.mean()));
    }
    let ch = Cholesky::new(cov).unwrap();
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * ((n * d) as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&ch.solve(&x)))
}

pub fn dense_llr(m: &PldaModel, enroll: &[DVector<f64>], test: &DVector<f64>) -> f64 {
    let mut joint = enroll.to_vec();
    joint.push(test.clone());
    dense_class_loglik(m, &joint) - dense_class_loglik(m, enroll) - dense_class_loglik(m, std::slice::from_ref(test))
}

/// EER by brute force: thresholds below the minimum, at every midpoint
/// between consecutive distinct scores and above the maximum; rates counted
/// directly; linear interpolation at the first non-negative miss-minus-FA gap.
pub fn eer_midpoint_oracle(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut all: Vec<f64> = targets.iter().chain(nontargets).cloned().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut thresholds = vec![all[0] - 1.0];
    for w in all.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(all[all.len() - 1] + 1.0);

    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let fa = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
            let miss = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
            (fa, miss)
        })
        .collect();
    for k in 0..rates.len() {
        let (fa, miss) = rates[k];
        let gap = miss - fa;
        if gap >= 0.0 {
            if gap == 0.0 || k == 0 {
                return fa;
            }
            let (fa0, miss0) = rates[k - 1];
            let g0 = miss0 - fa0;
            let alpha = -g0 / (gap - g0);
            return fa0 + alpha * (fa - fa0);
        }
    }
    unreachable!("miss rate reaches 1 above the maximum score")
}

/// Prints one status line per acceptance criterion.
pub fn report(id: &str, ok: bool, detail: &str) {
    println!("[{}] criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
}
