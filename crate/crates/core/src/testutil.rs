//! Test-only helpers: random models and a dense joint-Gaussian oracle.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::plda::PldaModel;

pub fn gaussian_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn random_model(rng: &mut impl Rng, d: usize, q: usize) -> PldaModel {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let v = gaussian_matrix(rng, d, q);
    let a = gaussian_matrix(rng, d, d);
    let sigma = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
    PldaModel::new(mean, v, (&sigma + sigma.transpose()) * 0.5).unwrap()
}

pub fn random_orthogonal(rng: &mut impl Rng, q: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, q, q).qr().q()
}

pub fn sample_classes(rng: &mut impl Rng, m: &PldaModel, n_classes: usize, per_class: usize) -> Vec<Vec<DVector<f64>>> {
    let d = m.dim();
    let lz = Cholesky::new(m.sigma().clone()).unwrap().unpack();
    (0..n_classes)
        .map(|_| {
            let y = DVector::from_fn(m.latent_dim(), |_, _| StandardNormal.sample(rng));
            let center = m.mean() + m.v() * y;
            (0..per_class)
                .map(|_| &center + &lz * DVector::from_fn(d, |_, _| StandardNormal.sample(rng)))
                .collect()
        })
        .collect()
}

/// Log density of a class evaluated on the explicit (n d) x (n d) covariance.
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
    let x = DVector::from_iterator(
        n * d,
        class
            .iter()
            .flat_map(|w| (w - m.mean()).iter().cloned().collect::<Vec<_>>()),
    );
    let ch = Cholesky::new(cov).unwrap();
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * ((n * d) as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&ch.solve(&x)))
}
