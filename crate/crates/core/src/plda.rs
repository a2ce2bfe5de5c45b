//! The PLDA generative model `w = u + V y + z`, `y ~ N(0, I)`, `z ~ N(0, Sigma)`.
//!
//! Everything that touches a whole class (marginal likelihood, EM posteriors,
//! verification scores) is evaluated through the Woodbury identity in the
//! q-dimensional latent space. The class-dependent part only needs the class
//! size `n` and the projected sum `V^T Sigma^-1 sum_j (w_j - u)`; the model
//! caches an eigendecomposition `V^T Sigma^-1 V = Q D Q^T` so that the
//! posterior precision `I + n V^T Sigma^-1 V` is diagonal in the `Q` basis.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{Dataset, LabelView};
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, floor_eigenvalues, min_eigenvalue, symmetrize};
use crate::preprocess::Preprocessor;
use crate::textio::{join_f64, parse_f64_list};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative floor applied to Sigma's eigenvalues after every M-step.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PldaModel {
    mean: DVector<f64>,
    v: DMatrix<f64>,
    sigma: DMatrix<f64>,
    between: DMatrix<f64>,
    total: DMatrix<f64>,
    sigma_chol: Cholesky<f64, Dyn>,
    sigma_logdet: f64,
    /// `Q^T V^T Sigma^-1`, q x d.
    latent_proj: DMatrix<f64>,
    /// eigenvalues of `V^T Sigma^-1 V`
    latent_eig: DVector<f64>,
}

impl PartialEq for PldaModel {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.v == other.v && self.sigma == other.sigma
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * m.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    Ok(())
}

impl PldaModel {
    /// Builds a model from `u`, `V` and `Sigma`, validating shapes, symmetry
    /// and positive definiteness, and derives the scoring caches.
    pub fn new(mean: DVector<f64>, v: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if v.nrows() != d || v.ncols() > d {
            return Err(Error::InvalidModel(format!(
                "V is {}x{}, expected {d} rows and at most {d} columns",
                v.nrows(),
                v.ncols()
            )));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::InvalidModel("Sigma shape does not match mean".into()));
        }
        if mean.iter().chain(v.iter()).chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        check_symmetric("Sigma", &sigma)?;
        let sigma = symmetrize(&sigma);
        if min_eigenvalue(&sigma) <= 0.0 {
            return Err(Error::InvalidModel("Sigma is not positive definite".into()));
        }
        let sigma_chol =
            Cholesky::new(sigma.clone()).ok_or_else(|| Error::InvalidModel("Sigma is not positive definite".into()))?;
        let sigma_logdet = chol_logdet(&sigma_chol);

        let q = v.ncols();
        let (latent_proj, latent_eig) = if q == 0 {
            (DMatrix::zeros(0, d), DVector::zeros(0))
        } else {
            let siv = sigma_chol.solve(&v);
            let lambda = symmetrize(&(v.transpose() * &siv));
            let eig = SymmetricEigen::new(lambda);
            // V^T V is PSD; tiny negative eigenvalues are round-off
            let vals = eig.eigenvalues.map(|x| x.max(0.0));
            (eig.eigenvectors.transpose() * siv.transpose(), vals)
        };

        let between = &v * v.transpose();
        let total = &between + &sigma;
        Ok(Self {
            mean,
            v,
            sigma,
            between,
            total,
            sigma_chol,
            sigma_logdet,
            latent_proj,
            latent_eig,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Across-class covariance `V V^T`.
    pub fn between(&self) -> &DMatrix<f64> {
        &self.between
    }

    /// Total covariance `V V^T + Sigma`.
    pub fn total(&self) -> &DMatrix<f64> {
        &self.total
    }

    /// Same model with `V` replaced by `V R`.
    pub fn with_rotated_subspace(&self, r: &DMatrix<f64>) -> Result<Self> {
        Self::new(self.mean.clone(), &self.v * r, self.sigma.clone())
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Score(format!(
                "vector has dimension {}, model expects {}",
                v.len(),
                self.dim()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Score("non-finite input vector".into()));
        }
        Ok(())
    }

    /// Projection of one centered vector into the diagonalized latent space.
    fn latent_stat(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.latent_proj * (w - &self.mean)
    }

    /// Class-dependent part of the log marginal:
    /// `-1/2 log|I + n D| + 1/2 sum_k c_k^2 / (1 + n D_k)`.
    fn latent_term(&self, n: usize, c: &DVector<f64>) -> f64 {
        let n = n as f64;
        self.latent_eig
            .iter()
            .zip(c.iter())
            .map(|(&dk, &ck)| {
                let p = 1.0 + n * dk;
                0.5 * (ck * ck / p - p.ln())
            })
            .sum()
    }

    /// Log marginal density of one class of vectors jointly generated by a
    /// single speaker, with `y` integrated out.
    pub fn class_loglik(&self, vectors: &[DVector<f64>]) -> Result<f64> {
        let d = self.dim() as f64;
        let n = vectors.len();
        let mut quad = 0.0;
        let mut c = DVector::zeros(self.latent_dim());
        for w in vectors {
            self.check_dim(w)?;
            let x = w - &self.mean;
            let y = self
                .sigma_chol
                .l_dirty()
                .solve_lower_triangular(&x)
                .ok_or_else(|| Error::Score("triangular solve failed".into()))?;
            quad += y.norm_squared();
            c += &self.latent_proj * x;
        }
        let nf = n as f64;
        Ok(-0.5 * nf * d * LN_2PI - 0.5 * nf * self.sigma_logdet - 0.5 * quad + self.latent_term(n, &c))
    }

    /// Sum of [`class_loglik`](Self::class_loglik) over classes.
    pub fn marginal_loglik(&self, classes: &[Vec<DVector<f64>>]) -> Result<f64> {
        classes.iter().map(|c| self.class_loglik(c)).sum()
    }

    /// Posterior of the speaker factor given the class's vectors.
    pub fn speaker_posterior(&self, vectors: &[DVector<f64>]) -> Result<SpeakerPosterior> {
        let q = self.latent_dim();
        let mut sum = DVector::zeros(self.dim());
        for w in vectors {
            self.check_dim(w)?;
            sum += w - &self.mean;
        }
        let n = vectors.len();
        let lambda = self.v.transpose() * self.sigma_chol.solve(&self.v);
        let precision = DMatrix::identity(q, q) + lambda * n as f64;
        let cov = symmetrize(
            &precision
                .try_inverse()
                .ok_or_else(|| Error::Score("singular posterior precision".into()))?,
        );
        let mean = &cov * self.v.transpose() * self.sigma_chol.solve(&sum);
        Ok(SpeakerPosterior { mean, cov, count: n })
    }

    /// Log-likelihood ratio of "test shares the enrollment speaker" against
    /// "test comes from a different speaker".
    ///
    /// This is `log p(E + t) - log p(E) - log p(t)` for single-class marginals;
    /// the Gaussian normalizers and the `Sigma^-1` quadratic forms cancel
    /// exactly, leaving only latent-space terms.
    pub fn score_llr(&self, enroll: &[DVector<f64>], test: &DVector<f64>) -> Result<f64> {
        let stats = self.enrollment_stats(enroll)?;
        self.check_dim(test)?;
        Ok(self.llr_from_stats(&stats, &self.latent_stat(test)))
    }

    /// Sufficient statistics of an enrollment set for repeated scoring.
    pub fn enrollment_stats(&self, enroll: &[DVector<f64>]) -> Result<EnrollStats> {
        if enroll.is_empty() {
            return Err(Error::Score("empty enrollment set".into()));
        }
        let mut c = DVector::zeros(self.latent_dim());
        for w in enroll {
            self.check_dim(w)?;
            c += self.latent_stat(w);
        }
        let n = enroll.len();
        let base = self.latent_term(n, &c);
        Ok(EnrollStats { n, c, base })
    }

    fn llr_from_stats(&self, e: &EnrollStats, t: &DVector<f64>) -> f64 {
        let joint = &e.c + t;
        self.latent_term(e.n + 1, &joint) - e.base - self.latent_term(1, t)
    }

    /// Scores every trial; output order is trial order.
    pub fn score_batch(
        &self,
        enroll_models: &BTreeMap<String, Vec<DVector<f64>>>,
        tests: &HashMap<String, DVector<f64>>,
        trials: &[(String, String)],
    ) -> Result<Vec<(String, String, f64)>> {
        let mut model_stats = HashMap::new();
        for (id, vecs) in enroll_models {
            model_stats.insert(id.as_str(), self.enrollment_stats(vecs)?);
        }
        let mut test_stats = HashMap::new();
        for (id, v) in tests {
            self.check_dim(v)?;
            test_stats.insert(id.as_str(), self.latent_stat(v));
        }
        for (m, t) in trials {
            if !model_stats.contains_key(m.as_str()) {
                return Err(Error::Score(format!("unknown enrollment model {m}")));
            }
            if !test_stats.contains_key(t.as_str()) {
                return Err(Error::Score(format!("unknown test utterance {t}")));
            }
        }
        Ok(trials
            .par_iter()
            .map(|(m, t)| {
                let s = self.llr_from_stats(&model_stats[m.as_str()], &test_stats[t.as_str()]);
                (m.clone(), t.clone(), s)
            })
            .collect())
    }

    /// Index-based batch scorer used by the evaluation harness.
    pub fn score_indexed(&self, enroll: &[EnrollStats], tests: &[DVector<f64>], trials: &[(u32, u32)]) -> Vec<f64> {
        let test_stats: Vec<DVector<f64>> = tests.iter().map(|t| self.latent_stat(t)).collect();
        trials
            .par_iter()
            .map(|&(m, t)| self.llr_from_stats(&enroll[m as usize], &test_stats[t as usize]))
            .collect()
    }
}

/// Enrollment sufficient statistics in the diagonalized latent space.
#[derive(Debug, Clone)]
pub struct EnrollStats {
    n: usize,
    c: DVector<f64>,
    base: f64,
}

#[derive(Debug, Clone)]
pub struct SpeakerPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub iterations: usize,
    pub seed: u64,
    pub min_class_size: usize,
    pub loglik_tol: f64,
}

impl TrainConfig {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            iterations: 50,
            seed: 0,
            min_class_size: 1,
            loglik_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PldaModel,
    /// Marginal log-likelihood of the training classes before each M-step.
    pub logliks: Vec<f64>,
    pub n_classes: usize,
    pub n_vectors: usize,
}

/// Per-class sufficient statistics of centered training vectors.
struct ClassStats {
    n: usize,
    sum: DVector<f64>,
}

/// Gathers the preprocessed training classes named by `view`, dropping
/// classes smaller than `min_class_size`.
pub fn collect_classes(
    data: &Dataset,
    view: &LabelView,
    pp: &Preprocessor,
    min_class_size: usize,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let index = data.index();
    let mut classes = Vec::with_capacity(view.num_classes());
    for (id, members) in view.classes() {
        if members.len() < min_class_size {
            continue;
        }
        let mut vecs = Vec::with_capacity(members.len());
        for m in members {
            let pos = index
                .get(m.as_str())
                .ok_or_else(|| Error::Train(format!("class {id} references unknown utterance {m}")))?;
            vecs.push(pp.length_normalize(&data.records()[*pos].vector)?);
        }
        classes.push(vecs);
    }
    Ok(classes)
}

/// EM training from a label view. Vectors are preprocessed with `pp` first.
pub fn train_em(data: &Dataset, view: &LabelView, pp: &Preprocessor, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let classes = collect_classes(data, view, pp, cfg.min_class_size.max(1))?;
    train_em_classes(&classes, cfg)
}

/// EM training on already preprocessed classes.
pub fn train_em_classes(classes: &[Vec<DVector<f64>>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    if classes.len() < 2 {
        return Err(Error::Train(format!(
            "need at least 2 training classes, got {}",
            classes.len()
        )));
    }
    let d = classes[0][0].len();
    let q = cfg.latent_dim;
    if q > d {
        return Err(Error::Config(format!(
            "latent dimension {q} exceeds data dimension {d}"
        )));
    }

    let n_total: usize = classes.iter().map(Vec::len).sum();
    let nf = n_total as f64;
    let mut mean = DVector::zeros(d);
    for w in classes.iter().flatten() {
        if w.len() != d {
            return Err(Error::Train("training vectors have inconsistent dimensions".into()));
        }
        mean += w;
    }
    mean /= nf;

    let mut scatter = DMatrix::zeros(d, d);
    let stats: Vec<ClassStats> = classes
        .iter()
        .map(|vecs| {
            let mut sum = DVector::zeros(d);
            for w in vecs {
                let x = w - &mean;
                scatter.ger(1.0, &x, &x, 1.0);
                sum += x;
            }
            ClassStats { n: vecs.len(), sum }
        })
        .collect();
    let scatter = symmetrize(&scatter);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("valid std");
    let mut v = DMatrix::from_fn(d, q, |_, _| init.sample(&mut rng));
    let mut sigma = floor_sigma(&(&scatter / nf));

    let mut logliks = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let step = e_step(&stats, &scatter, nf, &v, &sigma).ok_or(Error::NonFinite { iteration })?;
        if !step.loglik.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        log::debug!("em iteration {iteration}: loglik {}", step.loglik);
        let converged = logliks
            .last()
            .is_some_and(|&prev: &f64| (step.loglik - prev) / prev.abs().max(f64::MIN_POSITIVE) < cfg.loglik_tol);
        logliks.push(step.loglik);
        if converged {
            break;
        }

        // M-step: joint maximizer over (V, Sigma)
        let v_new = if q == 0 {
            DMatrix::zeros(d, 0)
        } else {
            let inv = step
                .second_moment
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .ok_or(Error::NonFinite { iteration })?;
            &step.cross * inv
        };
        let sigma_new = (&scatter - &v_new * step.cross.transpose()) / nf;
        let sigma_new = floor_sigma(&symmetrize(&sigma_new));
        if v_new.iter().chain(sigma_new.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { iteration });
        }
        v = v_new;
        sigma = sigma_new;
    }

    let model = PldaModel::new(mean, v, sigma)?;
    Ok(TrainOutcome {
        model,
        logliks,
        n_classes: classes.len(),
        n_vectors: n_total,
    })
}

fn floor_sigma(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sigma.nrows() as f64;
    let floor = SIGMA_FLOOR * sigma.trace() / d;
    floor_eigenvalues(sigma, floor)
}

struct EStep {
    loglik: f64,
    /// `sum_i s_i m_i^T`, d x q
    cross: DMatrix<f64>,
    /// `sum_i n_i (cov_i + m_i m_i^T)`, q x q
    second_moment: DMatrix<f64>,
}

/// Posterior statistics and the marginal log-likelihood at `(V, Sigma)`.
/// Returns `None` when Sigma or a posterior precision cannot be factored.
fn e_step(
    stats: &[ClassStats],
    scatter: &DMatrix<f64>,
    n_total: f64,
    v: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Option<EStep> {
    let d = v.nrows();
    let q = v.ncols();
    let chol = Cholesky::new(sigma.clone())?;
    let logdet = chol_logdet(&chol);
    let sigma_inv = chol.inverse();
    let mut loglik = -0.5 * n_total * (d as f64 * LN_2PI + logdet) - 0.5 * sigma_inv.component_mul(scatter).sum();

    let mut cross = DMatrix::zeros(d, q);
    let mut second_moment = DMatrix::zeros(q, q);
    if q == 0 {
        return Some(EStep {
            loglik,
            cross,
            second_moment,
        });
    }

    let proj = v.transpose() * &sigma_inv; // q x d
    let lambda = symmetrize(&(&proj * v));
    // posterior covariance and log|P| depend only on the class size
    let mut by_size: HashMap<usize, (DMatrix<f64>, f64)> = HashMap::new();
    for st in stats {
        let (cov, logdet_p) = match by_size.get(&st.n) {
            Some(entry) => entry.clone(),
            None => {
                let precision = DMatrix::identity(q, q) + &lambda * st.n as f64;
                let pc = Cholesky::new(precision)?;
                let entry = (symmetrize(&pc.inverse()), chol_logdet(&pc));
                by_size.insert(st.n, entry.clone());
                entry
            }
        };
        let b = &proj * &st.sum;
        let m = &cov * &b;
        loglik += 0.5 * (b.dot(&m) - logdet_p);
        cross.ger(1.0, &st.sum, &m, 1.0);
        second_moment += (&cov + &m * m.transpose()) * st.n as f64;
    }
    Some(EStep {
        loglik,
        cross,
        second_moment: symmetrize(&second_moment),
    })
}

/// Writes the model and its preprocessor in the sectioned text format.
pub fn save_model(model: &PldaModel, pp: &Preprocessor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_model(model, pp)?).map_err(|e| Error::io(path, e))
}

pub fn render_model(model: &PldaModel, pp: &Preprocessor) -> Result<String> {
    if pp.dim() != model.dim() {
        return Err(Error::InvalidModel("preprocessor and model dimensions differ".into()));
    }
    let mut out = String::new();
    let rows = |out: &mut String, m: &DMatrix<f64>| {
        for r in 0..m.nrows() {
            let row: Vec<f64> = m.row(r).iter().cloned().collect();
            let _ = writeln!(out, "{}", join_f64(&row));
        }
    };
    let _ = writeln!(out, "#plda dim={} q={}", model.dim(), model.latent_dim());
    let _ = writeln!(out, "u:\n{}", join_f64(model.mean.iter()));
    out.push_str("V:\n");
    rows(&mut out, &model.v);
    out.push_str("Sigma:\n");
    rows(&mut out, &model.sigma);
    let _ = writeln!(out, "pp.mean:\n{}", join_f64(pp.mean().iter()));
    out.push_str("pp.whitener:\n");
    rows(&mut out, pp.whitener());
    Ok(out)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(PldaModel, Preprocessor)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, &path.display().to_string())
}

pub fn parse_model(text: &str, name: &str) -> Result<(PldaModel, Preprocessor)> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let header = lines
        .first()
        .ok_or_else(|| Error::parse(name, 1, "missing #plda header"))?;
    let (d, q) = parse_header(header).ok_or_else(|| Error::parse(name, 1, format!("bad header {header:?}")))?;
    if d == 0 || q > d {
        return Err(Error::parse(name, 1, format!("invalid dimensions dim={d} q={q}")));
    }

    let mut cursor = 1;
    let mut section = |label: &str, nrows: usize, ncols: usize| -> Result<DMatrix<f64>> {
        match lines.get(cursor) {
            Some(l) if *l == label => {}
            Some(l) => {
                return Err(Error::parse(
                    name,
                    cursor + 1,
                    format!("expected section {label} but found {l:?}"),
                ))
            }
            None => return Err(Error::parse(name, cursor + 1, format!("missing section {label}"))),
        }
        cursor += 1;
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in 0..nrows {
            let line = lines
                .get(cursor)
                .ok_or_else(|| Error::parse(name, cursor + 1, format!("section {label} truncated after {r} rows")))?;
            let vals = parse_f64_list(line).map_err(|m| Error::parse(name, cursor + 1, m))?;
            if vals.len() != ncols {
                return Err(Error::parse(
                    name,
                    cursor + 1,
                    format!("section {label}: expected {ncols} values, found {}", vals.len()),
                ));
            }
            data.extend(vals);
            cursor += 1;
        }
        Ok(DMatrix::from_row_slice(nrows, ncols, &data))
    };

    let u = section("u:", 1, d)?;
    let v = section("V:", d, q)?;
    let sigma = section("Sigma:", d, d)?;
    let pp_mean = section("pp.mean:", 1, d)?;
    let whitener = section("pp.whitener:", d, d)?;

    let model = PldaModel::new(DVector::from_iterator(d, u.iter().cloned()), v, sigma)?;
    let pp = Preprocessor::from_parts(DVector::from_iterator(d, pp_mean.iter().cloned()), whitener, 0)?;
    Ok((model, pp))
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix("#plda ")?;
    let mut d = None;
    let mut q = None;
    for tok in rest.split_whitespace() {
        if let Some(x) = tok.strip_prefix("dim=") {
            d = x.parse().ok();
        } else if let Some(x) = tok.strip_prefix("q=") {
            q = x.parse().ok();
        }
    }
    Some((d?, q?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{dense_class_loglik, random_model, random_orthogonal};
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::Rng;

    fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let ch = Cholesky::new(cov.clone()).unwrap();
        let r = x - mean;
        let quad = r.dot(&ch.solve(&r));
        -0.5 * (x.len() as f64 * LN_2PI + chol_logdet(&ch) + quad)
    }

    #[test]
    fn q0_single_vector_is_gaussian_density() {
        let sigma = dmatrix![2.0, 0.3; 0.3, 1.0];
        let u = dvector![0.5, -1.0];
        let m = PldaModel::new(u.clone(), DMatrix::zeros(2, 0), sigma.clone()).unwrap();
        let w = dvector![1.0, 2.0];
        let ll = m.class_loglik(std::slice::from_ref(&w)).unwrap();
        assert!((ll - gaussian_logpdf(&w, &u, &sigma)).abs() < 1e-12);
    }

    #[test]
    fn singleton_classes_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 2);
        let a = dvector![0.3, -0.1, 1.0];
        let b = dvector![-1.0, 0.5, 0.2];
        let total = m.marginal_loglik(&[vec![a.clone()], vec![b.clone()]]).unwrap();
        let ga = gaussian_logpdf(&a, m.mean(), m.total());
        let gb = gaussian_logpdf(&b, m.mean(), m.total());
        assert!((total - ga - gb).abs() < 1e-10);
    }

    #[test]
    fn three_vector_class_matches_dense_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 2, 1);
        let class: Vec<_> = (0..3)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let fast = m.class_loglik(&class).unwrap();
        let dense = dense_class_loglik(&m, &class);
        assert!((fast - dense).abs() < 1e-10, "{fast} vs {dense}");
    }

    #[test]
    fn scalar_llr_closed_form() {
        // same: [[2,1],[1,2]], diff: [[2,0],[0,2]], zero quadratic forms
        let m = PldaModel::new(dvector![0.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let s = m.score_llr(&[dvector![0.0]], &dvector![0.0]).unwrap();
        assert!((s - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((s - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn no_subspace_means_zero_llr() {
        let sigma = dmatrix![1.0, 0.2; 0.2, 1.5];
        let empty = PldaModel::new(dvector![0.0, 0.0], DMatrix::zeros(2, 0), sigma.clone()).unwrap();
        let zero = PldaModel::new(dvector![0.0, 0.0], DMatrix::zeros(2, 2), sigma).unwrap();
        let a = dvector![1.0, -3.0];
        let b = dvector![0.4, 2.0];
        assert_eq!(empty.score_llr(std::slice::from_ref(&a), &b).unwrap(), 0.0);
        assert_eq!(zero.score_llr(&[a], &b).unwrap(), 0.0);
    }

    #[test]
    fn empty_enrollment_and_dimension_errors() {
        let m = PldaModel::new(dvector![0.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert!(m.score_llr(&[], &dvector![0.0]).is_err());
        assert!(m.score_llr(&[dvector![0.0, 1.0]], &dvector![0.0]).is_err());
    }

    #[test]
    fn model_validation() {
        let u = dvector![0.0, 0.0];
        assert!(PldaModel::new(u.clone(), DMatrix::zeros(2, 1), dmatrix![1.0, 0.5; 0.0, 1.0]).is_err());
        assert!(PldaModel::new(u.clone(), DMatrix::zeros(2, 1), dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
        assert!(PldaModel::new(u.clone(), DMatrix::zeros(2, 3), DMatrix::identity(2, 2)).is_err());
        let m = PldaModel::new(u, dmatrix![1.0; 2.0], DMatrix::identity(2, 2)).unwrap();
        assert!((m.total() - m.between() - m.sigma()).norm() < 1e-10 * m.total().norm());
    }

    #[test]
    fn posterior_shrinks_with_more_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 4, 2);
        let vecs: Vec<_> = (0..8)
            .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut prev: Option<DMatrix<f64>> = None;
        for n in 1..=8 {
            let post = m.speaker_posterior(&vecs[..n]).unwrap();
            assert_eq!(post.count, n);
            assert!(min_eigenvalue(&post.cov) > 0.0);
            if let Some(p) = prev {
                // larger count gives a smaller covariance in the Loewner order
                assert!(min_eigenvalue(&(p - &post.cov)) >= -1e-12);
            }
            prev = Some(post.cov);
        }
    }

    #[test]
    fn q0_em_gives_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let classes: Vec<Vec<DVector<f64>>> = (0..5)
            .map(|_| {
                (0..3)
                    .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let mut cfg = TrainConfig::new(0);
        cfg.iterations = 1;
        let out = train_em_classes(&classes, &cfg).unwrap();
        let all: Vec<_> = classes.iter().flatten().cloned().collect();
        let (_, cov) = crate::linalg::sample_mean_cov(&all);
        assert!((out.model.sigma() - cov).norm() < 1e-12);
        assert_eq!(out.logliks.len(), 1);
    }

    #[test]
    fn em_rejects_bad_configs() {
        let one = vec![vec![dvector![1.0, 2.0]]];
        assert!(train_em_classes(&one, &TrainConfig::new(1)).is_err());
        let two = vec![vec![dvector![1.0, 2.0]], vec![dvector![0.0, 1.0]]];
        assert!(matches!(
            train_em_classes(&two, &TrainConfig::new(3)),
            Err(Error::Config(_))
        ));
        let mut cfg = TrainConfig::new(1);
        cfg.iterations = 0;
        assert!(train_em_classes(&two, &cfg).is_err());
    }

    #[test]
    fn em_loglik_matches_marginal() {
        // the E-step likelihood and the public marginal are separate code paths
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = random_model(&mut rng, 4, 2);
        let classes = crate::testutil::sample_classes(&mut rng, &truth, 30, 3);
        let mut cfg = TrainConfig::new(2);
        cfg.iterations = 3;
        cfg.loglik_tol = f64::NEG_INFINITY;
        let out = train_em_classes(&classes, &cfg).unwrap();
        // rerun one more iteration to get the loglik of the returned model
        cfg.iterations = 4;
        let out4 = train_em_classes(&classes, &cfg).unwrap();
        let direct = out.model.marginal_loglik(&classes).unwrap();
        assert!(
            (direct - out4.logliks[3]).abs() < 1e-8 * direct.abs(),
            "{direct} vs {}",
            out4.logliks[3]
        );
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_model(&mut rng, 3, 2);
        let pp = Preprocessor::from_parts(dvector![0.1, 0.2, 0.3], DMatrix::identity(3, 3) * 2.0, 0).unwrap();
        let text = render_model(&m, &pp).unwrap();
        let (m2, pp2) = parse_model(&text, "mem").unwrap();
        assert_eq!(m, m2);
        assert_eq!(pp.mean(), pp2.mean());
        assert_eq!(pp.whitener(), pp2.whitener());
    }

    #[test]
    fn q0_model_file_round_trip() {
        let m = PldaModel::new(dvector![0.0, 1.0], DMatrix::zeros(2, 0), DMatrix::identity(2, 2)).unwrap();
        let text = render_model(&m, &Preprocessor::identity(2)).unwrap();
        assert_eq!(parse_model(&text, "mem").unwrap().0, m);
    }

    #[test]
    fn truncated_model_file_names_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = random_model(&mut rng, 3, 1);
        let text = render_model(&m, &Preprocessor::identity(3)).unwrap();
        let cut: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        let err = parse_model(&cut, "mem").unwrap_err().to_string();
        assert!(err.contains("Sigma:"), "{err}");
        let cut: String = text.lines().take(11).map(|l| format!("{l}\n")).collect();
        let err = parse_model(&cut, "mem").unwrap_err().to_string();
        assert!(err.contains("pp.mean:"), "{err}");
    }

    #[test]
    fn negative_eigenvalue_sigma_rejected_on_load() {
        let text = "#plda dim=2 q=1\nu:\n0,0\nV:\n1\n0\nSigma:\n1,0\n0,-1\npp.mean:\n0,0\npp.whitener:\n1,0\n0,1\n";
        assert!(matches!(parse_model(text, "mem"), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn batch_matches_single_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng, 4, 2);
        let mut models = BTreeMap::new();
        for i in 0..3 {
            let k = i + 1;
            models.insert(
                format!("m{i}"),
                (0..k)
                    .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)))
                    .collect::<Vec<_>>(),
            );
        }
        let tests: HashMap<String, DVector<f64>> = (0..4)
            .map(|i| (format!("t{i}"), DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0))))
            .collect();
        let mut trials = Vec::new();
        for mid in models.keys() {
            for tid in ["t2", "t0", "t3", "t1"] {
                trials.push((mid.clone(), tid.to_string()));
            }
        }
        let scores = m.score_batch(&models, &tests, &trials).unwrap();
        for (mid, tid, s) in &scores {
            assert_eq!(*s, m.score_llr(&models[mid], &tests[tid]).unwrap());
        }
        let mut reversed = trials.clone();
        reversed.reverse();
        let rev = m.score_batch(&models, &tests, &reversed).unwrap();
        let mut rev2 = rev.clone();
        rev2.reverse();
        assert_eq!(rev2, scores);
        let bad = vec![("nope".to_string(), "t0".to_string())];
        assert!(m
            .score_batch(&models, &tests, &bad)
            .unwrap_err()
            .to_string()
            .contains("nope"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn single_enrollment_scoring_is_symmetric(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(1..6);
            let q = rng.random_range(0..=d);
            let m = random_model(&mut rng, d, q);
            let a = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let b = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let ab = m.score_llr(std::slice::from_ref(&a), &b).unwrap();
            let ba = m.score_llr(std::slice::from_ref(&b), &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-10 * ab.abs().max(1.0));
        }

        #[test]
        fn rotating_subspace_keeps_scores(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(2..6);
            let q = rng.random_range(1..=d);
            let m = random_model(&mut rng, d, q);
            let r = random_orthogonal(&mut rng, q);
            let mr = m.with_rotated_subspace(&r).unwrap();
            let e: Vec<_> = (0..2).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))).collect();
            let t = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let s1 = m.score_llr(&e, &t).unwrap();
            let s2 = mr.score_llr(&e, &t).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }

        #[test]
        fn em_is_monotone_on_small_random_data(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(2..5);
            let q = rng.random_range(0..=d);
            let n_classes = rng.random_range(2..15);
            let classes: Vec<Vec<DVector<f64>>> = (0..n_classes)
                .map(|_| {
                    let n = rng.random_range(1..5);
                    (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect()
                })
                .collect();
            let mut cfg = TrainConfig::new(q);
            cfg.seed = seed;
            cfg.iterations = 15;
            cfg.loglik_tol = f64::NEG_INFINITY;
            let out = train_em_classes(&classes, &cfg).unwrap();
            for w in out.logliks.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
    }
}
