//! Exact Gaussian-process regression.
//!
//! Squared-exponential ARD kernel, posterior inference through a
//! hand-rolled Cholesky factorization with an escalating jitter ladder,
//! log-marginal-likelihood gradients in log-hyperparameter space, and
//! joint posterior sampling. Models are immutable once fitted; adding an
//! observation produces a new model via a rank-one factor extension.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Relative floor below which a Cholesky pivot counts as a failure.
const PIVOT_RTOL: f64 = 1e-12;
/// First jitter level, as a fraction of the signal variance.
const JITTER_BASE: f64 = 1e-10;
/// Number of ladder levels: 1e-10, 1e-9, ..., 1e-4 times signal variance.
const JITTER_LEVELS: usize = 7;

const LN_2PI: f64 = 1.837_877_066_409_345_6;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("covariance not positive definite after escalating jitter to {max_jitter:.3e}")]
    NotPositiveDefinite { max_jitter: f64 },
}

/// SE-ARD kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Hyperparams {
    pub fn new(
        lengthscales: Vec<f64>,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        if lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(GpError::InvalidHyperparams(
                "lengthscales must be positive".into(),
            ));
        }
        if !(signal_variance > 0.0) {
            return Err(GpError::InvalidHyperparams(
                "signal variance must be positive".into(),
            ));
        }
        if !(noise_variance >= 0.0) {
            return Err(GpError::InvalidHyperparams(
                "noise variance must be non-negative".into(),
            ));
        }
        Ok(Self {
            lengthscales,
            signal_variance,
            noise_variance,
        })
    }

    /// Isotropic defaults in normalized input space.
    pub fn default_for_dim(dim: usize) -> Self {
        Self {
            lengthscales: vec![0.25; dim],
            signal_variance: 1.0,
            noise_variance: 0.01,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Packs into `[ln l_1, .., ln l_d, ln s, ln noise]`.
    fn to_log(&self) -> Vec<f64> {
        let mut z: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        z.push(self.signal_variance.ln());
        z.push(self.noise_variance.ln());
        z
    }

    fn from_log(z: &[f64]) -> Self {
        let d = z.len() - 2;
        Self {
            lengthscales: z[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: z[d].exp(),
            noise_variance: z[d + 1].exp(),
        }
    }
}

/// Squared-exponential ARD covariance between two points.
pub fn kernel(x: &[f64], x2: &[f64], hp: &Hyperparams) -> f64 {
    assert_eq!(x.len(), x2.len(), "kernel input dimensions disagree");
    assert_eq!(x.len(), hp.dim(), "kernel input does not match lengthscales");
    let mut q = 0.0;
    for ((a, b), l) in x.iter().zip(x2).zip(&hp.lengthscales) {
        let d = (a - b) / l;
        q += d * d;
    }
    hp.signal_variance * (-0.5 * q).exp()
}

fn jitter_at(level: usize, signal_variance: f64) -> f64 {
    if level == 0 {
        0.0
    } else {
        JITTER_BASE * 10f64.powi(level as i32 - 1) * signal_variance
    }
}

/// In-place lower Cholesky of a symmetric matrix (column-major data).
/// Fails when a pivot falls at or below `PIVOT_RTOL` times the largest
/// original diagonal entry.
fn cholesky_lower_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut scale = 1e-300f64;
    for j in 0..n {
        scale = scale.max(a[(j, j)]);
    }
    let data = a.as_mut_slice();
    for j in 0..n {
        let (prev, cur) = data.split_at_mut(j * n);
        let colj = &mut cur[..n];
        for k in 0..j {
            let colk = &prev[k * n..k * n + n];
            let ljk = colk[j];
            if ljk != 0.0 {
                for (c, &a) in colj[j..].iter_mut().zip(&colk[j..]) {
                    *c -= a * ljk;
                }
            }
        }
        let d = colj[j];
        if !(d > PIVOT_RTOL * scale) {
            return false;
        }
        let ljj = d.sqrt();
        colj[j] = ljj;
        for c in colj[j + 1..].iter_mut() {
            *c /= ljj;
        }
        for c in colj[..j].iter_mut() {
            *c = 0.0;
        }
    }
    true
}

/// Positive semi-definite variant used for posterior covariances: pivots
/// within a tolerance band of zero are zeroed out together with their
/// column (exactly singular directions get no sampling noise). Strongly
/// negative pivots report indefiniteness so the caller can add jitter.
fn psd_cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut scale = 1e-300f64;
    for j in 0..n {
        scale = scale.max(a[(j, j)].abs());
    }
    let zero_tol = 1e-12 * scale;
    let neg_tol = 1e-9 * scale;
    let data = a.as_mut_slice();
    for j in 0..n {
        let (prev, cur) = data.split_at_mut(j * n);
        let colj = &mut cur[..n];
        for k in 0..j {
            let colk = &prev[k * n..k * n + n];
            let ljk = colk[j];
            if ljk != 0.0 {
                for (c, &a) in colj[j..].iter_mut().zip(&colk[j..]) {
                    *c -= a * ljk;
                }
            }
        }
        let d = colj[j];
        if d < -neg_tol {
            return false;
        }
        if d <= zero_tol {
            for c in colj[j..].iter_mut() {
                *c = 0.0;
            }
        } else {
            let ljj = d.sqrt();
            colj[j] = ljj;
            for c in colj[j + 1..].iter_mut() {
                *c /= ljj;
            }
        }
        for c in colj[..j].iter_mut() {
            *c = 0.0;
        }
    }
    true
}

/// Solves `L L^T x = b` given the lower factor.
fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    let ok = l.solve_lower_triangular_mut(&mut x);
    debug_assert!(ok);
    let ok = l.tr_solve_lower_triangular_mut(&mut x);
    debug_assert!(ok);
    x
}

/// One joint Gaussian over a fixed point set: posterior mean plus a PSD
/// factor of the posterior covariance. Supports repeated cheap draws.
pub struct JointSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl JointSampler {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.mean.len();
        let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.factor * z
    }
}

/// Immutable GP posterior. `chol` is the lower Cholesky factor of
/// `K + (noise + jitter) I`; `alpha` solves that system against the targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    hp: Hyperparams,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter_level: usize,
}

impl GpModel {
    /// Fits the exact posterior. An empty dataset yields the prior.
    pub fn fit(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        hp: Hyperparams,
    ) -> Result<Self, GpError> {
        Self::fit_from_level(inputs, targets, hp, 0)
    }

    fn fit_from_level(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        hp: Hyperparams,
        start_level: usize,
    ) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::DimensionMismatch(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for row in &inputs {
            if row.len() != hp.dim() {
                return Err(GpError::DimensionMismatch(format!(
                    "input of dimension {} vs {} lengthscales",
                    row.len(),
                    hp.dim()
                )));
            }
        }
        let n = inputs.len();
        if n == 0 {
            return Ok(Self {
                inputs,
                targets,
                hp,
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
                jitter_level: 0,
            });
        }
        for level in start_level..=JITTER_LEVELS {
            let extra = hp.noise_variance + jitter_at(level, hp.signal_variance);
            let mut ky = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in j..n {
                    let v = kernel(&inputs[i], &inputs[j], &hp);
                    ky[(i, j)] = v;
                    ky[(j, i)] = v;
                }
                ky[(j, j)] += extra;
            }
            if cholesky_lower_in_place(&mut ky) {
                let y = DVector::from_column_slice(&targets);
                let alpha = chol_solve(&ky, &y);
                return Ok(Self {
                    inputs,
                    targets,
                    hp,
                    chol: ky,
                    alpha,
                    jitter_level: level,
                });
            }
        }
        Err(GpError::NotPositiveDefinite {
            max_jitter: jitter_at(JITTER_LEVELS, hp.signal_variance),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.hp.dim()
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn kernel_vector(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| kernel(xi, x, &self.hp)),
        )
    }

    /// Posterior mean and standard deviation of the latent function
    /// (observation noise excluded).
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let s = self.hp.signal_variance;
        if self.inputs.is_empty() {
            assert_eq!(x.len(), self.hp.dim(), "predict input dimension mismatch");
            return (0.0, s.sqrt());
        }
        let mut k = self.kernel_vector(x);
        let mean = k.dot(&self.alpha);
        let ok = self.chol.solve_lower_triangular_mut(&mut k);
        debug_assert!(ok);
        let var = s - k.norm_squared();
        assert!(
            var >= -1e-12 * s.max(1.0),
            "posterior variance {var} below tolerance"
        );
        (mean, var.max(0.0).sqrt())
    }

    /// Posterior mean only; O(n) per query once fitted.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        if self.inputs.is_empty() {
            assert_eq!(x.len(), self.hp.dim(), "predict input dimension mismatch");
            return 0.0;
        }
        self.kernel_vector(x).dot(&self.alpha)
    }

    /// New model with one observation appended; hyperparameters unchanged,
    /// the existing factor is extended in O(n^2). Falls back to a full
    /// refit on the jitter ladder when the extension pivot degenerates.
    pub fn with_observation(&self, x: &[f64], y: f64) -> Result<Self, GpError> {
        assert_eq!(x.len(), self.hp.dim(), "observation dimension mismatch");
        let n = self.inputs.len();
        let mut inputs = self.inputs.clone();
        inputs.push(x.to_vec());
        let mut targets = self.targets.clone();
        targets.push(y);
        if n == 0 {
            return Self::fit(inputs, targets, self.hp.clone());
        }
        let c = self.hp.signal_variance
            + self.hp.noise_variance
            + jitter_at(self.jitter_level, self.hp.signal_variance);
        let mut w = self.kernel_vector(x);
        let ok = self.chol.solve_lower_triangular_mut(&mut w);
        debug_assert!(ok);
        let d2 = c - w.norm_squared();
        if d2 > PIVOT_RTOL * c {
            let mut chol = DMatrix::zeros(n + 1, n + 1);
            chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
            for j in 0..n {
                chol[(n, j)] = w[j];
            }
            chol[(n, n)] = d2.sqrt();
            let yv = DVector::from_column_slice(&targets);
            let alpha = chol_solve(&chol, &yv);
            Ok(Self {
                inputs,
                targets,
                hp: self.hp.clone(),
                chol,
                alpha,
                jitter_level: self.jitter_level,
            })
        } else {
            Self::fit_from_level(inputs, targets, self.hp.clone(), self.jitter_level + 1)
        }
    }

    /// New model over the same inputs and hyperparameters but different
    /// targets; reuses the factorization.
    pub fn refit_targets(&self, targets: Vec<f64>) -> Self {
        assert_eq!(targets.len(), self.inputs.len(), "target count mismatch");
        let alpha = if targets.is_empty() {
            DVector::zeros(0)
        } else {
            chol_solve(&self.chol, &DVector::from_column_slice(&targets))
        };
        Self {
            inputs: self.inputs.clone(),
            targets,
            hp: self.hp.clone(),
            chol: self.chol.clone(),
            alpha,
            jitter_level: self.jitter_level,
        }
    }

    /// Joint posterior (mean vector, covariance matrix) over `points`.
    pub fn posterior_joint(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let m = points.len();
        for p in points {
            assert_eq!(p.len(), self.hp.dim(), "posterior point dimension mismatch");
        }
        let mut cov = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in j..m {
                let v = kernel(&points[i], &points[j], &self.hp);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let n = self.inputs.len();
        if n == 0 {
            return (DVector::zeros(m), cov);
        }
        let mut kx = DMatrix::zeros(n, m);
        for (j, p) in points.iter().enumerate() {
            for i in 0..n {
                kx[(i, j)] = kernel(&self.inputs[i], p, &self.hp);
            }
        }
        let mean = kx.tr_mul(&self.alpha);
        let ok = self.chol.solve_lower_triangular_mut(&mut kx);
        debug_assert!(ok);
        cov -= kx.tr_mul(&kx);
        (mean, cov)
    }

    /// Prepares repeated joint posterior draws over `points`.
    pub fn joint_sampler(&self, points: &[Vec<f64>]) -> Result<JointSampler, GpError> {
        assert!(!points.is_empty(), "need at least one point to sample");
        let (mean, cov) = self.posterior_joint(points);
        let factor = psd_factor(cov, self.hp.signal_variance)?;
        Ok(JointSampler { mean, factor })
    }

    /// One joint draw from the posterior over `points`.
    pub fn sample_posterior_joint<R: Rng>(
        &self,
        points: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<DVector<f64>, GpError> {
        Ok(self.joint_sampler(points)?.draw(rng))
    }

    /// Log evidence of the training data under the current hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len();
        assert!(n >= 1, "log marginal likelihood needs data");
        let y = DVector::from_column_slice(&self.targets);
        let mut logdet = 0.0;
        for j in 0..n {
            logdet += self.chol[(j, j)].ln();
        }
        -0.5 * y.dot(&self.alpha) - logdet - 0.5 * n as f64 * LN_2PI
    }

    /// Log evidence with its gradient with respect to
    /// `[ln l_1, .., ln l_d, ln signal_variance, ln noise_variance]`.
    pub fn lml_with_grad(&self) -> (f64, Vec<f64>) {
        let n = self.inputs.len();
        assert!(n >= 1, "log marginal likelihood needs data");
        let d = self.hp.dim();
        let lml = self.log_marginal_likelihood();

        // Ky^-1 through the stored factor.
        let mut x = DMatrix::identity(n, n);
        let ok = self.chol.solve_lower_triangular_mut(&mut x);
        debug_assert!(ok);
        let kinv = x.tr_mul(&x);

        let s = self.hp.signal_variance;
        let mut grad = vec![0.0; d + 2];
        // Pair loop accumulates the lengthscale terms and both traces of
        // the noise-free kernel in one pass; B = alpha alpha^T - Ky^-1.
        let mut quad_k = 0.0; // alpha^T K alpha
        let mut tr_kinv_k = 0.0; // tr(Ky^-1 K)
        for i in 0..n {
            quad_k += self.alpha[i] * self.alpha[i] * s;
            tr_kinv_k += kinv[(i, i)] * s;
            for j in 0..i {
                let kij = kernel(&self.inputs[i], &self.inputs[j], &self.hp);
                let b = self.alpha[i] * self.alpha[j] - kinv[(i, j)];
                quad_k += 2.0 * self.alpha[i] * self.alpha[j] * kij;
                tr_kinv_k += 2.0 * kinv[(i, j)] * kij;
                let w = b * kij;
                for k in 0..d {
                    let dk = (self.inputs[i][k] - self.inputs[j][k]) / self.hp.lengthscales[k];
                    grad[k] += w * dk * dk;
                }
            }
        }
        grad[d] = 0.5 * (quad_k - tr_kinv_k);
        let mut tr_kinv = 0.0;
        for i in 0..n {
            tr_kinv += kinv[(i, i)];
        }
        grad[d + 1] =
            0.5 * self.hp.noise_variance * (self.alpha.norm_squared() - tr_kinv);
        (lml, grad)
    }
}

/// Factors a posterior covariance for sampling, escalating jitter when the
/// matrix is numerically indefinite. Exactly singular directions keep a
/// zero factor column, so deterministic coordinates stay deterministic.
fn psd_factor(cov: DMatrix<f64>, signal_variance: f64) -> Result<DMatrix<f64>, GpError> {
    for level in 0..=JITTER_LEVELS {
        let jitter = jitter_at(level, signal_variance);
        let mut m = cov.clone();
        for j in 0..m.nrows() {
            m[(j, j)] += jitter;
        }
        if psd_cholesky_in_place(&mut m) {
            return Ok(m);
        }
    }
    Err(GpError::NotPositiveDefinite {
        max_jitter: jitter_at(JITTER_LEVELS, signal_variance),
    })
}

/// Box bounds for hyperparameter search.
#[derive(Debug, Clone)]
pub struct HyperparamBounds {
    pub lengthscales: Vec<(f64, f64)>,
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl HyperparamBounds {
    /// Standard bounds scaled by the per-dimension input range and target
    /// variance: lengthscales in `[1e-2, 1e2] * range`, signal variance in
    /// `[1e-4, 1e4] * var`, noise variance in `[1e-6, 1] * var`.
    pub fn standard(input_ranges: &[f64], target_variance: f64) -> Self {
        let v = target_variance.max(1e-12);
        Self {
            lengthscales: input_ranges
                .iter()
                .map(|r| {
                    let r = r.max(1e-12);
                    (1e-2 * r, 1e2 * r)
                })
                .collect(),
            signal_variance: (1e-4 * v, 1e4 * v),
            noise_variance: (1e-6 * v, v),
        }
    }

    fn log_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo: Vec<f64> = self.lengthscales.iter().map(|b| b.0.ln()).collect();
        let mut hi: Vec<f64> = self.lengthscales.iter().map(|b| b.1.ln()).collect();
        lo.push(self.signal_variance.0.ln());
        hi.push(self.signal_variance.1.ln());
        lo.push(self.noise_variance.0.ln());
        hi.push(self.noise_variance.1.ln());
        (lo, hi)
    }
}

const MAX_ASCENT_ITERS: usize = 20;

/// Multi-start gradient ascent on the log marginal likelihood in
/// log-hyperparameter space. The first start is the (clamped) initial
/// guess, the rest are log-uniform draws within bounds; the best restart
/// wins and the initial hyperparameters are never beaten by less than a
/// strict improvement. `restarts = 0` returns `init` unchanged.
pub fn optimize_hyperparams(
    inputs: &[Vec<f64>],
    targets: &[f64],
    bounds: &HyperparamBounds,
    init: &Hyperparams,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Hyperparams {
    if restarts == 0 {
        return init.clone();
    }
    assert!(inputs.len() >= 2, "hyperparameter fitting needs n >= 2");
    let (zlo, zhi) = bounds.log_bounds();
    let clamp = |z: &mut [f64]| {
        for ((v, lo), hi) in z.iter_mut().zip(&zlo).zip(&zhi) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let fit_at = |z: &[f64]| -> Option<GpModel> {
        GpModel::fit(inputs.to_vec(), targets.to_vec(), Hyperparams::from_log(z)).ok()
    };
    let eval = |z: &[f64]| -> Option<f64> {
        let f = fit_at(z)?.log_marginal_likelihood();
        f.is_finite().then_some(f)
    };

    let mut z_init = init.to_log();
    clamp(&mut z_init);
    let mut best_f = f64::NEG_INFINITY;
    let mut best_z = z_init.clone();
    if let Some(f) = eval(&z_init) {
        best_f = f;
    }

    for start in 0..restarts {
        let mut z = if start == 0 {
            z_init.clone()
        } else {
            zlo.iter()
                .zip(&zhi)
                .map(|(&lo, &hi)| rng.random_range(lo..hi))
                .collect()
        };
        let mut f = match eval(&z) {
            Some(v) => v,
            None => continue,
        };
        for _ in 0..MAX_ASCENT_ITERS {
            let model = match fit_at(&z) {
                Some(m) => m,
                None => break,
            };
            let (_, g) = model.lml_with_grad();
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < 1e-8 {
                break;
            }
            let dir: Vec<f64> = g.iter().map(|v| v / gnorm.max(1.0)).collect();
            let mut accepted = None;
            let mut t = 1.0;
            for _ in 0..12 {
                let mut z2: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                clamp(&mut z2);
                if z2 != z {
                    if let Some(f2) = eval(&z2) {
                        if f2 > f + 1e-10 {
                            accepted = Some((z2, f2));
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((z2, f2)) => {
                    let delta = f2 - f;
                    z = z2;
                    f = f2;
                    if delta < 1e-4 * (1.0 + f.abs()) {
                        break;
                    }
                }
                None => break,
            }
        }
        if f > best_f {
            best_f = f;
            best_z = z;
        }
    }
    Hyperparams::from_log(&best_z)
}
