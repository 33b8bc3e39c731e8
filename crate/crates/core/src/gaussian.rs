//! Multivariate gaussian fits over soft-label clusters.
//!
//! Covariances are factored once with a Cholesky decomposition; Mahalanobis
//! terms are evaluated with triangular solves so no matrix is ever inverted
//! explicitly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Fitted gaussian: moments plus the cached Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    mu: Array1<f64>,
    sigma: Array2<f64>,
    chol: Array2<f64>,
    log_det: f64,
    count: usize,
}

impl GaussianFit {
    /// Builds a fit from explicit moments. `sigma` must be symmetric positive
    /// definite; `count` records how many points produced the moments (0 when
    /// synthetic).
    pub fn from_moments(mu: Array1<f64>, sigma: Array2<f64>, count: usize) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidDimension("gaussian dimension is zero".into()));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "covariance shape".into(),
                expected: d,
                got: sigma.nrows().max(sigma.ncols()),
            });
        }
        if let Some(i) = mu.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        if let Some((i, _)) = sigma.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        let chol = cholesky_lower(&sigma)?;
        let log_det = 2.0 * chol.diag().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GaussianFit {
            mu,
            sigma,
            chol,
            log_det,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mu.view()
    }

    pub fn covariance(&self) -> ArrayView2<'_, f64> {
        self.sigma.view()
    }

    /// Lower-triangular factor L with L Lᵀ = sigma.
    pub fn cholesky(&self) -> ArrayView2<'_, f64> {
        self.chol.view()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Squared Mahalanobis distance of `x` from the mean, via one forward
    /// solve against the Cholesky factor.
    pub fn mahalanobis_sq(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "mahalanobis input".into(),
                expected: self.dim(),
                got: x.len(),
            });
        }
        let diff = &x - &self.mu;
        let y = forward_solve(&self.chol, diff.view());
        Ok(y.iter().map(|v| v * v).sum())
    }

    /// Log of the unnormalized density exp(-0.5 * mahalanobis_sq).
    pub fn log_density_unnormalized(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(-0.5 * self.mahalanobis_sq(x)?)
    }
}

/// Fits mean and sample covariance (divisor c-1) to the rows of `points`,
/// adding `epsilon` to the diagonal before factoring.
pub fn fit_gaussian(points: ArrayView2<'_, f64>, epsilon: f64) -> Result<GaussianFit> {
    let c = points.nrows();
    let d = points.ncols();
    if c < 2 {
        return Err(Error::TooFewPoints { need: 2, got: c });
    }
    if d == 0 {
        return Err(Error::InvalidDimension("points have zero columns".into()));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Config(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    if let Some((i, _)) = points.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let mu = points
        .mean_axis(ndarray::Axis(0))
        .expect("nonempty by the c >= 2 check");
    let centered = &points - &mu;
    let mut sigma = centered.t().dot(&centered) / (c - 1) as f64;
    // Force exact symmetry; the matrix product can drift by an ulp.
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = s;
            sigma[(j, i)] = s;
        }
    }
    for i in 0..d {
        sigma[(i, i)] += epsilon;
    }
    GaussianFit::from_moments(mu, sigma, c)
}

/// Plain Cholesky factorization; reads only the lower triangle of `a`.
fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !diag.is_finite() || diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { minor: j + 1 });
        }
        let root = diag.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Solves L y = b for lower-triangular L.
fn forward_solve(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let d = b.len();
    let mut y = Array1::<f64>::zeros(d);
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}
