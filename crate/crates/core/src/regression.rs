//! Least squares, ridge and LASSO on a design whose first column is the
//! intercept.
//!
//! The loss is the plain residual sum of squares; penalized objectives add
//! `lambda * ||b||_2^2` or `lambda * ||b||_1` over the non-intercept
//! coefficients `b` of the standardized problem. Coefficients are always
//! reported in the original column units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    None,
    Ridge,
    Lasso,
}

impl Penalty {
    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::None => "none",
            Penalty::Ridge => "ridge",
            Penalty::Lasso => "lasso",
        }
    }
}

impl std::fmt::Display for Penalty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub penalty: Penalty,
    pub lambda: f64,
    pub standardize: bool,
    pub max_iter: usize,
    pub tol: f64,
    /// Column 0 is a constant-one intercept.
    pub intercept: bool,
    /// Include the intercept in the penalty (off by default).
    pub penalize_intercept: bool,
}

impl FitSpec {
    pub fn ols() -> Self {
        Self {
            penalty: Penalty::None,
            lambda: 0.0,
            standardize: false,
            max_iter: 100_000,
            tol: 1e-7,
            intercept: true,
            penalize_intercept: false,
        }
    }

    pub fn ridge(lambda: f64) -> Result<Self> {
        Self::penalized(Penalty::Ridge, lambda)
    }

    pub fn lasso(lambda: f64) -> Result<Self> {
        Self::penalized(Penalty::Lasso, lambda)
    }

    /// `lambda` must be positive for ridge and LASSO and zero for `None`.
    pub fn new(penalty: Penalty, lambda: f64) -> Result<Self> {
        match penalty {
            Penalty::None if lambda == 0.0 => Ok(Self::ols()),
            Penalty::None => Err(Error::InvalidArgument(
                "an unpenalized fit takes lambda = 0".into(),
            )),
            p => Self::penalized(p, lambda),
        }
    }

    fn penalized(penalty: Penalty, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{penalty} needs a positive finite lambda, got {lambda}"
            )));
        }
        Ok(Self {
            penalty,
            lambda,
            standardize: true,
            ..Self::ols()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Coefficients in original units; `beta[0]` is the intercept.
    pub beta: DVector<f64>,
    pub penalty: Penalty,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Objective after each coordinate-descent sweep (LASSO only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_path: Vec<f64>,
}

/// Column centering and scaling learned from training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
    intercept: bool,
}

impl Standardizer {
    /// Identity transform.
    pub fn identity(d: usize, intercept: bool) -> Self {
        Self {
            mean: DVector::zeros(d),
            scale: DVector::from_element(d, 1.0),
            intercept,
        }
    }

    /// z-scores every non-intercept column (population sd). Columns are only
    /// centered when there is an intercept to absorb the shift. Constant
    /// columns keep scale 1.
    pub fn fit(x: &DMatrix<f64>, intercept: bool) -> Self {
        let (n, d) = x.shape();
        let mut s = Self::identity(d, intercept);
        for j in usize::from(intercept)..d {
            let col = x.column(j);
            let mean = if intercept { col.mean() } else { 0.0 };
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = (ss / n as f64).sqrt();
            s.mean[j] = mean;
            s.scale[j] = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
        }
        s
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for j in usize::from(self.intercept)..x.ncols() {
            let (m, s) = (self.mean[j], self.scale[j]);
            z.column_mut(j).apply(|v| *v = (*v - m) / s);
        }
        z
    }

    /// Maps coefficients of the transformed design back to original units.
    pub fn to_original(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut beta = b.clone();
        let start = usize::from(self.intercept);
        for j in start..b.len() {
            beta[j] = b[j] / self.scale[j];
        }
        if self.intercept {
            let shift: f64 = (1..b.len()).map(|j| beta[j] * self.mean[j]).sum();
            beta[0] = b[0] - shift;
        }
        beta
    }

    /// Inverse of [`Standardizer::to_original`].
    pub fn to_transformed(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut b = beta.clone();
        for j in usize::from(self.intercept)..beta.len() {
            b[j] = beta[j] * self.scale[j];
        }
        if self.intercept {
            let shift: f64 = (1..beta.len()).map(|j| beta[j] * self.mean[j]).sum();
            b[0] = beta[0] + shift;
        }
        b
    }
}

fn validate(x: &DMatrix<f64>, y: &DVector<f64>, spec: &FitSpec) -> Result<()> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("empty design {n}x{d}")));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design or response".into()));
    }
    if spec.intercept && x.column(0).iter().any(|&v| v != 1.0) {
        return Err(Error::InvalidArgument(
            "column 0 must be the constant-one intercept".into(),
        ));
    }
    Ok(())
}

fn penalty_weights(d: usize, spec: &FitSpec) -> Vec<f64> {
    (0..d)
        .map(|j| {
            if j == 0 && spec.intercept && !spec.penalize_intercept {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

fn standardizer_for(x: &DMatrix<f64>, spec: &FitSpec) -> Standardizer {
    if spec.standardize {
        Standardizer::fit(x, spec.intercept)
    } else {
        Standardizer::identity(x.ncols(), spec.intercept)
    }
}

/// Penalized objective at `beta` (original units), evaluated in the
/// coordinates the solver works in.
pub fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, spec: &FitSpec) -> f64 {
    let std = standardizer_for(x, spec);
    let b = std.to_transformed(beta);
    let w = penalty_weights(x.ncols(), spec);
    let rss = (y - x * beta).norm_squared();
    let pen: f64 = match spec.penalty {
        Penalty::None => 0.0,
        Penalty::Ridge => b.iter().zip(&w).map(|(v, w)| w * v * v).sum(),
        Penalty::Lasso => b.iter().zip(&w).map(|(v, w)| w * v.abs()).sum(),
    };
    rss + spec.lambda * pen
}

pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, spec: &FitSpec) -> Result<FitResult> {
    validate(x, y, spec)?;
    let std = standardizer_for(x, spec);
    let z = std.transform(x);
    let w = penalty_weights(x.ncols(), spec);
    let (b, converged, iterations, path) = match spec.penalty {
        Penalty::None => (min_norm_least_squares(&z, y), true, 1, Vec::new()),
        Penalty::Ridge => (ridge_solve(&z, y, spec.lambda, &w, spec.intercept), true, 1, Vec::new()),
        Penalty::Lasso => {
            let cd = coordinate_descent(&z, y, spec.lambda, &w, spec.max_iter, spec.tol);
            (cd.b, cd.converged, cd.sweeps, cd.path)
        }
    };
    let beta = std.to_original(&b);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solver produced non-finite coefficients".into()));
    }
    Ok(FitResult {
        objective: objective(x, y, &beta, spec),
        beta,
        penalty: spec.penalty,
        lambda: spec.lambda,
        converged,
        iterations,
        objective_path: path,
    })
}

/// Minimum-norm least squares through the SVD; singular values below
/// `max(n, d) * eps * s_max` count as zero.
pub fn min_norm_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = x.nrows().max(x.ncols()) as f64 * f64::EPSILON * smax;
    svd.solve(y, eps)
        .expect("both singular-vector sets were computed")
}

/// Minimizes `||y - Zb||^2 + lambda * sum_j w_j b_j^2`.
fn ridge_solve(z: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, w: &[f64], intercept: bool) -> DVector<f64> {
    let (n, d) = z.shape();
    let free_intercept = intercept && w[0] == 0.0 && w[1..].iter().all(|&v| v == 1.0);
    let centered = free_intercept
        && (1..d).all(|j| z.column(j).mean().abs() <= 1e-9 * (1.0 + z.column(j).amax()));
    if centered && d > 1 {
        // Centered columns decouple the intercept: it is the response mean.
        let ybar = y.mean();
        let yc = y.add_scalar(-ybar);
        let zc = z.columns(1, d - 1).into_owned();
        let p = d - 1;
        let b = if p <= n {
            let mut a = zc.tr_mul(&zc);
            for i in 0..p {
                a[(i, i)] += lambda;
            }
            solve_spd(a, &zc.tr_mul(&yc))
        } else {
            // Dual form: b = Z^T (Z Z^T + lambda I)^-1 y.
            let mut k = &zc * zc.transpose();
            for i in 0..n {
                k[(i, i)] += lambda;
            }
            let alpha = solve_spd(k, &yc);
            zc.tr_mul(&alpha)
        };
        let mut out = DVector::zeros(d);
        out[0] = ybar;
        out.rows_mut(1, p).copy_from(&b);
        return out;
    }
    let mut a = z.tr_mul(z);
    for (i, wi) in w.iter().enumerate() {
        a[(i, i)] += lambda * wi;
    }
    let rhs = z.tr_mul(y);
    match a.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => min_norm_least_squares(&a, &rhs),
    }
}

fn solve_spd(a: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match a.clone().cholesky() {
        Some(c) => c.solve(rhs),
        None => min_norm_least_squares(&a, rhs),
    }
}

struct CdOutcome {
    b: DVector<f64>,
    converged: bool,
    sweeps: usize,
    path: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `||y - Zb||^2 + lambda * sum_j w_j |b_j|`.
/// Stops once the largest coefficient change, measured in response units
/// (`|db_j| * rms(z_j)`), drops below `tol * max(rms(y), 1)`.
fn coordinate_descent(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    w: &[f64],
    max_iter: usize,
    tol: f64,
) -> CdOutcome {
    let (n, d) = z.shape();
    let norms: Vec<f64> = (0..d).map(|j| z.column(j).norm_squared()).collect();
    let rms_y = (y.norm_squared() / n as f64).sqrt().max(1.0);
    let mut b: DVector<f64> = DVector::zeros(d);
    let mut r = y.clone();
    let objective = |r: &DVector<f64>, b: &DVector<f64>| {
        r.norm_squared() + lambda * b.iter().zip(w).map(|(v, w)| w * v.abs()).sum::<f64>()
    };
    let mut path = Vec::new();
    for sweep in 1..=max_iter {
        let mut max_change = 0.0f64;
        for j in 0..d {
            if norms[j] == 0.0 {
                continue;
            }
            let col = z.column(j);
            let old: f64 = b[j];
            let rho = col.dot(&r) + norms[j] * old;
            let new = soft_threshold(rho, 0.5 * lambda * w[j]) / norms[j];
            let delta = new - old;
            if delta != 0.0 {
                r.axpy(-delta, &col, 1.0);
                b[j] = new;
                max_change = max_change.max(delta.abs() * (norms[j] / n as f64).sqrt());
            }
        }
        path.push(objective(&r, &b));
        if max_change < tol * rms_y {
            return CdOutcome {
                b,
                converged: true,
                sweeps: sweep,
                path,
            };
        }
    }
    CdOutcome {
        b,
        converged: false,
        sweeps: max_iter,
        path,
    }
}

pub fn predict(result: &FitResult, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != result.beta.len() {
        return Err(Error::Dimension {
            expected: result.beta.len(),
            got: x.ncols(),
        });
    }
    Ok(x * &result.beta)
}

pub fn mse(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("mse of an empty vector".into()));
    }
    Ok((y - yhat).norm_squared() / y.len() as f64)
}

/// Classical OLS standard errors `sqrt(s^2 diag((X^T X)^-1))` with
/// `s^2 = RSS / (n - d)`.
pub fn ols_standard_errors(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, d) = x.shape();
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "standard errors need n > d, got n={n}, d={d}"
        )));
    }
    let s2 = (y - x * beta).norm_squared() / (n - d) as f64;
    let inv = x
        .tr_mul(x)
        .cholesky()
        .ok_or_else(|| Error::Singular("X^T X is not positive definite".into()))?
        .inverse();
    Ok(DVector::from_iterator(d, (0..d).map(|j| (s2 * inv[(j, j)]).sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]),
            DVector::from_vec(vec![2.0, 4.0, 6.0]),
        )
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        (x, y)
    }

    #[test]
    fn ols_exact_line() {
        let (x, y) = line();
        let f = fit(&x, &y, &FitSpec::ols()).unwrap();
        assert!((f.beta[0]).abs() < 1e-10 && (f.beta[1] - 2.0).abs() < 1e-10);
        let p = predict(&f, &x).unwrap();
        assert!((p - &y).amax() < 1e-10);
    }

    #[test]
    fn huge_ridge_penalty_leaves_mean() {
        let (x, y) = line();
        let f = fit(&x, &y, &FitSpec::ridge(1e9).unwrap()).unwrap();
        assert!(f.beta[1].abs() < 1e-6);
        assert!((f.beta[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn lasso_zero_above_lambda_max() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -1.5, 1.0, -0.5, 1.0, 0.5, 1.0, 1.5]);
        let y = DVector::from_vec(vec![1.0, 3.0, 2.0, 5.0]);
        let mut spec = FitSpec::lasso(1.0).unwrap();
        spec.standardize = false;
        let yc: DVector<f64> = y.add_scalar(-y.mean());
        // KKT: b = 0 is optimal once lambda >= 2 |x^T yc|.
        let lmax: f64 = 2.0 * x.column(1).dot(&yc).abs();
        spec.lambda = lmax;
        let f = fit(&x, &y, &spec).unwrap();
        assert_eq!(f.beta[1], 0.0);
        assert!((f.beta[0] - y.mean()).abs() < 1e-9);
        spec.lambda = 0.9 * lmax;
        assert!(fit(&x, &y, &spec).unwrap().beta[1] != 0.0);
    }

    #[test]
    fn spec_constructor_invariant() {
        assert!(FitSpec::ridge(0.0).is_err());
        assert!(FitSpec::new(Penalty::None, 0.5).is_err());
        assert_eq!(FitSpec::new(Penalty::None, 0.0).unwrap(), FitSpec::ols());
    }

    #[test]
    fn rank_deficient_ols_is_min_norm() {
        // duplicated column: the solution splits the weight evenly
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let f = fit(&x, &y, &FitSpec::ols()).unwrap();
        assert!((f.beta[1] - 1.0).abs() < 1e-9 && (f.beta[2] - 1.0).abs() < 1e-9);
        // wide design, n < d
        let (x, y) = random_problem(3, 5, 9);
        let f = fit(&x, &y, &FitSpec::ols()).unwrap();
        assert!((predict(&f, &x).unwrap() - &y).amax() < 1e-8);
    }

    #[test]
    fn ridge_dual_matches_primal() {
        let (x, y) = random_problem(11, 6, 10);
        let spec = FitSpec::ridge(0.7).unwrap();
        let f = fit(&x, &y, &spec).unwrap();
        // primal on the same standardized problem
        let s = Standardizer::fit(&x, true);
        let z = s.transform(&x);
        let mut a = z.tr_mul(&z);
        for i in 1..10 {
            a[(i, i)] += 0.7;
        }
        let b = a.lu().solve(&z.tr_mul(&y)).unwrap();
        assert!((s.to_original(&b) - &f.beta).amax() < 1e-8);
    }

    #[test]
    fn ridge_near_zero_matches_ols() {
        let (x, y) = random_problem(5, 20, 4);
        let ols = fit(&x, &y, &FitSpec::ols()).unwrap();
        let ridge = fit(&x, &y, &FitSpec::ridge(1e-12).unwrap()).unwrap();
        assert!((ols.beta - ridge.beta).amax() < 1e-8);
    }

    #[test]
    fn lasso_objective_monotone_and_converges() {
        let (x, y) = random_problem(9, 30, 6);
        let f = fit(&x, &y, &FitSpec::lasso(0.8).unwrap()).unwrap();
        assert!(f.converged);
        assert!(f.objective_path.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn lasso_nonconvergence_is_flagged() {
        let (x, y) = random_problem(9, 30, 6);
        let mut spec = FitSpec::lasso(0.01).unwrap();
        spec.max_iter = 1;
        spec.tol = 1e-15;
        let f = fit(&x, &y, &spec).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 1);
    }

    #[test]
    fn penalized_intercept_switch() {
        let (x, y) = line();
        let mut spec = FitSpec::ridge(1e9).unwrap();
        spec.penalize_intercept = true;
        let f = fit(&x, &y, &spec).unwrap();
        assert!(f.beta[0].abs() < 1e-3);
    }

    #[test]
    fn errors() {
        let (x, y) = line();
        assert!(fit(&x, &DVector::zeros(2), &FitSpec::ols()).is_err());
        let mut bad = x.clone();
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(fit(&bad, &y, &FitSpec::ols()), Err(Error::NonFinite(_))));
        let f = fit(&x, &y, &FitSpec::ols()).unwrap();
        assert!(predict(&f, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn mse_examples() {
        let v = |s: &[f64]| DVector::from_vec(s.to_vec());
        assert_eq!(mse(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 1.0);
        assert!((mse(&v(&[1.0, 2.0, 3.0]), &v(&[1.0, 1.0, 1.0])).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(mse(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn predict_examples() {
        let f = FitResult {
            beta: DVector::from_vec(vec![0.0, 2.0]),
            penalty: Penalty::None,
            lambda: 0.0,
            converged: true,
            iterations: 1,
            objective: 0.0,
            objective_path: vec![],
        };
        let p = predict(&f, &DMatrix::from_row_slice(1, 2, &[1.0, 3.0])).unwrap();
        assert_eq!(p[0], 6.0);
        let zero = FitResult { beta: DVector::zeros(2), ..f };
        assert!(predict(&zero, &DMatrix::from_element(3, 2, 5.0)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_errors_on_known_case() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 2.0, 4.0]);
        let f = fit(&x, &y, &FitSpec::ols()).unwrap();
        let se = ols_standard_errors(&x, &y, &f.beta).unwrap();
        // slope 0.9, residual SS 0.7, s^2 = 0.35, Sxx = 5
        assert!((f.beta[1] - 0.9).abs() < 1e-12);
        assert!((se[1] - (0.35f64 / 5.0).sqrt()).abs() < 1e-12);
    }
}
