//! Principal component reduction and linear mixed-effects models with crossed
//! random intercepts for subjects and items, fit by maximum likelihood.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Measure;
use crate::error::{Error, Result};
use crate::evaluation::{fold_seed, mean_std, stack_docs, CvResult, Folds, Significance};
use crate::predictors::{DesignMatrix, PredictorConfig};
use crate::regression::{mse, Penalty};

/// Default number of retained components.
pub const DEFAULT_PCA_K: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// Orthonormal directions, one per column (`d x k`).
    pub components: DMatrix<f64>,
    /// Sample variance of each component's scores, non-increasing.
    pub explained_variance: Vec<f64>,
    pub k: usize,
}

/// Top-`k` principal directions of the column-centered data. The sign of each
/// direction makes its largest-magnitude loading positive.
pub fn pca_fit(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "PCA with k = {k} needs 1 <= k <= min(n, d) = {}",
            n.min(d)
        )));
    }
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x.clone();
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Singular("PCA decomposition failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut components = DMatrix::zeros(d, k);
    let mut explained_variance = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut dir: DVector<f64> = v_t.row(i).transpose();
        let pivot = dir.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            dir.neg_mut();
        }
        components.set_column(c, &dir);
        explained_variance.push(svd.singular_values[i].powi(2) / (n - 1) as f64);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        k,
    })
}

/// Scores `(X - mean) G`.
pub fn pca_project(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::Dimension {
            expected: model.mean.len(),
            got: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for j in 0..x.ncols() {
        centered.column_mut(j).add_scalar_mut(-model.mean[j]);
    }
    Ok(centered * &model.components)
}

/// Elbow of a scree curve: the component count whose point lies farthest
/// from the chord joining the first and last explained variances.
pub fn scree_elbow(explained: &[f64]) -> usize {
    let m = explained.len();
    if m < 3 {
        return m;
    }
    let (x0, y0) = (0.0, explained[0]);
    let (x1, y1) = ((m - 1) as f64, explained[m - 1]);
    let norm = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &y) in explained.iter().enumerate() {
        let dist = ((y1 - y0) * i as f64 - (x1 - x0) * y + x1 * y0 - y1 * x0).abs() / norm;
        if dist > best.1 {
            best = (i, dist);
        }
    }
    best.0 + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmOptions {
    /// Absolute tolerance on the log-likelihood spread of the simplex.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for LmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_evals: 2000,
        }
    }
}

/// A fixed-effects design with a subject and an item label per row.
#[derive(Debug, Clone)]
pub struct LmmSpec {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub options: LmmOptions,
}

impl LmmSpec {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        subject_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        for (what, len) in [("y", y.len()), ("subject ids", subject_ids.len()), ("item ids", item_ids.len())] {
            if len != n {
                return Err(Error::InvalidArgument(format!("{what}: {len} entries for {n} rows")));
            }
        }
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            x,
            y,
            feature_names,
            subject_ids,
            item_ids,
            options: LmmOptions::default(),
        })
    }

    /// Per-participant design: participants are subjects, documents items.
    pub fn from_design(dm: &DesignMatrix) -> Result<Self> {
        let subjects = dm
            .rows
            .iter()
            .map(|r| {
                r.participant.clone().ok_or_else(|| {
                    Error::InvalidArgument(format!("row of {} has no participant id", r.doc_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let items = dm.rows.iter().map(|r| r.doc_id.clone()).collect();
        let mut spec = Self::new(dm.x.clone(), dm.y.clone(), subjects, items)?;
        spec.feature_names = dm.feature_names.clone();
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub feature_names: Vec<String>,
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub var_subject: f64,
    pub var_item: f64,
    pub var_resid: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub evaluations: usize,
    /// At least one variance component sits at zero.
    pub at_boundary: bool,
    pub warnings: Vec<String>,
}

fn factor_codes(ids: &[String]) -> (Vec<usize>, usize) {
    let mut levels = BTreeMap::new();
    for id in ids {
        let next = levels.len();
        levels.entry(id.as_str()).or_insert(next);
    }
    (ids.iter().map(|id| levels[id.as_str()]).collect(), levels.len())
}

/// Sufficient statistics of the crossed random-intercept model.
struct Profile<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    subj: Vec<usize>,
    item: Vec<usize>,
    ns: usize,
    /// `Z'Z`, `q x q` with `q = subjects + items`.
    ztz: DMatrix<f64>,
    /// `Z'X`.
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
}

struct ProfileEval {
    loglik: f64,
    beta: DVector<f64>,
    sigma2: f64,
    xthx: DMatrix<f64>,
}

impl<'a> Profile<'a> {
    fn new(spec: &'a LmmSpec) -> Self {
        let (subj, ns) = factor_codes(&spec.subject_ids);
        let (item, ni) = factor_codes(&spec.item_ids);
        let q = ns + ni;
        let p = spec.x.ncols();
        let mut ztz = DMatrix::zeros(q, q);
        let mut ztx = DMatrix::zeros(q, p);
        let mut zty = DVector::zeros(q);
        for r in 0..spec.x.nrows() {
            let (a, b) = (subj[r], ns + item[r]);
            ztz[(a, a)] += 1.0;
            ztz[(b, b)] += 1.0;
            ztz[(a, b)] += 1.0;
            ztz[(b, a)] += 1.0;
            for j in 0..p {
                ztx[(a, j)] += spec.x[(r, j)];
                ztx[(b, j)] += spec.x[(r, j)];
            }
            zty[a] += spec.y[r];
            zty[b] += spec.y[r];
        }
        Self {
            x: &spec.x,
            y: &spec.y,
            subj,
            item,
            ns,
            ztz,
            ztx,
            zty,
            xtx: spec.x.transpose() * &spec.x,
            xty: spec.x.transpose() * &spec.y,
        }
    }

    fn q(&self) -> usize {
        self.ztz.nrows()
    }

    fn zt(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.q());
        for (r, &val) in v.iter().enumerate() {
            out[self.subj[r]] += val;
            out[self.ns + self.item[r]] += val;
        }
        out
    }

    /// Profiled log-likelihood at variance ratios `theta` (random variance
    /// over residual variance). Uses `H = I + Z diag(theta) Z'` through the
    /// Woodbury identity with `M = I + D Z'Z D`, `D = diag(sqrt theta)`.
    fn eval(&self, theta_s: f64, theta_i: f64) -> Result<ProfileEval> {
        let q = self.q();
        let n = self.x.nrows() as f64;
        let dvec = DVector::from_fn(q, |k, _| if k < self.ns { theta_s.sqrt() } else { theta_i.sqrt() });
        let mut m = self.ztz.clone();
        for a in 0..q {
            for b in 0..q {
                m[(a, b)] *= dvec[a] * dvec[b];
            }
            m[(a, a)] += 1.0;
        }
        let chol = Cholesky::new(m).ok_or_else(|| Error::Singular("random-effects system".into()))?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut a = self.ztx.clone();
        for r in 0..q {
            a.row_mut(r).scale_mut(dvec[r]);
        }
        let c = self.zty.component_mul(&dvec);
        let minv_a = chol.solve(&a);
        let xthx = &self.xtx - a.transpose() * &minv_a;
        let xthy = &self.xty - minv_a.transpose() * &c;
        let beta = Cholesky::new(xthx.clone()).ok_or_else(|| Error::Singular("fixed-effects design".into()))?.solve(&xthy);
        let r = self.y - self.x * &beta;
        let dzr = self.zt(&r).component_mul(&dvec);
        let rhr = r.norm_squared() - dzr.dot(&chol.solve(&dzr));
        let sigma2 = (rhr / n).max(f64::MIN_POSITIVE);
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln() + 1.0) - 0.5 * logdet;
        Ok(ProfileEval {
            loglik,
            beta,
            sigma2,
            xthx,
        })
    }
}

/// Nelder-Mead minimization of `f` from `x0` with initial step `step`.
/// Returns the best point, its value, the evaluation count and whether the
/// simplex collapsed within tolerance before `max_evals`.
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    ftol: f64,
    xtol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    let mut converged = false;
    while evals < max_evals {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();
        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() <= ftol && size <= xtol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(p, b)| b + 0.5 * (p - b))
                        .collect();
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best], evals, converged)
}

const LOG_THETA_MIN: f64 = -30.0;
const LOG_THETA_MAX: f64 = 20.0;

fn theta_of(log_theta: f64) -> f64 {
    if log_theta <= LOG_THETA_MIN {
        0.0
    } else {
        log_theta.min(LOG_THETA_MAX).exp()
    }
}

/// Maximum-likelihood fit. Interior optima are searched by Nelder-Mead over
/// the log variance ratios; the boundary models (either or both random
/// variances zero) are fit as well and the highest likelihood is kept.
pub fn lmm_fit(spec: &LmmSpec) -> Result<LmmFit> {
    let (n, p) = spec.x.shape();
    if spec.y.len() != n || spec.subject_ids.len() != n || spec.item_ids.len() != n {
        return Err(Error::InvalidArgument("LMM inputs have inconsistent lengths".into()));
    }
    let prof = Profile::new(spec);
    let ni = prof.q() - prof.ns;
    if prof.ns < 2 || ni < 2 {
        return Err(Error::InvalidArgument(format!(
            "LMM needs at least 2 subjects and 2 items (got {} and {ni})",
            prof.ns
        )));
    }
    if n <= p || spec.x.clone().svd(false, false).rank(1e-10 * spec.x.norm().max(1.0)) < p {
        return Err(Error::Singular("fixed-effects design is rank deficient".into()));
    }
    let opts = &spec.options;
    let mut evaluations = 0usize;
    let mut all_converged = true;
    let mut candidates: Vec<(f64, f64, f64)> = Vec::new();
    let mut push = |ts: f64, ti: f64, ll: f64| candidates.push((ts, ti, ll));

    push(0.0, 0.0, prof.eval(0.0, 0.0)?.loglik);
    let neg = |ts: f64, ti: f64| prof.eval(ts, ti).map(|e| -e.loglik).unwrap_or(f64::INFINITY);

    for which in 0..2 {
        let mut f = |v: &[f64]| {
            let t = theta_of(v[0]);
            if which == 0 {
                neg(t, 0.0)
            } else {
                neg(0.0, t)
            }
        };
        let (x, v, e, c) = nelder_mead(&mut f, &[0.0], 1.0, opts.tol, 1e-8, opts.max_evals);
        evaluations += e;
        all_converged &= c;
        let t = theta_of(x[0]);
        if which == 0 {
            push(t, 0.0, -v);
        } else {
            push(0.0, t, -v);
        }
    }

    let mut f2 = |v: &[f64]| neg(theta_of(v[0]), theta_of(v[1]));
    let (x, _, e, c) = nelder_mead(&mut f2, &[0.0, 0.0], 1.0, opts.tol, 1e-8, opts.max_evals);
    evaluations += e;
    // restart from the optimum to guard against premature simplex collapse
    let (x, v, e2, c2) = nelder_mead(&mut f2, &x, 0.5, opts.tol, 1e-8, opts.max_evals);
    evaluations += e2;
    all_converged &= c && c2;
    push(theta_of(x[0]), theta_of(x[1]), -v);

    let (ts, ti, _) = candidates
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64, f64)>, c| match best {
            Some(b) if b.2 >= c.2 => Some(b),
            _ => Some(c),
        })
        .unwrap();
    let best = prof.eval(ts, ti)?;
    let cov = best
        .xthx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("fixed-effects covariance".into()))?
        * best.sigma2;
    let mut warnings = Vec::new();
    if prof.ns == n {
        warnings.push("every subject has a single row: subject variance is not identifiable".to_string());
    }
    if ni == n {
        warnings.push("every item has a single row: item variance is not identifiable".to_string());
    }
    if !all_converged {
        warnings.push(format!("optimizer stopped at {} evaluations", opts.max_evals));
    }
    Ok(LmmFit {
        feature_names: spec.feature_names.clone(),
        beta: best.beta.iter().copied().collect(),
        beta_se: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        var_subject: ts * best.sigma2,
        var_item: ti * best.sigma2,
        var_resid: best.sigma2,
        log_likelihood: best.loglik,
        converged: all_converged && best.loglik.is_finite(),
        evaluations,
        at_boundary: ts == 0.0 || ti == 0.0,
        warnings,
    })
}

/// Marginal log-likelihood at arbitrary parameters.
pub fn lmm_log_likelihood(
    spec: &LmmSpec,
    beta: &[f64],
    var_subject: f64,
    var_item: f64,
    var_resid: f64,
) -> Result<f64> {
    if var_resid <= 0.0 || var_subject < 0.0 || var_item < 0.0 {
        return Err(Error::InvalidArgument("variances must be non-negative, residual positive".into()));
    }
    let prof = Profile::new(spec);
    let (ts, ti) = (var_subject / var_resid, var_item / var_resid);
    let q = prof.q();
    let n = spec.x.nrows() as f64;
    let dvec = DVector::from_fn(q, |k, _| if k < prof.ns { ts.sqrt() } else { ti.sqrt() });
    let mut m = prof.ztz.clone();
    for a in 0..q {
        for b in 0..q {
            m[(a, b)] *= dvec[a] * dvec[b];
        }
        m[(a, a)] += 1.0;
    }
    let chol = Cholesky::new(m).ok_or_else(|| Error::Singular("random-effects system".into()))?;
    let logdet_h: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let r = &spec.y - &spec.x * DVector::from_column_slice(beta);
    let dzr = prof.zt(&r).component_mul(&dvec);
    let rhr = r.norm_squared() - dzr.dot(&chol.solve(&dzr));
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI * var_resid).ln() + logdet_h + rhr / var_resid))
}

/// Fixed-effects prediction `X beta`; random effects are left out.
pub fn lmm_predict_fixed(fit: &LmmFit, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != fit.beta.len() {
        return Err(Error::Dimension {
            expected: fit.beta.len(),
            got: x.ncols(),
        });
    }
    Ok(x * DVector::from_column_slice(&fit.beta))
}

/// True for the pooled-representation columns of a design (`h<layer>_<k>`).
pub fn is_representation_column(name: &str) -> bool {
    name.strip_prefix('h')
        .and_then(|rest| rest.split_once('_'))
        .is_some_and(|(l, k)| {
            !l.is_empty() && !k.is_empty() && l.bytes().all(|b| b.is_ascii_digit()) && k.bytes().all(|b| b.is_ascii_digit())
        })
}

/// Replaces the representation columns of `train` and `test` with their
/// scores on a PCA fit to the training rows only. The component count is
/// clamped to `min(k, d, n_train - 1)`.
pub fn reduce_representation(
    train: &DesignMatrix,
    test: &DesignMatrix,
    k: usize,
) -> Result<(DesignMatrix, DesignMatrix)> {
    let rep: Vec<usize> = (0..train.n_cols())
        .filter(|&j| is_representation_column(&train.feature_names[j]))
        .collect();
    if rep.is_empty() {
        return Ok((train.clone(), test.clone()));
    }
    let keep: Vec<usize> = (0..train.n_cols()).filter(|j| !rep.contains(j)).collect();
    let k = k.min(rep.len()).min(train.n_rows().saturating_sub(1)).max(1);
    let pca = pca_fit(&train.x.select_columns(&rep), k)?;
    let reduce = |dm: &DesignMatrix| -> Result<DesignMatrix> {
        let scores = pca_project(&pca, &dm.x.select_columns(&rep))?;
        let fixed = dm.x.select_columns(&keep);
        let mut x = DMatrix::zeros(dm.n_rows(), keep.len() + k);
        x.columns_mut(0, keep.len()).copy_from(&fixed);
        x.columns_mut(keep.len(), k).copy_from(&scores);
        let mut names: Vec<String> = keep.iter().map(|&j| dm.feature_names[j].clone()).collect();
        names.extend((0..k).map(|c| format!("pc{c}")));
        Ok(DesignMatrix {
            x,
            y: dm.y.clone(),
            feature_names: names,
            rows: dm.rows.clone(),
            provenance: dm.provenance.clone(),
        })
    };
    Ok((reduce(train)?, reduce(test)?))
}

/// Cross-validated fixed-effects MSE of the LMM path: per fold, PCA on the
/// training rows, an unpenalized ML fit, and fixed-effects predictions for
/// the held-out documents. With `permute_seed`, training responses are
/// shuffled exactly as in the regression permutation control.
pub fn lmm_fold_mses(
    docs: &[DesignMatrix],
    folds: &Folds,
    pca_k: usize,
    options: &LmmOptions,
    permute_seed: Option<u64>,
) -> Result<Vec<f64>> {
    if docs.len() != folds.fold_of_doc.len() {
        return Err(Error::Dimension {
            expected: folds.fold_of_doc.len(),
            got: docs.len(),
        });
    }
    (0..folds.k)
        .map(|f| {
            let (train_idx, test_idx) = folds.split(f);
            let mut train = stack_docs(docs, &train_idx)?;
            let test = stack_docs(docs, &test_idx)?;
            if let Some(seed) = permute_seed {
                let mut y: Vec<f64> = train.y.iter().copied().collect();
                y.shuffle(&mut ChaCha8Rng::seed_from_u64(fold_seed(seed, f)));
                train.y = DVector::from_vec(y);
            }
            let (train, test) = reduce_representation(&train, &test, pca_k)?;
            let mut spec = LmmSpec::from_design(&train)?;
            spec.options = options.clone();
            let fit = lmm_fit(&spec)?;
            mse(&test.y, &lmm_predict_fixed(&fit, &test.x)?)
        })
        .collect()
}

/// LMM counterpart of [`crate::evaluation::evaluate`].
pub fn lmm_evaluate(
    docs: &[DesignMatrix],
    config: PredictorConfig,
    measure: Measure,
    folds: &Folds,
    pca_k: usize,
    options: &LmmOptions,
    permutation_seed: u64,
) -> Result<CvResult> {
    let fold_mses = lmm_fold_mses(docs, folds, pca_k, options, None)?;
    let permuted_fold_mses = lmm_fold_mses(docs, folds, pca_k, options, Some(permutation_seed))?;
    let (mean_mse, std_mse) = mean_std(&fold_mses);
    Ok(CvResult {
        config,
        measure,
        fold_mses,
        mean_mse,
        std_mse,
        permuted_fold_mses,
        significance: Significance::default(),
        chosen_penalty: Penalty::None,
        chosen_lambda: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pca_axis_aligned() {
        // sample variances 4 and 1
        let (a, b) = (6f64.sqrt(), 1.5f64.sqrt());
        let x = DMatrix::from_row_slice(4, 2, &[-a, 0.0, a, 0.0, 0.0, -b, 0.0, b]);
        let m = pca_fit(&x, 2).unwrap();
        assert!((m.explained_variance[0] - 4.0).abs() < 1e-12);
        assert!((m.explained_variance[1] - 1.0).abs() < 1e-12);
        assert!((m.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((m.components[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_reconstruction_and_orthonormality() {
        let x = random_matrix(30, 6, 1);
        let m = pca_fit(&x, 6).unwrap();
        let g = &m.components;
        assert!((g.transpose() * g - DMatrix::identity(6, 6)).amax() < 1e-8);
        let scores = pca_project(&m, &x).unwrap();
        let mut recon = &scores * g.transpose();
        for j in 0..6 {
            recon.column_mut(j).add_scalar_mut(m.mean[j]);
        }
        assert!((recon - &x).amax() < 1e-8);
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..6 {
            assert!(scores.column(j).mean().abs() < 1e-9);
        }
        let cov = scores.transpose() * &scores / 29.0;
        for a in 0..6 {
            for b in 0..6 {
                if a != b {
                    assert!(cov[(a, b)].abs() < 1e-6);
                }
            }
            assert!((cov[(a, a)] - m.explained_variance[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_rejects_bad_inputs() {
        let x = random_matrix(5, 3, 2);
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 4).is_err());
        assert!(pca_fit(&x.rows(0, 1).into_owned(), 1).is_err());
        let m = pca_fit(&x, 2).unwrap();
        assert!(pca_project(&m, &random_matrix(2, 4, 3)).is_err());
        let mean_rows = DMatrix::from_fn(3, 3, |_, j| m.mean[j]);
        assert!(pca_project(&m, &mean_rows).unwrap().amax() < 1e-15);
    }

    #[test]
    fn elbow_of_sharp_knee() {
        assert_eq!(scree_elbow(&[10.0, 9.0, 8.0, 1.0, 0.9, 0.8, 0.7]), 4);
        assert_eq!(scree_elbow(&[3.0, 1.0]), 2);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let mut f = |v: &[f64]| (v[0] - 1.0).powi(2) + 3.0 * (v[1] + 2.0).powi(2);
        let (x, v, _, c) = nelder_mead(&mut f, &[0.0, 0.0], 1.0, 1e-14, 1e-8, 5000);
        assert!(c);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 2.0).abs() < 1e-6 && v < 1e-12);
    }

    fn simulate(seed: u64, vs: f64, vi: f64, ve: f64, ns: usize, ni: usize, n: usize) -> LmmSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).unwrap();
        let b: Vec<f64> = (0..ns).map(|_| vs.sqrt() * std.sample(&mut rng)).collect();
        let u: Vec<f64> = (0..ni).map(|_| vi.sqrt() * std.sample(&mut rng)).collect();
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { std.sample(&mut rng) });
        let subj: Vec<String> = (0..n).map(|r| format!("s{}", r % ns)).collect();
        let item: Vec<String> = (0..n).map(|r| format!("i{}", (r / ns) % ni)).collect();
        let y = DVector::from_fn(n, |r, _| {
            300.0 + 20.0 * x[(r, 1)] + b[r % ns] + u[(r / ns) % ni] + ve.sqrt() * std.sample(&mut rng)
        });
        LmmSpec::new(x, y, subj, item).unwrap()
    }

    #[test]
    fn zero_random_variance_matches_ols() {
        let spec = simulate(4, 0.0, 0.0, 900.0, 20, 10, 400);
        let fit = lmm_fit(&spec).unwrap();
        let ols = crate::regression::min_norm_least_squares(&spec.x, &spec.y);
        for j in 0..2 {
            assert!((fit.beta[j] - ols[j]).abs() < 2.0 * fit.beta_se[j]);
        }
        assert!(fit.var_subject < 0.05 * fit.var_resid);
        assert!(fit.var_item < 0.05 * fit.var_resid);
        let ols_fit = LmmFit {
            beta: ols.iter().copied().collect(),
            ..fit.clone()
        };
        let p1 = lmm_predict_fixed(&fit, &spec.x).unwrap();
        let p2 = lmm_predict_fixed(&ols_fit, &spec.x).unwrap();
        assert!((p1 - p2).amax() < 5.0);
    }

    #[test]
    fn loglik_certificate_and_consistency() {
        let spec = simulate(5, 400.0, 100.0, 900.0, 20, 10, 600);
        let fit = lmm_fit(&spec).unwrap();
        assert!(fit.converged);
        let direct = lmm_log_likelihood(&spec, &fit.beta, fit.var_subject, fit.var_item, fit.var_resid).unwrap();
        assert!((direct - fit.log_likelihood).abs() < 1e-6 * direct.abs());
        let ols = crate::regression::min_norm_least_squares(&spec.x, &spec.y);
        let rss = (&spec.y - &spec.x * &ols).norm_squared() / spec.y.len() as f64;
        let base = lmm_log_likelihood(&spec, ols.as_slice(), 0.0, 0.0, rss).unwrap();
        assert!(fit.log_likelihood >= base - 1e-6);
    }

    #[test]
    fn relabeling_invariance() {
        let spec = simulate(6, 300.0, 150.0, 900.0, 12, 8, 480);
        let mut relabeled = spec.clone();
        relabeled.subject_ids = spec.subject_ids.iter().map(|s| format!("z{}", 100 - s[1..].parse::<i32>().unwrap())).collect();
        relabeled.item_ids = spec.item_ids.iter().map(|s| format!("q{}", s.len() * 7 + s[1..].parse::<usize>().unwrap() * 3)).collect();
        let a = lmm_fit(&spec).unwrap();
        let b = lmm_fit(&relabeled).unwrap();
        assert!((a.var_subject - b.var_subject).abs() < 1e-4 * a.var_subject.max(1.0));
        assert!((a.var_item - b.var_item).abs() < 1e-4 * a.var_item.max(1.0));
        assert!((a.var_resid - b.var_resid).abs() < 1e-6 * a.var_resid);
    }

    #[test]
    fn one_row_per_subject_is_flagged() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(n, 1, |_, _| 1.0);
        let y = DVector::from_fn(n, |_, _| rng.random_range(0.0..10.0));
        let subj = (0..n).map(|r| format!("s{r}")).collect();
        let item = (0..n).map(|r| format!("i{}", r % 4)).collect();
        let fit = lmm_fit(&LmmSpec::new(x, y, subj, item).unwrap()).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("subject variance is not identifiable")));
    }

    #[test]
    fn predict_shapes_and_shift() {
        let spec = simulate(8, 200.0, 50.0, 400.0, 10, 5, 200);
        let fit = lmm_fit(&spec).unwrap();
        assert!(lmm_predict_fixed(&fit, &DMatrix::zeros(3, 3)).is_err());
        let zero = LmmFit {
            beta: vec![0.0; 2],
            ..fit.clone()
        };
        assert_eq!(lmm_predict_fixed(&zero, &spec.x).unwrap().amax(), 0.0);
        let mut shifted = spec.clone();
        shifted.y.add_scalar_mut(17.0);
        let g = lmm_fit(&shifted).unwrap();
        let d = lmm_predict_fixed(&g, &spec.x).unwrap() - lmm_predict_fixed(&fit, &spec.x).unwrap();
        assert!(d.iter().all(|v| (v - 17.0).abs() < 1e-6));
    }

    #[test]
    fn too_few_levels() {
        let spec = simulate(9, 1.0, 1.0, 1.0, 1, 5, 20);
        assert!(lmm_fit(&spec).is_err());
    }

    #[test]
    fn representation_column_names() {
        assert!(is_representation_column("h3_0"));
        assert!(is_representation_column("h12_255"));
        assert!(!is_representation_column("h3"));
        assert!(!is_representation_column("length"));
        assert!(!is_representation_column("hx_1"));
    }
}
