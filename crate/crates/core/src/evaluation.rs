//! Tuning, document-partitioned cross-validation, permutation controls and
//! significance marks.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Measure;
use crate::error::{Error, Result};
use crate::predictors::{DesignMatrix, Family, PredictorConfig};
use crate::regression::{fit, mse, predict, FitSpec, Penalty};

/// Significance level of every one-sided comparison.
pub const ALPHA: f64 = 0.001;

/// Candidate penalty weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid(pub Vec<f64>);

impl LambdaGrid {
    /// `points` log-spaced values from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && points >= 1) {
            return Err(Error::InvalidArgument(format!(
                "bad grid [{lo}, {hi}] x {points}"
            )));
        }
        if points == 1 {
            return Ok(Self(vec![lo]));
        }
        let (a, b) = (lo.log10(), hi.log10());
        Ok(Self(
            (0..points)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
                .collect(),
        ))
    }

    pub fn single(lambda: f64) -> Self {
        Self(vec![lambda])
    }
}

impl Default for LambdaGrid {
    /// 20 points over `[0.001, 10]`.
    fn default() -> Self {
        Self::log_spaced(1e-3, 10.0, 20).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningChoice {
    pub config: PredictorConfig,
    pub measure: Measure,
    pub chosen_penalty: Penalty,
    pub chosen_lambda: f64,
    pub tuning_mse: f64,
    /// Every evaluated `(penalty, lambda, test MSE)`, in evaluation order.
    pub candidates: Vec<(Penalty, f64, f64)>,
}

impl TuningChoice {
    pub fn fit_spec(&self) -> FitSpec {
        FitSpec::new(self.chosen_penalty, self.chosen_lambda)
            .expect("tuning only records valid penalty/lambda pairs")
    }

    /// A choice fixed in advance, without a tuning run.
    pub fn fixed(config: PredictorConfig, measure: Measure, spec: &FitSpec) -> Self {
        Self {
            config,
            measure,
            chosen_penalty: spec.penalty,
            chosen_lambda: spec.lambda,
            tuning_mse: f64::NAN,
            candidates: Vec::new(),
        }
    }
}

fn fit_and_score(train: &DesignMatrix, test: &DesignMatrix, spec: &FitSpec) -> Result<f64> {
    let f = fit(&train.x, &train.y, spec)?;
    mse(&test.y, &predict(&f, &test.x)?)
}

/// Picks the penalty and weight with the lowest test MSE. Candidates are
/// visited as: unpenalized, ridge by increasing lambda, LASSO by increasing
/// lambda; the first minimum wins, so ties go to the simpler model.
pub fn tune(
    config: &PredictorConfig,
    measure: Measure,
    train: &DesignMatrix,
    test: &DesignMatrix,
    grid: &LambdaGrid,
    penalties: &[Penalty],
) -> Result<TuningChoice> {
    if train.n_rows() == 0 || test.n_rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate tuning split: {} train rows, {} test rows",
            train.n_rows(),
            test.n_rows()
        )));
    }
    let mut lambdas = grid.0.clone();
    lambdas.sort_by(f64::total_cmp);
    let mut specs = Vec::new();
    for p in [Penalty::None, Penalty::Ridge, Penalty::Lasso] {
        if !penalties.contains(&p) {
            continue;
        }
        if p == Penalty::None {
            specs.push(FitSpec::ols());
        } else {
            for &l in &lambdas {
                specs.push(FitSpec::new(p, l)?);
            }
        }
    }
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no tuning candidates".into()));
    }
    let mut candidates = Vec::with_capacity(specs.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, spec) in specs.iter().enumerate() {
        let score = fit_and_score(train, test, spec)?;
        candidates.push((spec.penalty, spec.lambda, score));
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((i, score));
        }
    }
    let (i, score) = best.unwrap();
    Ok(TuningChoice {
        config: *config,
        measure,
        chosen_penalty: specs[i].penalty,
        chosen_lambda: specs[i].lambda,
        tuning_mse: score,
        candidates,
    })
}

/// Fold index of every document. Depends only on the document list, `k`
/// and `seed`: documents are shuffled and dealt round-robin.
pub fn assign_folds(doc_ids: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > doc_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} folds need at least {k} documents (have {}) and k >= 2",
            doc_ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; doc_ids.len()];
    for (rank, &doc) in order.iter().enumerate() {
        folds[doc] = rank % k;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub vs_permuted: bool,
    pub vs_baseline: bool,
    /// Combined settings only.
    pub vs_representation: Option<bool>,
    /// Combined settings only: improvement over the scalar partner.
    pub vs_scalar: Option<bool>,
    pub p_permuted: Option<f64>,
    pub p_baseline: Option<f64>,
    pub p_representation: Option<f64>,
    pub p_scalar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: PredictorConfig,
    pub measure: Measure,
    pub fold_mses: Vec<f64>,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub permuted_fold_mses: Vec<f64>,
    pub significance: Significance,
    pub chosen_penalty: Penalty,
    pub chosen_lambda: f64,
}

/// Mean and sample standard deviation (`n - 1`); the deviation is 0 for a
/// single value.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cross-validation layout: documents with their fold index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    pub k: usize,
    pub fold_of_doc: Vec<usize>,
}

impl Folds {
    pub fn new(doc_ids: &[String], k: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            k,
            fold_of_doc: assign_folds(doc_ids, k, seed)?,
        })
    }

    /// `(train, held-out)` document indices of fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of_doc.len()).partition(|&d| self.fold_of_doc[d] != f)
    }
}

pub(crate) fn stack_docs(docs: &[DesignMatrix], idx: &[usize]) -> Result<DesignMatrix> {
    let parts: Vec<&DesignMatrix> = idx.iter().map(|&i| &docs[i]).collect();
    DesignMatrix::stack(&parts)
}

/// Per-fold seed for the permutation of training responses.
pub(crate) fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_folds(
    docs: &[DesignMatrix],
    folds: &Folds,
    spec: &FitSpec,
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
            if test.n_rows() == 0 {
                return Err(Error::InvalidArgument(format!(
                    "fold {f} has no held-out rows"
                )));
            }
            fit_and_score(&train, &test, spec)
        })
        .collect()
}

fn cv_result(choice: &TuningChoice, fold_mses: Vec<f64>) -> CvResult {
    let (mean_mse, std_mse) = mean_std(&fold_mses);
    CvResult {
        config: choice.config,
        measure: choice.measure,
        fold_mses,
        mean_mse,
        std_mse,
        permuted_fold_mses: Vec::new(),
        significance: Significance::default(),
        chosen_penalty: choice.chosen_penalty,
        chosen_lambda: choice.chosen_lambda,
    }
}

/// K-fold cross-validation over documents: each fold refits with the tuned
/// penalty on the other folds and scores its own documents. `docs` holds one
/// design matrix per experiment document, in the order `folds` refers to.
pub fn crossvalidate(docs: &[DesignMatrix], choice: &TuningChoice, folds: &Folds) -> Result<CvResult> {
    let fold_mses = run_folds(docs, folds, &choice.fit_spec(), None)?;
    Ok(cv_result(choice, fold_mses))
}

/// Same folds and penalty as [`crossvalidate`], but training responses are
/// shuffled across all training rows of each fold (one seeded permutation
/// per fold). Held-out responses are untouched.
pub fn permutation_control(
    docs: &[DesignMatrix],
    choice: &TuningChoice,
    folds: &Folds,
    seed: u64,
) -> Result<CvResult> {
    let fold_mses = run_folds(docs, folds, &choice.fit_spec(), Some(seed))?;
    Ok(cv_result(choice, fold_mses))
}

/// Cross-validation plus its permutation control in one result.
pub fn evaluate(
    docs: &[DesignMatrix],
    choice: &TuningChoice,
    folds: &Folds,
    permutation_seed: u64,
) -> Result<CvResult> {
    let mut res = crossvalidate(docs, choice, folds)?;
    res.permuted_fold_mses = permutation_control(docs, choice, folds, permutation_seed)?.fold_mses;
    Ok(res)
}

/// Per-fold `target - baseline` MSE differences: mean and sample sd.
/// Negative means the target predicts better.
pub fn delta_mse(target: &CvResult, baseline: &CvResult) -> Result<(f64, f64)> {
    if target.fold_mses.len() != baseline.fold_mses.len() || target.measure != baseline.measure {
        return Err(Error::InvalidArgument(format!(
            "fold mismatch: {} vs {} folds ({} vs {})",
            target.fold_mses.len(),
            baseline.fold_mses.len(),
            target.measure,
            baseline.measure
        )));
    }
    let d: Vec<f64> = target
        .fold_mses
        .iter()
        .zip(&baseline.fold_mses)
        .map(|(t, b)| t - b)
        .collect();
    Ok(mean_std(&d))
}

/// One-sided paired t-test of `a < b`: the probability under `t_{K-1}` of a
/// statistic at most as large as the observed one. Zero-variance differences
/// give 0 for a negative mean and 1 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs K >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&d);
    if sd == 0.0 || !sd.is_finite() {
        return Ok(if mean < 0.0 { 0.0 } else { 1.0 });
    }
    let k = d.len() as f64;
    let t = mean / (sd / k.sqrt());
    Ok(student_t_cdf(t, k - 1.0))
}

/// CDF of Student's t through the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * statrs::function::beta::beta_reg(df / 2.0, 0.5, x);
    if t < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn key(family: Family, layer: Option<usize>) -> (Family, Option<usize>) {
    (family, layer)
}

/// Sets the significance flags of every result for one measure and
/// language: vs. its permutation control, vs. baseline, and for combined
/// settings vs. the representation and scalar partners at the same layer.
pub fn mark_significance(results: &mut [CvResult]) -> Result<()> {
    let index: HashMap<(Family, Option<usize>), usize> = results
        .iter()
        .enumerate()
        .map(|(i, r)| (key(r.config.family, r.config.layer), i))
        .collect();
    let baseline = *index
        .get(&key(Family::Baseline, None))
        .ok_or_else(|| Error::InvalidArgument("missing baseline result".into()))?;
    let partner = |family: Family, layer: Option<usize>, what: &str| -> Result<usize> {
        index.get(&key(family, layer)).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "missing {what} partner {family}{}",
                layer.map(|l| format!("@{l}")).unwrap_or_default()
            ))
        })
    };
    let mut updates = Vec::with_capacity(results.len());
    for r in results.iter() {
        let mut s = Significance::default();
        if !r.permuted_fold_mses.is_empty() {
            let p = paired_t_test(&r.fold_mses, &r.permuted_fold_mses)?;
            s.p_permuted = Some(p);
            s.vs_permuted = p < ALPHA;
        }
        let p = paired_t_test(&r.fold_mses, &results[baseline].fold_mses)?;
        s.p_baseline = Some(p);
        s.vs_baseline = p < ALPHA;
        if r.config.family.is_combined() {
            let rep = partner(Family::Representation, r.config.layer, "representation")?;
            let p = paired_t_test(&r.fold_mses, &results[rep].fold_mses)?;
            s.p_representation = Some(p);
            s.vs_representation = Some(p < ALPHA);
            let scalar_family = r.config.family.scalar_partner().unwrap();
            let scalar_layer = scalar_family.is_layerwise().then_some(r.config.layer).flatten();
            let sc = partner(scalar_family, scalar_layer, "scalar")?;
            let p = paired_t_test(&r.fold_mses, &results[sc].fold_mses)?;
            s.p_scalar = Some(p);
            s.vs_scalar = Some(p < ALPHA);
        }
        updates.push(s);
    }
    for (r, s) in results.iter_mut().zip(updates) {
        r.significance = s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{Provenance, RowId};
    use nalgebra::DMatrix;

    fn doc(id: usize, x: &[f64], y: &[f64]) -> DesignMatrix {
        let n = x.len();
        DesignMatrix {
            x: DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] }),
            y: DVector::from_vec(y.to_vec()),
            feature_names: vec!["intercept".into(), "x".into()],
            rows: (0..n)
                .map(|u| RowId {
                    doc_id: format!("d{id}"),
                    unit: Some(u),
                    participant: None,
                })
                .collect(),
            provenance: Provenance {
                family: Family::Surprisal,
                layer: None,
                measure: Measure::Ffd,
                doc_ids: vec![format!("d{id}")],
            },
        }
    }

    fn result(family: Family, layer: Option<usize>, folds: Vec<f64>) -> CvResult {
        let (mean_mse, std_mse) = mean_std(&folds);
        CvResult {
            config: PredictorConfig {
                family,
                layer,
                include_baseline: true,
            },
            measure: Measure::Ffd,
            fold_mses: folds,
            mean_mse,
            std_mse,
            permuted_fold_mses: vec![],
            significance: Significance::default(),
            chosen_penalty: Penalty::None,
            chosen_lambda: 0.0,
        }
    }

    #[test]
    fn default_grid_spans_range() {
        let g = LambdaGrid::default();
        assert_eq!(g.0.len(), 20);
        assert!((g.0[0] - 1e-3).abs() < 1e-15);
        assert!((g.0[19] - 10.0).abs() < 1e-12);
        assert!(g.0.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tune_prefers_ols_on_exact_data() {
        let train = doc(0, &[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]);
        let test = doc(1, &[5.0, 6.0], &[11.0, 13.0]);
        let cfg = PredictorConfig::new(Family::Surprisal, None).unwrap();
        let all = [Penalty::None, Penalty::Ridge, Penalty::Lasso];
        let c = tune(&cfg, Measure::Ffd, &train, &test, &LambdaGrid::default(), &all).unwrap();
        assert_eq!(c.chosen_penalty, Penalty::None);
        assert!(c.tuning_mse < 1e-20);
        assert_eq!(c.candidates.len(), 41);
    }

    #[test]
    fn tune_singleton_grid() {
        let train = doc(0, &[1.0, 2.0, 3.0, 4.0], &[3.0, 1.0, 7.0, 2.0]);
        let test = doc(1, &[5.0, 6.0], &[1.0, 13.0]);
        let cfg = PredictorConfig::new(Family::Surprisal, None).unwrap();
        let c = tune(&cfg, Measure::Ffd, &train, &test, &LambdaGrid::single(0.5), &[Penalty::Ridge]).unwrap();
        assert_eq!((c.chosen_penalty, c.chosen_lambda), (Penalty::Ridge, 0.5));
        let empty = DesignMatrix {
            x: DMatrix::zeros(0, 2),
            y: DVector::zeros(0),
            ..test.clone()
        };
        assert!(tune(&cfg, Measure::Ffd, &train, &empty, &LambdaGrid::single(0.5), &[Penalty::Ridge]).is_err());
    }

    #[test]
    fn folds_partition_documents() {
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let f = assign_folds(&ids, 10, 3).unwrap();
        let mut sorted = f.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(f, assign_folds(&ids, 10, 3).unwrap());
        assert!(assign_folds(&ids[..5], 10, 3).is_err());
        let f = assign_folds(&ids, 3, 1).unwrap();
        let count = |k| f.iter().filter(|&&v| v == k).count();
        assert_eq!((count(0), count(1), count(2)), (4, 3, 3));
    }

    #[test]
    fn perfect_predictions_give_zero_fold_mse() {
        let docs: Vec<DesignMatrix> = (0..10)
            .map(|i| {
                let x: Vec<f64> = (0..5).map(|u| (i * 5 + u) as f64).collect();
                let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
                doc(i, &x, &y)
            })
            .collect();
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let folds = Folds::new(&ids, 10, 0).unwrap();
        let cfg = PredictorConfig::new(Family::Surprisal, None).unwrap();
        let choice = TuningChoice::fixed(cfg, Measure::Ffd, &FitSpec::ols());
        let r = evaluate(&docs, &choice, &folds, 9).unwrap();
        assert!(r.fold_mses.iter().all(|&m| m < 1e-18));
        assert_eq!(r.fold_mses.len(), 10);
        assert_eq!(r.permuted_fold_mses.len(), 10);
    }

    #[test]
    fn constant_response_permutation_is_noop() {
        let docs: Vec<DesignMatrix> = (0..4)
            .map(|i| doc(i, &[1.0, 2.0 + i as f64, 0.5], &[7.0, 7.0, 7.0]))
            .collect();
        let ids: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
        let folds = Folds::new(&ids, 4, 0).unwrap();
        let cfg = PredictorConfig::new(Family::Surprisal, None).unwrap();
        let choice = TuningChoice::fixed(cfg, Measure::Ffd, &FitSpec::ridge(0.3).unwrap());
        let a = crossvalidate(&docs, &choice, &folds).unwrap();
        let b = permutation_control(&docs, &choice, &folds, 5).unwrap();
        assert_eq!(a.fold_mses, b.fold_mses);
    }

    #[test]
    fn single_training_row_permutation_is_identity() {
        let docs = vec![doc(0, &[1.0], &[3.0]), doc(1, &[2.0], &[5.0])];
        let ids = vec!["d0".to_string(), "d1".to_string()];
        let folds = Folds::new(&ids, 2, 0).unwrap();
        let cfg = PredictorConfig::new(Family::Surprisal, None).unwrap();
        let choice = TuningChoice::fixed(cfg, Measure::Ffd, &FitSpec::ols());
        let a = crossvalidate(&docs, &choice, &folds).unwrap();
        let b = permutation_control(&docs, &choice, &folds, 5).unwrap();
        assert_eq!(a.fold_mses, b.fold_mses);
    }

    #[test]
    fn delta_examples() {
        let b = result(Family::Baseline, None, vec![100.0, 100.0]);
        let t = result(Family::Surprisal, None, vec![90.0, 90.0]);
        assert_eq!(delta_mse(&t, &b).unwrap(), (-10.0, 0.0));
        assert_eq!(delta_mse(&b, &b).unwrap(), (0.0, 0.0));
        let short = result(Family::Surprisal, None, vec![90.0]);
        assert!(delta_mse(&short, &b).is_err());
    }

    #[test]
    fn t_test_degenerate_conventions() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(paired_t_test(&a, &a).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert_eq!(paired_t_test(&a, &b).unwrap(), 0.0);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn t_cdf_reference_points() {
        assert!((student_t_cdf(0.0, 4.0) - 0.5).abs() < 1e-15);
        // t_{0.975, 9} = 2.262157
        assert!((student_t_cdf(2.262157162798, 9.0) - 0.975).abs() < 1e-9);
        // t_1 is Cauchy
        assert!((student_t_cdf(1.0, 1.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn significance_marks() {
        let base = result(Family::Baseline, None, vec![10.0; 10]);
        let mut better = result(
            Family::Surprisal,
            None,
            (0..10).map(|i| 5.0 + 0.01 * i as f64).collect(),
        );
        better.permuted_fold_mses = (0..10).map(|i| 9.0 + 0.02 * i as f64).collect();
        let same = result(Family::Representation, Some(1), vec![10.0; 10]);
        let combo = result(Family::ReprSurprisal, Some(1), (0..10).map(|i| 4.0 + 0.03 * i as f64).collect());
        let mut rs = vec![base, better, same, combo];
        mark_significance(&mut rs).unwrap();
        assert!(rs[1].significance.vs_permuted);
        assert!(rs[1].significance.vs_baseline);
        assert!(!rs[2].significance.vs_baseline);
        assert_eq!(rs[3].significance.vs_representation, Some(true));
        assert!(rs[3].significance.vs_scalar.is_some());
        let mut missing = vec![result(Family::Surprisal, None, vec![1.0, 2.0])];
        assert!(mark_significance(&mut missing).is_err());
    }

    /// Composite Simpson integration of the t density on [-200, t] plus the
    /// closed-form tail beyond -200.
    fn t4_cdf_quadrature(t: f64) -> f64 {
        let dens = |x: f64| 3.0 / 8.0 * (1.0 + x * x / 4.0).powf(-2.5);
        let lo = -200.0;
        let n = 2_000_000;
        let h = (t - lo) / n as f64;
        let mut acc = dens(lo) + dens(t);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * dens(lo + i as f64 * h);
        }
        // tail of t_4: P(T < -a) = 1/2 - a(a^2 + 6) / (2 (a^2 + 4)^{3/2})
        let a: f64 = 200.0;
        let tail = 0.5 - a * (a * a + 6.0) / (2.0 * (a * a + 4.0).powf(1.5));
        acc * h / 3.0 + tail
    }

    #[test]
    fn t_test_matches_quadrature() {
        let d = [-2.0, -1.0, -3.0, -2.0, -2.0];
        let zeros = [0.0; 5];
        let p = paired_t_test(&d, &zeros).unwrap();
        let (m, s) = mean_std(&d);
        let t = m / (s / 5f64.sqrt());
        let oracle = t4_cdf_quadrature(t);
        assert!((p - oracle).abs() < 1e-9, "{p} vs {oracle}");
    }
}
