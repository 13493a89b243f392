//! Property tests for the invariants of each module.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtprobe_core::corpus::{
    aggregate, align_tokens_to_units, holdout_split, AlignmentMap, Measure, Measures, ReadingRecord,
    TokenizerMarkerRules,
};
use rtprobe_core::evaluation::{assign_folds, delta_mse, paired_t_test, CvResult, Folds, Significance};
use rtprobe_core::mixedmodel::{lmm_fit, lmm_log_likelihood, pca_fit, pca_project, LmmSpec};
use rtprobe_core::predictors::{
    baseline_features, build_design_matrix, information_value, pool_unit_representation, unit_surprisal,
    DocInputs, Family, PredictorConfig,
};
use rtprobe_core::regression::{fit, min_norm_least_squares, objective, predict, FitSpec, Penalty, Standardizer};
use rtprobe_core::synth::{generate, SynthConfig};
use rtprobe_core::trace::{read_trace, validate_trace, write_trace, DocumentTrace, Tensor, TraceManifest};

fn matrix(n: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |v| DMatrix::from_vec(n, p, v))
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Random trace document: `units` units of 1..=3 tokens each.
fn doc_strategy(layers: usize, d: usize, n_iv: usize) -> impl Strategy<Value = DocumentTrace> {
    prop::collection::vec(1usize..=3, 1..6)
        .prop_flat_map(move |sizes| {
            let t: usize = sizes.iter().sum();
            let u = sizes.len();
            (
                Just(sizes),
                prop::collection::vec(0.0f32..20.0, t),
                prop::collection::vec(0.0f32..20.0, t * layers),
                prop::collection::vec(-5.0f32..5.0, t * layers * d),
                prop::collection::vec(0.0f32..=2.0, u * layers * n_iv),
            )
        })
        .prop_map(move |(sizes, fin, lens, hid, iv)| {
            let mut tokens = Vec::new();
            let mut index = Vec::new();
            for (u, &s) in sizes.iter().enumerate() {
                for k in 0..s {
                    tokens.push(if k == 0 { format!("▁w{u}") } else { format!("p{k}") });
                    index.push(u);
                }
            }
            let t = tokens.len();
            DocumentTrace {
                doc_id: String::new(),
                tokens,
                unit_index_of_token: index,
                layers_exported: (1..=layers).collect(),
                final_surprisal: fin,
                logitlens_surprisal: Tensor::new(vec![t, layers], lens).unwrap(),
                hidden_states: Tensor::new(vec![t, layers, d], hid).unwrap(),
                iv_distances: Tensor::new(vec![sizes.len(), layers, n_iv], iv).unwrap(),
                has_eos_row: false,
            }
        })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn cv(mses: Vec<f64>, family: Family, layer: Option<usize>) -> CvResult {
    CvResult {
        config: PredictorConfig::new(family, layer).unwrap(),
        measure: Measure::Ffd,
        mean_mse: 0.0,
        std_mse: 0.0,
        fold_mses: mses,
        permuted_fold_mses: Vec::new(),
        significance: Significance::default(),
        chosen_penalty: Penalty::None,
        chosen_lambda: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_round_trip_is_bit_exact_and_ordered(docs in prop::collection::vec(doc_strategy(2, 3, 4), 1..4)) {
        let docs: Vec<DocumentTrace> = docs
            .into_iter()
            .enumerate()
            .map(|(i, mut d)| { d.doc_id = format!("z{}", 9 - i); d })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = TraceManifest::new("prop", 2, 3, 100, vec![1, 2], 4);
        write_trace(&manifest, &docs, dir.path()).unwrap();
        prop_assert!(validate_trace(dir.path()).unwrap().is_clean());
        let reader = read_trace(dir.path()).unwrap();
        let back: Vec<DocumentTrace> = reader.documents().map(Result::unwrap).collect();
        prop_assert_eq!(back.len(), docs.len());
        for (a, b) in docs.iter().zip(&back) {
            prop_assert_eq!(&a.doc_id, &b.doc_id);
            prop_assert_eq!(&a.tokens, &b.tokens);
            prop_assert_eq!(&a.unit_index_of_token, &b.unit_index_of_token);
            prop_assert_eq!(bits(&a.final_surprisal), bits(&b.final_surprisal));
            prop_assert_eq!(bits(&a.logitlens_surprisal.data), bits(&b.logitlens_surprisal.data));
            prop_assert_eq!(bits(&a.hidden_states.data), bits(&b.hidden_states.data));
            prop_assert_eq!(bits(&a.iv_distances.data), bits(&b.iv_distances.data));
        }
    }

    #[test]
    fn surprisal_is_additive_over_spans(doc in doc_strategy(1, 2, 1)) {
        let align = AlignmentMap::from_unit_indices(&doc.unit_index_of_token).unwrap();
        let s = unit_surprisal(&doc, &align).unwrap();
        for (u, span) in align.spans.iter().enumerate() {
            let direct: f64 = doc.final_surprisal[span.clone()].iter().map(|&v| v as f64).sum();
            prop_assert!((s[u] - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
            // Splitting the span and adding the parts gives the same total.
            let mid = span.start + span.len() / 2;
            let left: f64 = doc.final_surprisal[span.start..mid].iter().map(|&v| v as f64).sum();
            let right: f64 = doc.final_surprisal[mid..span.end].iter().map(|&v| v as f64).sum();
            prop_assert!((s[u] - (left + right)).abs() <= 1e-9 * (1.0 + s[u].abs()));
        }
    }

    #[test]
    fn information_value_ignores_sample_order(doc in doc_strategy(1, 2, 6), seed in any::<u64>()) {
        let iv = information_value(&doc, 1).unwrap();
        let mut shuffled = doc.clone();
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for u in 0..shuffled.iv_distances.dims[0] {
            let row = &mut shuffled.iv_distances.data[u * n..(u + 1) * n];
            row.shuffle(&mut rng);
        }
        let iv2 = information_value(&shuffled, 1).unwrap();
        for (a, b) in iv.iter().zip(&iv2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pooling_commutes_with_linear_maps(doc in doc_strategy(1, 3, 1), a in matrix(3, 3)) {
        let align = AlignmentMap::from_unit_indices(&doc.unit_index_of_token).unwrap();
        let pooled = pool_unit_representation(&doc, &align, 1).unwrap();
        let mut mapped = doc.clone();
        let t = doc.tokens.len();
        for i in 0..t {
            let h = DVector::from_iterator(3, doc.hidden_states.row3(i, 0).iter().map(|&v| v as f64));
            let ah = &a * h;
            for k in 0..3 {
                mapped.hidden_states.data[i * 3 + k] = ah[k] as f32;
            }
        }
        let pooled_mapped = pool_unit_representation(&mapped, &align, 1).unwrap();
        let expect = pooled * a.transpose();
        // Tolerance covers storing A·h as float32.
        prop_assert!((pooled_mapped - &expect).amax() <= 1e-5 * (1.0 + expect.amax()));
    }

    #[test]
    fn alignment_reproduces_unit_texts(words in prop::collection::vec(prop::collection::vec("[a-z]{1,3}", 1..4), 1..6)) {
        let units: Vec<String> = words.iter().map(|w| w.concat()).collect();
        let tokens: Vec<String> = words
            .iter()
            .flat_map(|w| w.iter().enumerate().map(|(i, p)| if i == 0 { format!("▁{p}") } else { p.clone() }))
            .collect();
        let align = align_tokens_to_units(&units, &tokens, &TokenizerMarkerRules::sentencepiece()).unwrap();
        prop_assert_eq!(align.spans.len(), units.len());
        for (u, span) in align.spans.iter().enumerate() {
            let text: String = tokens[span.clone()].concat().replace('▁', "");
            prop_assert_eq!(&text, &units[u]);
        }
    }

    #[test]
    fn aggregation_ignores_row_order(
        values in prop::collection::vec(prop::option::of(50.0f64..500.0), 4 * 5),
        seed in any::<u64>(),
    ) {
        let mut records = Vec::new();
        for p in 0..4 {
            for u in 0..5 {
                let v = values[p * 5 + u];
                records.push(ReadingRecord {
                    doc_id: "d".into(),
                    participant_id: format!("p{p}"),
                    unit_index: u,
                    unit_text: format!("w{u}"),
                    measures: Measures { ffd: v, gd: v.map(|x| x + 1.0), trt: v.map(|x| x * 2.0) },
                    language: Some("en".into()),
                    ordering_violation: false,
                });
            }
        }
        let a = aggregate(&records).unwrap();
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = aggregate(&records).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn holdout_split_partitions(n in 2usize..60, k in 1usize..10, seed in any::<u64>()) {
        prop_assume!(k < n);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let (t, e) = holdout_split(&ids, k, seed).unwrap();
        prop_assert_eq!(t.len(), k);
        prop_assert_eq!(t.len() + e.len(), n);
        prop_assert!(t.iter().all(|d| !e.contains(d)));
        let (t2, e2) = holdout_split(&ids, k, seed).unwrap();
        prop_assert_eq!((t, e), (t2, e2));
    }

    #[test]
    fn folds_depend_only_on_documents_and_seed(n in 2usize..40, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let a = assign_folds(&ids, k, seed).unwrap();
        prop_assert_eq!(&a, &assign_folds(&ids, k, seed).unwrap());
        let folds = Folds::new(&ids, k, seed).unwrap();
        prop_assert_eq!(&folds.fold_of_doc, &a);
        let sizes: Vec<usize> = (0..k).map(|f| folds.split(f).1.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
    }

    #[test]
    fn delta_of_a_result_with_itself_is_zero(mses in prop::collection::vec(0.0f64..1e4, 2..12)) {
        let r = cv(mses, Family::Surprisal, None);
        prop_assert_eq!(delta_mse(&r, &r).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn p_values_are_probabilities_and_monotone(
        b in prop::collection::vec(100.0f64..200.0, 2..12),
        noise in prop::collection::vec(-10.0f64..10.0, 12),
        shift in 0.0f64..20.0,
    ) {
        let a: Vec<f64> = b.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let p = paired_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let lower: Vec<f64> = a.iter().map(|x| x - shift).collect();
        let q = paired_t_test(&lower, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!(q <= p + 1e-15, "p {p} -> {q}");
    }

    #[test]
    fn ridge_near_zero_lambda_matches_ols_and_path_is_continuous(x in matrix(12, 3), y in prop::collection::vec(-5.0f64..5.0, 12), lam in 1e-3f64..10.0) {
        let x = with_intercept(&x);
        prop_assume!(x.clone().svd(false, false).singular_values.min() > 0.1);
        let y = DVector::from_vec(y);
        let ols = fit(&x, &y, &FitSpec::ols()).unwrap().beta;
        let tiny = fit(&x, &y, &FitSpec::ridge(1e-12).unwrap()).unwrap().beta;
        prop_assert!((&tiny - &ols).amax() <= 1e-8);
        let b1 = fit(&x, &y, &FitSpec::ridge(lam).unwrap()).unwrap().beta;
        let b2 = fit(&x, &y, &FitSpec::ridge(lam * (1.0 + 1e-7)).unwrap()).unwrap().beta;
        prop_assert!((&b1 - &b2).amax() <= 1e-5 * (1.0 + b1.amax()));
    }

    #[test]
    fn lasso_beats_the_ols_certificate(x in matrix(10, 4), y in prop::collection::vec(-5.0f64..5.0, 10), lam in 1e-3f64..10.0) {
        let x = with_intercept(&x);
        let y = DVector::from_vec(y);
        let spec = FitSpec::lasso(lam).unwrap();
        let lasso = fit(&x, &y, &spec).unwrap();
        let ols = min_norm_least_squares(&x, &y);
        prop_assert!(objective(&x, &y, &lasso.beta, &spec) <= objective(&x, &y, &ols, &spec) + 1e-9);
    }

    #[test]
    fn standardized_and_original_predictions_agree(x in matrix(9, 3), b in prop::collection::vec(-3.0f64..3.0, 4)) {
        let x = with_intercept(&x);
        let beta = DVector::from_vec(b);
        let std = Standardizer::fit(&x, true);
        let z = std.transform(&x);
        let direct = &x * &beta;
        let via = z * std.to_transformed(&beta);
        prop_assert!((direct - via).amax() <= 1e-9 * (1.0 + beta.amax() * 10.0));
    }

    #[test]
    fn fits_are_deterministic(x in matrix(10, 3), y in prop::collection::vec(-5.0f64..5.0, 10), lam in 1e-3f64..10.0) {
        let x = with_intercept(&x);
        let y = DVector::from_vec(y);
        for spec in [FitSpec::ols(), FitSpec::ridge(lam).unwrap(), FitSpec::lasso(lam).unwrap()] {
            let a = fit(&x, &y, &spec).unwrap();
            let b = fit(&x, &y, &spec).unwrap();
            prop_assert_eq!(a.beta.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.beta.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(predict(&a, &x).unwrap(), predict(&b, &x).unwrap());
        }
    }

    #[test]
    fn pca_training_scores_are_centered(x in matrix(15, 5), k in 1usize..5) {
        let model = pca_fit(&x, k).unwrap();
        let scores = pca_project(&model, &x).unwrap();
        for c in 0..scores.ncols() {
            prop_assert!(scores.column(c).mean().abs() <= 1e-9);
        }
    }
}

/// Small crossed design with nonzero random effects.
fn lmm_problem(seed: u64) -> LmmSpec {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let (ns, ni, reps) = (6, 5, 3);
    let bs: Vec<f64> = (0..ns).map(|_| 3.0 * z.sample(&mut rng)).collect();
    let bi: Vec<f64> = (0..ni).map(|_| 2.0 * z.sample(&mut rng)).collect();
    let n = ns * ni * reps;
    let mut x = DMatrix::from_element(n, 2, 1.0);
    let mut y = DVector::zeros(n);
    let (mut s, mut it) = (Vec::new(), Vec::new());
    let mut r = 0;
    for a in 0..ns {
        for b in 0..ni {
            for _ in 0..reps {
                x[(r, 1)] = z.sample(&mut rng);
                y[r] = 10.0 + 2.0 * x[(r, 1)] + bs[a] + bi[b] + z.sample(&mut rng);
                s.push(format!("s{a}"));
                it.push(format!("i{b}"));
                r += 1;
            }
        }
    }
    LmmSpec::new(x, y, s, it).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lmm_variance_components_ignore_labels(seed in any::<u64>(), salt in any::<u32>()) {
        let spec = lmm_problem(seed);
        let a = lmm_fit(&spec).unwrap();
        let mut renamed = spec.clone();
        // A bijective relabeling that also changes the sort order of levels.
        renamed.subject_ids = spec.subject_ids.iter().map(|s| format!("{}-{s}", salt % 7)).collect();
        renamed.item_ids = spec.item_ids.iter().map(|s| format!("z{}", 100 - s[1..].parse::<i32>().unwrap())).collect();
        let b = lmm_fit(&renamed).unwrap();
        for (u, v) in [(a.var_subject, b.var_subject), (a.var_item, b.var_item), (a.var_resid, b.var_resid)] {
            prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }

    #[test]
    fn lmm_likelihood_beats_the_ols_certificate(seed in any::<u64>()) {
        let spec = lmm_problem(seed);
        let f = lmm_fit(&spec).unwrap();
        let ols = min_norm_least_squares(&spec.x, &spec.y);
        let resid = (&spec.y - &spec.x * &ols).norm_squared() / spec.y.len() as f64;
        let at_ols = lmm_log_likelihood(&spec, ols.as_slice(), 0.0, 0.0, resid).unwrap();
        prop_assert!(f.log_likelihood >= at_ols - 1e-6);
    }

    #[test]
    fn design_matrices_are_finite_with_one_row_per_observed_unit(seed in 0u64..1000, skip in 0.0f64..0.4) {
        let cfg = SynthConfig { seed, n_docs: 3, units_per_doc: 8, n_participants: 2, skip_rate: skip, ..Default::default() };
        let fx = generate(&cfg).unwrap();
        let tables = fx.unit_tables().unwrap();
        for trace in &fx.traces {
            let table = tables[&trace.doc_id].clone();
            let align = AlignmentMap::from_unit_indices(&trace.unit_index_of_token).unwrap();
            let baseline = baseline_features(&table, &fx.freq);
            let inputs = DocInputs { trace: trace.clone(), align, table, baseline };
            for family in Family::ALL {
                let layer = family.is_layerwise().then_some(2);
                let config = PredictorConfig::new(family, layer).unwrap();
                for m in Measure::ALL {
                    let dm = build_design_matrix(&config, &inputs, m, false).unwrap();
                    let observed = inputs.table.aggregated.iter().filter(|a| a.get(m).is_some()).count();
                    prop_assert_eq!(dm.n_rows(), observed);
                    prop_assert!(dm.x.iter().chain(dm.y.iter()).all(|v| v.is_finite()));
                }
            }
        }
    }
}
