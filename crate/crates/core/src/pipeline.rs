//! End-to-end evaluation: load a trace and a corpus, split off tuning
//! documents, tune and cross-validate every predictor configuration, and
//! collect the results in an [`EvalReport`].

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    aggregate, align_tokens_to_units, holdout_split, parse_corpus, ColumnSchema, Measure,
    TokenizerMarkerRules,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, mark_significance, tune, CvResult, Folds, LambdaGrid, TuningChoice};
use crate::mixedmodel::{lmm_evaluate, lmm_fit, reduce_representation, LmmFit, LmmOptions, LmmSpec, DEFAULT_PCA_K};
use crate::predictors::{
    baseline_features, build_design_matrix, build_participant_design, DesignMatrix, DocInputs, Family,
    FrequencyTable, PredictorConfig,
};
use crate::regression::Penalty;
use crate::report::EvalReport;
use crate::trace::{read_trace, TraceManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub folds: u64,
    pub permutation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 0,
            folds: 1,
            permutation: 2,
        }
    }
}

/// What to evaluate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Languages to evaluate; empty means all.
    pub languages: Vec<String>,
    pub measures: Vec<Measure>,
    /// Families to evaluate; the baseline is always added.
    pub families: Vec<Family>,
    /// Layers for layer-wise families; empty means every exported layer.
    pub layers: Vec<usize>,
    pub folds: usize,
    /// Documents per language set aside as the tuning test split.
    pub holdout_docs: usize,
    pub seeds: Seeds,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    pub penalties: Vec<Penalty>,
    /// Adds the end-of-string row where the trace and corpus provide one.
    pub wrap_up: bool,
    pub pca_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            languages: Vec::new(),
            measures: Measure::ALL.to_vec(),
            families: Family::ALL.to_vec(),
            layers: Vec::new(),
            folds: 10,
            holdout_docs: 2,
            seeds: Seeds::default(),
            lambda_min: 1e-3,
            lambda_max: 10.0,
            lambda_points: 20,
            penalties: vec![Penalty::None, Penalty::Ridge, Penalty::Lasso],
            wrap_up: false,
            pca_k: DEFAULT_PCA_K,
        }
    }
}

impl PipelineConfig {
    pub fn grid(&self) -> Result<LambdaGrid> {
        LambdaGrid::log_spaced(self.lambda_min, self.lambda_max, self.lambda_points)
    }

    /// Baseline first, then the requested families in canonical order, each
    /// layer-wise family expanded over `layers`.
    pub fn configs(&self, exported: &[usize]) -> Result<Vec<PredictorConfig>> {
        let layers: Vec<usize> = if self.layers.is_empty() {
            exported.to_vec()
        } else {
            self.layers.clone()
        };
        if let Some(bad) = layers.iter().find(|l| !exported.contains(l)) {
            return Err(Error::InvalidArgument(format!(
                "layer {bad} not exported (have {exported:?})"
            )));
        }
        let mut out = vec![PredictorConfig::baseline()];
        for f in Family::ALL {
            if f == Family::Baseline || !self.families.contains(&f) {
                continue;
            }
            if f.is_layerwise() {
                for &l in &layers {
                    out.push(PredictorConfig::new(f, Some(l))?);
                }
            } else {
                out.push(PredictorConfig::new(f, None)?);
            }
        }
        Ok(out)
    }
}

/// Everything the pipeline reads, aligned per document.
pub struct LoadedInputs {
    pub manifest: TraceManifest,
    /// In manifest order.
    pub docs: Vec<DocInputs>,
}

impl LoadedInputs {
    pub fn languages(&self) -> Vec<String> {
        let mut l: Vec<String> = self.docs.iter().map(|d| d.table.language.clone()).collect();
        l.sort();
        l.dedup();
        l
    }
}

/// Reads the trace, corpus and frequency table and aligns every trace
/// document to its corpus units. The trace's stored token-to-unit map must
/// agree with the alignment recomputed from the token strings.
pub fn load_inputs(
    trace_dir: &Path,
    corpus: &Path,
    schema: &ColumnSchema,
    freq: &Path,
    rules: &TokenizerMarkerRules,
) -> Result<LoadedInputs> {
    let reader = read_trace(trace_dir)?;
    let parsed = parse_corpus(corpus, schema)?;
    let mut tables = aggregate(&parsed.records)?;
    let freq = FrequencyTable::from_path(freq)?;
    let mut docs = Vec::with_capacity(reader.len());
    for trace in reader.documents() {
        let trace = trace?;
        let table = tables.remove(&trace.doc_id).ok_or_else(|| {
            Error::Corpus(format!("document {} has a trace but no reading times", trace.doc_id))
        })?;
        let n = trace.unit_token_count();
        let align = align_tokens_to_units(&table.units, &trace.tokens[..n], rules)?;
        if align.unit_index_of_token() != trace.unit_index_of_token[..n] {
            return Err(Error::Alignment(format!(
                "{}: stored token-to-unit map disagrees with the tokens",
                trace.doc_id
            )));
        }
        let baseline = baseline_features(&table, &freq);
        docs.push(DocInputs {
            trace,
            align,
            table,
            baseline,
        });
    }
    if let Some(extra) = tables.keys().next() {
        return Err(Error::Corpus(format!("document {extra} has reading times but no trace")));
    }
    Ok(LoadedInputs {
        manifest: reader.manifest().clone(),
        docs,
    })
}

/// Tuning and experiment documents of one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSplit {
    pub language: String,
    pub tuning: Vec<String>,
    pub experiment: Vec<String>,
}

fn language_docs<'a>(inputs: &'a LoadedInputs, language: &str) -> BTreeMap<&'a str, &'a DocInputs> {
    inputs
        .docs
        .iter()
        .filter(|d| d.table.language == language)
        .map(|d| (d.doc_id(), d))
        .collect()
}

fn split_language(inputs: &LoadedInputs, cfg: &PipelineConfig, language: &str) -> Result<LanguageSplit> {
    let ids: Vec<String> = language_docs(inputs, language).keys().map(|s| s.to_string()).collect();
    let (mut tuning, mut experiment) = holdout_split(&ids, cfg.holdout_docs, cfg.seeds.split)?;
    tuning.sort();
    experiment.sort();
    Ok(LanguageSplit {
        language: language.to_string(),
        tuning,
        experiment,
    })
}

fn selected_languages(inputs: &LoadedInputs, cfg: &PipelineConfig) -> Result<Vec<String>> {
    let all = inputs.languages();
    if cfg.languages.is_empty() {
        return Ok(all);
    }
    if let Some(bad) = cfg.languages.iter().find(|l| !all.contains(l)) {
        return Err(Error::InvalidArgument(format!("no documents for language {bad:?}")));
    }
    let mut l = cfg.languages.clone();
    l.sort();
    l.dedup();
    Ok(l)
}

/// Output of a regression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub report: EvalReport,
    pub splits: Vec<LanguageSplit>,
    pub tuning: Vec<TuningChoice>,
    pub results: Vec<CvResult>,
}

fn designs(
    docs: &BTreeMap<&str, &DocInputs>,
    ids: &[String],
    config: &PredictorConfig,
    measure: Measure,
    wrap_up: bool,
) -> Result<Vec<DesignMatrix>> {
    ids.iter()
        .map(|id| build_design_matrix(config, docs[id.as_str()], measure, wrap_up))
        .collect()
}

/// Tunes and cross-validates every (measure, configuration) pair of every
/// selected language. Tasks run in parallel; results are collected in
/// (language, measure, configuration) order.
pub fn run(inputs: &LoadedInputs, cfg: &PipelineConfig) -> Result<RunOutput> {
    let grid = cfg.grid()?;
    let configs = cfg.configs(&inputs.manifest.layers_exported)?;
    let mut out = RunOutput {
        report: EvalReport::default(),
        splits: Vec::new(),
        tuning: Vec::new(),
        results: Vec::new(),
    };
    for language in selected_languages(inputs, cfg)? {
        let split = split_language(inputs, cfg, &language)?;
        let docs = language_docs(inputs, &language);
        let folds = Folds::new(&split.experiment, cfg.folds, cfg.seeds.folds)?;
        let tasks: Vec<(Measure, PredictorConfig)> = cfg
            .measures
            .iter()
            .flat_map(|&m| configs.iter().map(move |&c| (m, c)))
            .collect();
        let done: Vec<(TuningChoice, CvResult)> = tasks
            .par_iter()
            .map(|&(measure, config)| {
                let exp = designs(&docs, &split.experiment, &config, measure, cfg.wrap_up)?;
                let hold = designs(&docs, &split.tuning, &config, measure, cfg.wrap_up)?;
                let train = DesignMatrix::stack(&exp.iter().collect::<Vec<_>>())?;
                let test = DesignMatrix::stack(&hold.iter().collect::<Vec<_>>())?;
                let choice = tune(&config, measure, &train, &test, &grid, &cfg.penalties)?;
                let result = evaluate(&exp, &choice, &folds, cfg.seeds.permutation)?;
                Ok((choice, result))
            })
            .collect::<Result<_>>()?;
        let (choices, mut results): (Vec<_>, Vec<_>) = done.into_iter().unzip();
        for &measure in &cfg.measures {
            let group: Vec<usize> = (0..results.len()).filter(|&i| results[i].measure == measure).collect();
            let mut rs: Vec<CvResult> = group.iter().map(|&i| results[i].clone()).collect();
            mark_significance(&mut rs)?;
            out.report.add_group(&language, measure, &rs)?;
            for (&i, r) in group.iter().zip(rs) {
                results[i] = r;
            }
        }
        out.splits.push(split);
        out.tuning.extend(choices);
        out.results.extend(results);
    }
    Ok(out)
}

/// Output of a mixed-model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmRunOutput {
    pub report: EvalReport,
    pub splits: Vec<LanguageSplit>,
    pub results: Vec<CvResult>,
    /// Fits on all experiment documents, for audit: (language, measure,
    /// configuration label, fit).
    pub fits: Vec<(String, Measure, String, LmmFit)>,
}

/// Mixed-model counterpart of [`run`] on per-participant rows. Models are
/// unpenalized; representation columns are reduced to `pca_k` principal
/// components fit on each training fold. Folds, tuning exclusion and
/// significance marks are the same as in [`run`].
pub fn run_lmm(inputs: &LoadedInputs, cfg: &PipelineConfig, options: &LmmOptions) -> Result<LmmRunOutput> {
    let configs = cfg.configs(&inputs.manifest.layers_exported)?;
    let mut out = LmmRunOutput {
        report: EvalReport::default(),
        splits: Vec::new(),
        results: Vec::new(),
        fits: Vec::new(),
    };
    for language in selected_languages(inputs, cfg)? {
        let split = split_language(inputs, cfg, &language)?;
        let docs = language_docs(inputs, &language);
        let folds = Folds::new(&split.experiment, cfg.folds, cfg.seeds.folds)?;
        let tasks: Vec<(Measure, PredictorConfig)> = cfg
            .measures
            .iter()
            .flat_map(|&m| configs.iter().map(move |&c| (m, c)))
            .collect();
        let done: Vec<(CvResult, LmmFit)> = tasks
            .par_iter()
            .map(|&(measure, config)| {
                let exp: Vec<DesignMatrix> = split
                    .experiment
                    .iter()
                    .map(|id| build_participant_design(&config, docs[id.as_str()], measure))
                    .collect::<Result<_>>()?;
                let result = lmm_evaluate(&exp, config, measure, &folds, cfg.pca_k, options, cfg.seeds.permutation)?;
                let all = DesignMatrix::stack(&exp.iter().collect::<Vec<_>>())?;
                let (reduced, _) = reduce_representation(&all, &all, cfg.pca_k)?;
                let mut spec = LmmSpec::from_design(&reduced)?;
                spec.options = options.clone();
                Ok((result, lmm_fit(&spec)?))
            })
            .collect::<Result<_>>()?;
        let mut results = Vec::with_capacity(done.len());
        for ((result, fit), &(measure, config)) in done.into_iter().zip(&tasks) {
            out.fits.push((language.clone(), measure, config.label(), fit));
            results.push(result);
        }
        for &measure in &cfg.measures {
            let mut rs: Vec<CvResult> = results.iter().filter(|r| r.measure == measure).cloned().collect();
            mark_significance(&mut rs)?;
            out.report.add_group(&language, measure, &rs)?;
            out.results.extend(rs);
        }
        out.splits.push(split);
    }
    Ok(out)
}
