//! Synthetic fixtures: a toy language model with layered hidden states,
//! its GTRC trace, and simulated eye-tracking data generated from a chosen
//! predictor family and layer.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    aggregate, AlignmentMap, ColumnSchema, Measures, ReadingRecord, UnitTable, WRAP_UP_UNIT,
};
use crate::error::{io_err, Error, Result};
use crate::predictors::{
    baseline_features, information_value, pool_unit_representation, unit_logitlens_surprisal,
    unit_surprisal, FrequencyTable,
};
use crate::trace::{write_trace, DType, DocumentTrace, Tensor, TraceManifest};

pub const BOUNDARY: &str = "▁";
pub const EOS_TOKEN: &str = "</s>";
/// Maximum number of tokens of a sampled continuation.
pub const IV_MAX_TOKENS: usize = 3;

/// Cosine distance `1 - cos(a, b)`; 1 when either vector has zero norm.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Index drawn from a probability vector by inverse CDF.
fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A causal toy model whose state at a token depends on the token and its
/// predecessor: `h_l(t) = E_l[tok_t] + gamma * E_l[tok_{t-1}]`. Embeddings of
/// consecutive layers are correlated with coefficient `rho`. Next-token
/// distributions at any layer use the shared unembedding, and the final
/// transform is the identity, so the last layer's logit lens equals the
/// model's own prediction.
#[derive(Debug, Clone)]
pub struct ToyLm {
    /// Output vocabulary; the last entry is the end-of-string token.
    pub vocab: Vec<String>,
    /// `[V + 1, d]` per layer; row `V` is the beginning-of-string state.
    pub embeddings: Vec<DMatrix<f64>>,
    pub unembedding: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub context_weight: f64,
    index: HashMap<String, usize>,
}

impl ToyLm {
    pub fn new(
        vocab: Vec<String>,
        num_layers: usize,
        hidden_dim: usize,
        layer_correlation: f64,
        context_weight: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let v = vocab.len();
        let rho = layer_correlation;
        let mut embeddings = Vec::with_capacity(num_layers);
        let mut prev = DMatrix::from_fn(v + 1, hidden_dim, |_, _| normal(rng));
        embeddings.push(prev.clone());
        for _ in 1..num_layers {
            let fresh = DMatrix::from_fn(v + 1, hidden_dim, |_, _| normal(rng));
            prev = &prev * rho + fresh * (1.0 - rho * rho).sqrt();
            embeddings.push(prev.clone());
        }
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let unembedding = DMatrix::from_fn(v, hidden_dim, |_, _| normal(rng) * scale);
        let bias = DVector::from_fn(v, |_, _| 0.5 * normal(rng));
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            vocab,
            embeddings,
            unembedding,
            bias,
            context_weight,
            index,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.embeddings.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.unembedding.ncols()
    }

    pub fn bos(&self) -> usize {
        self.vocab.len()
    }

    pub fn eos(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Hidden state at 1-based `layer` of `tok` following `prev` (`None` at
    /// the start of the string). The beginning-of-string state itself is
    /// `hidden(layer, bos, None)`.
    pub fn hidden(&self, layer: usize, tok: usize, prev: Option<usize>) -> DVector<f64> {
        let e = &self.embeddings[layer - 1];
        let mut h: DVector<f64> = e.row(tok).transpose();
        if let Some(p) = prev {
            h += e.row(p).transpose() * self.context_weight;
        }
        h
    }

    /// Log-probabilities of the next token given a hidden state.
    pub fn log_probs(&self, h: &DVector<f64>) -> DVector<f64> {
        let logits = &self.unembedding * h + &self.bias;
        let m = logits.max();
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        logits.map(|z| z - lse)
    }

    fn probs(&self, h: &DVector<f64>) -> Vec<f64> {
        self.log_probs(h).iter().map(|l| l.exp()).collect()
    }

    pub fn begins_unit(&self, tok: usize) -> bool {
        tok == self.eos() || self.vocab[tok].starts_with(BOUNDARY)
    }

    /// Samples one continuation after the context `(tok, prev)`: the first
    /// token is always kept; sampling stops before a token that begins a new
    /// word or ends the string, or after [`IV_MAX_TOKENS`] tokens.
    pub fn sample_continuation(
        &self,
        ctx: (usize, Option<usize>),
        rng: &mut ChaCha8Rng,
    ) -> Vec<(usize, usize)> {
        let last = self.num_layers();
        let mut state = ctx;
        let mut out: Vec<(usize, usize)> = Vec::new();
        while out.len() < IV_MAX_TOKENS {
            let h = self.hidden(last, state.0, state.1);
            let next = draw(&self.probs(&h), rng);
            if !out.is_empty() && self.begins_unit(next) {
                break;
            }
            out.push((next, state.0));
            if next == self.eos() {
                break;
            }
            state = (next, Some(state.0));
        }
        out
    }

    /// Mean hidden state at `layer` over `(token, predecessor)` pairs.
    pub fn pooled(&self, layer: usize, tokens: &[(usize, Option<usize>)]) -> Vec<f64> {
        let mut acc = DVector::zeros(self.hidden_dim());
        for &(t, p) in tokens {
            acc += self.hidden(layer, t, p);
        }
        (acc / tokens.len() as f64).iter().copied().collect()
    }
}

/// Which predictor drives the simulated reading times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratingFamily {
    /// Intercept plus random effects and noise only.
    None,
    Surprisal,
    Representation,
    Infovalue,
    Logitlens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub language: String,
    pub n_docs: usize,
    pub units_per_doc: usize,
    pub n_participants: usize,
    pub vocab_words: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub iv_samples: usize,
    pub layer_correlation: f64,
    pub context_weight: f64,
    pub generating_family: GeneratingFamily,
    pub generating_layer: Option<usize>,
    /// Reading-time units per unit of the generating predictor. For
    /// representations this multiplies a random unit-norm direction.
    pub slope: f64,
    pub intercept: f64,
    /// Effects of length, log frequency and relative position.
    pub baseline_weights: [f64; 3],
    pub noise_sd: f64,
    pub subject_sd: f64,
    pub doc_sd: f64,
    /// Extra first-pass time added to FFD to form GD (half-normal scale).
    pub gd_extra_sd: f64,
    /// Extra time added to GD to form TRT (half-normal scale).
    pub trt_extra_sd: f64,
    pub skip_rate: f64,
    /// Adds an end-of-string token row and a wrap-up reading time.
    pub wrap_up: bool,
    pub wrap_up_effect: f64,
    pub hidden_f16: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            language: "synth".into(),
            n_docs: 30,
            units_per_doc: 20,
            n_participants: 8,
            vocab_words: 60,
            num_layers: 4,
            hidden_dim: 8,
            iv_samples: 8,
            layer_correlation: 0.5,
            context_weight: 0.5,
            generating_family: GeneratingFamily::Representation,
            generating_layer: Some(3),
            slope: 20.0,
            intercept: 200.0,
            baseline_weights: [0.0; 3],
            noise_sd: 20.0,
            subject_sd: 10.0,
            doc_sd: 0.0,
            gd_extra_sd: 10.0,
            trt_extra_sd: 30.0,
            skip_rate: 0.0,
            wrap_up: false,
            wrap_up_effect: 50.0,
            hidden_f16: false,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_docs == 0 || self.units_per_doc == 0 || self.n_participants == 0 {
            return bad("documents, units and participants must be positive".into());
        }
        if self.vocab_words < 2 || self.num_layers == 0 || self.hidden_dim == 0 || self.iv_samples == 0 {
            return bad("vocabulary, layers, hidden size and IV samples must be positive".into());
        }
        if !(-1.0..=1.0).contains(&self.layer_correlation) {
            return bad(format!("layer_correlation {} outside [-1, 1]", self.layer_correlation));
        }
        if !(0.0..1.0).contains(&self.skip_rate) {
            return bad(format!("skip_rate {} outside [0, 1)", self.skip_rate));
        }
        let needs_layer = matches!(
            self.generating_family,
            GeneratingFamily::Representation | GeneratingFamily::Infovalue | GeneratingFamily::Logitlens
        );
        match (needs_layer, self.generating_layer) {
            (true, Some(l)) if l >= 1 && l <= self.num_layers => {}
            (true, _) => return bad(format!("generating layer must be in 1..={}", self.num_layers)),
            (false, Some(_)) => return bad("generating layer given for a layer-free family".into()),
            (false, None) => {}
        }
        if self.wrap_up && self.generating_family == GeneratingFamily::Infovalue {
            return bad("information value is undefined at the end-of-string row".into());
        }
        Ok(())
    }
}

/// Ground truth recorded next to a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub generating_family: GeneratingFamily,
    pub generating_layer: Option<usize>,
    /// Coefficients on the generating predictor columns (one for scalar
    /// families, `d` for representations).
    pub coefficients: Vec<f64>,
    pub doc_ids: Vec<String>,
    pub participant_ids: Vec<String>,
    /// Variance of the generated signal over variance of the remaining
    /// unit-level variation, both on participant-averaged times.
    pub realized_snr: f64,
    pub subject_effects: Vec<f64>,
    pub doc_effects: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub manifest: TraceManifest,
    pub traces: Vec<DocumentTrace>,
    pub records: Vec<ReadingRecord>,
    pub freq: FrequencyTable,
    pub meta: SynthMeta,
}

/// Locations of a written fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixturePaths {
    pub corpus: PathBuf,
    pub freq: PathBuf,
    pub trace: PathBuf,
    pub meta: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus.csv"),
            freq: dir.join("freq.tsv"),
            trace: dir.join("trace"),
            meta: dir.join("synth_meta.json"),
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Distinct words of one to three syllables with their syllable split.
fn make_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let syllable = |rng: &mut ChaCha8Rng| {
        let c = CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char;
        let v = VOWELS[rng.random_range(0..VOWELS.len())] as char;
        format!("{c}{v}")
    };
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(n);
    while words.len() < n {
        let k = rng.random_range(1..=3);
        let sy: Vec<String> = (0..k).map(|_| syllable(rng)).collect();
        if seen.insert(sy.concat()) {
            words.push(sy);
        }
    }
    words
}

fn tokens_of(syllables: &[String]) -> Vec<String> {
    syllables
        .iter()
        .enumerate()
        .map(|(i, s)| if i == 0 { format!("{BOUNDARY}{s}") } else { s.clone() })
        .collect()
}

/// Builds the trace of one document from the toy model.
fn trace_document(
    lm: &ToyLm,
    doc_id: String,
    words: &[&Vec<String>],
    iv_samples: usize,
    with_eos: bool,
    rng: &mut ChaCha8Rng,
) -> DocumentTrace {
    let layers = lm.num_layers();
    let d = lm.hidden_dim();
    let mut tokens = Vec::new();
    let mut unit_index_of_token = Vec::new();
    for (u, w) in words.iter().enumerate() {
        for t in tokens_of(w) {
            tokens.push(t);
            unit_index_of_token.push(u);
        }
    }
    let units = words.len();
    if with_eos {
        tokens.push(EOS_TOKEN.to_string());
        unit_index_of_token.push(units);
    }
    let ids: Vec<usize> = tokens.iter().map(|t| lm.token_id(t).expect("token in vocabulary")).collect();
    let t_count = ids.len();
    let prev = |t: usize| if t == 0 { None } else { Some(ids[t - 1]) };
    // context state predicting token t: the previous token, or the start state
    let ctx = |t: usize| -> (usize, Option<usize>) {
        if t == 0 {
            (lm.bos(), None)
        } else {
            (ids[t - 1], prev(t - 1))
        }
    };

    let mut hidden = vec![0f32; t_count * layers * d];
    let mut lens = vec![0f32; t_count * layers];
    let mut final_surprisal = vec![0f32; t_count];
    for t in 0..t_count {
        let (c, cp) = ctx(t);
        for l in 1..=layers {
            let h = lm.hidden(l, ids[t], prev(t));
            for k in 0..d {
                hidden[(t * layers + (l - 1)) * d + k] = h[k] as f32;
            }
            let s = -lm.log_probs(&lm.hidden(l, c, cp))[ids[t]];
            lens[t * layers + (l - 1)] = s as f32;
            if l == layers {
                final_surprisal[t] = s as f32;
            }
        }
    }

    let mut starts = vec![0usize; units];
    let mut spans: Vec<Vec<(usize, Option<usize>)>> = vec![Vec::new(); units];
    for t in (0..t_count).rev() {
        let u = unit_index_of_token[t];
        if u < units {
            starts[u] = t;
            spans[u].insert(0, (ids[t], prev(t)));
        }
    }
    let mut iv = vec![0f32; units * layers * iv_samples];
    for u in 0..units {
        let observed: Vec<Vec<f64>> = (1..=layers).map(|l| lm.pooled(l, &spans[u])).collect();
        for n in 0..iv_samples {
            let cont: Vec<(usize, Option<usize>)> = lm
                .sample_continuation(ctx(starts[u]), rng)
                .into_iter()
                .map(|(t, p)| (t, Some(p)))
                .collect();
            for l in 1..=layers {
                let dist = cosine_distance(&observed[l - 1], &lm.pooled(l, &cont));
                iv[(u * layers + (l - 1)) * iv_samples + n] = dist as f32;
            }
        }
    }

    DocumentTrace {
        doc_id,
        tokens,
        unit_index_of_token,
        layers_exported: (1..=layers).collect(),
        final_surprisal,
        logitlens_surprisal: Tensor {
            dims: vec![t_count, layers],
            data: lens,
        },
        hidden_states: Tensor {
            dims: vec![t_count, layers, d],
            data: hidden,
        },
        iv_distances: Tensor {
            dims: vec![units, layers, iv_samples],
            data: iv,
        },
        has_eos_row: with_eos,
    }
}

/// Generating predictor per unit (plus the end-of-string row when present),
/// computed from the trace exactly as the predictor builders compute it.
fn raw_predictor(
    cfg: &SynthConfig,
    trace: &DocumentTrace,
    direction: &[f64],
) -> Result<(Vec<f64>, Option<f64>)> {
    let units = trace.unit_count();
    let align = AlignmentMap::from_unit_indices(&trace.unit_index_of_token[..trace.unit_token_count()])?;
    let eos = trace.has_eos_row.then(|| trace.token_count() - 1);
    let layer = cfg.generating_layer.unwrap_or(0);
    let j = layer.saturating_sub(1);
    Ok(match cfg.generating_family {
        GeneratingFamily::None => (vec![0.0; units], eos.map(|_| 0.0)),
        GeneratingFamily::Surprisal => (
            unit_surprisal(trace, &align)?,
            eos.map(|t| trace.final_surprisal[t] as f64),
        ),
        GeneratingFamily::Logitlens => (
            unit_logitlens_surprisal(trace, &align, layer)?,
            eos.map(|t| trace.logitlens_surprisal.at2(t, j) as f64),
        ),
        GeneratingFamily::Infovalue => (information_value(trace, layer)?, None),
        GeneratingFamily::Representation => {
            let pooled = pool_unit_representation(trace, &align, layer)?;
            let w = DVector::from_column_slice(direction);
            let vals = (&pooled * &w).iter().copied().collect();
            let at_eos = eos.map(|t| {
                trace
                    .hidden_states
                    .row3(t, j)
                    .iter()
                    .zip(direction)
                    .map(|(h, w)| *h as f64 * w)
                    .sum()
            });
            (vals, at_eos)
        }
    })
}

fn half_normal(sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    sd * normal(rng).abs()
}

/// Generates a complete fixture in memory. Identical configurations give
/// identical fixtures.
pub fn generate(cfg: &SynthConfig) -> Result<SynthFixture> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = make_words(cfg.vocab_words, &mut rng);
    let mut vocab: Vec<String> = words.iter().flat_map(|w| tokens_of(w)).collect();
    vocab.sort();
    vocab.dedup();
    vocab.push(EOS_TOKEN.to_string());
    let lm = ToyLm::new(
        vocab,
        cfg.num_layers,
        cfg.hidden_dim,
        cfg.layer_correlation,
        cfg.context_weight,
        &mut rng,
    );

    // Zipfian word distribution; the frequency table holds its expected
    // counts per million.
    let zipf: Vec<f64> = (1..=words.len()).map(|r| 1.0 / r as f64).collect();
    let z: f64 = zipf.iter().sum();
    let zipf: Vec<f64> = zipf.iter().map(|p| p / z).collect();
    let freq = FrequencyTable::new(
        words
            .iter()
            .zip(&zipf)
            .map(|(w, p)| (w.concat(), (p * 1e6).round() as u64))
            .collect(),
    );

    let mut direction: Vec<f64> = (0..cfg.hidden_dim).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let doc_ids: Vec<String> = (0..cfg.n_docs).map(|i| format!("doc{i:03}")).collect();
    let participant_ids: Vec<String> = (0..cfg.n_participants).map(|i| format!("p{i:02}")).collect();
    let mut traces = Vec::with_capacity(cfg.n_docs);
    let mut doc_words = Vec::with_capacity(cfg.n_docs);
    for id in &doc_ids {
        let ws: Vec<&Vec<String>> = (0..cfg.units_per_doc).map(|_| &words[draw(&zipf, &mut rng)]).collect();
        traces.push(trace_document(&lm, id.clone(), &ws, cfg.iv_samples, cfg.wrap_up, &mut rng));
        doc_words.push(ws.iter().map(|w| w.concat()).collect::<Vec<_>>());
    }

    let subject_effects: Vec<f64> = (0..cfg.n_participants).map(|_| cfg.subject_sd * normal(&mut rng)).collect();
    let doc_effects: Vec<f64> = (0..cfg.n_docs).map(|_| cfg.doc_sd * normal(&mut rng)).collect();
    let mut records = Vec::new();
    let mut signal_all = Vec::new();
    let mut rest_all = Vec::new();
    for (di, trace) in traces.iter().enumerate() {
        let (raw, raw_eos) = raw_predictor(cfg, trace, &direction)?;
        let table = UnitTable {
            doc_id: doc_ids[di].clone(),
            language: cfg.language.clone(),
            units: doc_words[di].clone(),
            aggregated: vec![Measures::default(); raw.len()],
            per_participant: Default::default(),
            wrap_up: None,
        };
        let base = baseline_features(&table, &freq);
        let mut means = vec![0.0; raw.len()];
        let mut unit_rows: Vec<(usize, String, f64)> = raw
            .iter()
            .enumerate()
            .map(|(u, r)| {
                let b: f64 = (0..3).map(|k| cfg.baseline_weights[k] * base.values[(u, k)]).sum();
                (u, doc_words[di][u].clone(), cfg.intercept + b + cfg.slope * r)
            })
            .collect();
        let signals: Vec<f64> = raw.iter().map(|r| cfg.slope * r).collect();
        if let Some(r) = raw_eos {
            let pos = cfg.baseline_weights[2];
            unit_rows.push((raw.len(), WRAP_UP_UNIT.to_string(), cfg.intercept + pos + cfg.wrap_up_effect + cfg.slope * r));
        }
        for (pi, pid) in participant_ids.iter().enumerate() {
            for (u, text, mean) in &unit_rows {
                let eps = cfg.noise_sd * normal(&mut rng);
                let skipped = cfg.skip_rate > 0.0 && rng.random::<f64>() < cfg.skip_rate;
                let gd_extra = half_normal(cfg.gd_extra_sd, &mut rng);
                let trt_extra = half_normal(cfg.trt_extra_sd, &mut rng);
                let ffd = mean + subject_effects[pi] + doc_effects[di] + eps;
                if *u < means.len() {
                    means[*u] += (doc_effects[di] + eps) / cfg.n_participants as f64;
                }
                let measures = if skipped {
                    Measures::default()
                } else {
                    Measures {
                        ffd: Some(ffd),
                        gd: Some(ffd + gd_extra),
                        trt: Some(ffd + gd_extra + trt_extra),
                    }
                };
                records.push(ReadingRecord {
                    doc_id: doc_ids[di].clone(),
                    participant_id: pid.clone(),
                    unit_index: *u,
                    unit_text: text.clone(),
                    measures,
                    language: Some(cfg.language.clone()),
                    ordering_violation: false,
                });
            }
        }
        signal_all.extend(signals);
        rest_all.extend(means);
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let realized_snr = var(&signal_all) / var(&rest_all);

    let mut manifest = TraceManifest::new(
        "toy-lm",
        cfg.num_layers,
        cfg.hidden_dim,
        lm.vocab.len(),
        (1..=cfg.num_layers).collect(),
        cfg.iv_samples,
    );
    manifest.iv_seed = Some(cfg.seed);
    if cfg.hidden_f16 {
        manifest.hidden_dtype = DType::F16;
    }
    let coefficients = match cfg.generating_family {
        GeneratingFamily::None => Vec::new(),
        GeneratingFamily::Representation => direction.iter().map(|w| w * cfg.slope).collect(),
        _ => vec![cfg.slope],
    };
    Ok(SynthFixture {
        manifest,
        traces,
        records,
        freq,
        meta: SynthMeta {
            config: cfg.clone(),
            generating_family: cfg.generating_family,
            generating_layer: cfg.generating_layer,
            coefficients,
            doc_ids,
            participant_ids,
            realized_snr,
            subject_effects,
            doc_effects,
        },
    })
}

impl SynthFixture {
    /// Participant-averaged unit tables, keyed by document.
    pub fn unit_tables(&self) -> Result<std::collections::BTreeMap<String, UnitTable>> {
        aggregate(&self.records)
    }

    /// Writes the corpus (native schema), frequency table, trace directory
    /// and ground-truth metadata into `dir`.
    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let paths = FixturePaths::in_dir(dir);
        write_trace(&self.manifest, &self.traces, &paths.trace)?;
        write_native_corpus(&self.records, &paths.corpus)?;
        let f = std::fs::File::create(&paths.freq).map_err(io_err(&paths.freq))?;
        self.freq.write(std::io::BufWriter::new(f))?;
        let meta = serde_json::to_string_pretty(&self.meta)? + "\n";
        std::fs::write(&paths.meta, meta).map_err(io_err(&paths.meta))?;
        Ok(paths)
    }
}

/// Writes records in the native column layout.
pub fn write_native_corpus(records: &[ReadingRecord], path: &Path) -> Result<()> {
    let schema = ColumnSchema::native();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    w.write_record([
        &schema.doc_id,
        &schema.participant_id,
        &schema.unit_index,
        &schema.unit_text,
        &schema.ffd,
        &schema.gd,
        &schema.trt,
        schema.language.as_ref().unwrap(),
    ])?;
    let num = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "NA".into());
    for r in records {
        w.write_record([
            r.doc_id.clone(),
            r.participant_id.clone(),
            r.unit_index.to_string(),
            r.unit_text.clone(),
            num(r.measures.ffd),
            num(r.measures.gd),
            num(r.measures.trt),
            r.language.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<SynthMeta> {
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&s)?)
}

/// A two-dimensional stub model whose unit continuations have dyadic
/// probabilities, so that expectations over continuations are exact finite
/// sums. Tokens: `▁a`, `▁b`, `x1`..`x4`, `▁c` (a following word) and `</s>`.
///
/// After the context, `▁a` and `▁b` each have probability 1/2. `▁a` is
/// always followed by a new word. `▁b` is followed by one of `x1`..`x4`
/// (1/4 each), after which the string ends or a new word starts (1/2 each).
/// The observed unit is `▁a`.
#[derive(Debug, Clone, Default)]
pub struct EnumerableToyLm;

impl EnumerableToyLm {
    const TOKENS: [&'static str; 8] = ["▁a", "▁b", "x1", "x2", "x3", "x4", "▁c", EOS_TOKEN];

    pub fn token(&self, i: usize) -> &'static str {
        Self::TOKENS[i]
    }

    fn embedding(tok: usize) -> [f64; 2] {
        let s3 = 3f64.sqrt();
        match tok {
            0 => [1.0, 0.0],
            1 => [0.0, 0.0],
            2 => [1.0, s3],
            3 => [0.0, 1.0],
            4 => [-1.0, s3],
            5 => [-1.0, 0.0],
            6 => [0.0, -1.0],
            _ => [0.5, 0.5],
        }
    }

    /// Next-token distribution after a prefix of the continuation.
    pub fn next(&self, prefix: &[usize]) -> Vec<(usize, f64)> {
        match prefix {
            [] => vec![(0, 0.5), (1, 0.5)],
            [0] => vec![(6, 1.0)],
            [1] => (2..=5).map(|t| (t, 0.25)).collect(),
            _ => vec![(7, 0.5), (6, 0.5)],
        }
    }

    fn ends_unit(&self, tok: usize) -> bool {
        Self::TOKENS[tok].starts_with(BOUNDARY) || tok == 7
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::new();
        while out.len() < IV_MAX_TOKENS {
            let dist = self.next(&out);
            let probs: Vec<f64> = dist.iter().map(|d| d.1).collect();
            let tok = dist[draw(&probs, rng)].0;
            if !out.is_empty() && self.ends_unit(tok) {
                break;
            }
            out.push(tok);
        }
        out
    }

    /// Every complete continuation with its probability.
    pub fn enumerate(&self) -> Vec<(Vec<usize>, f64)> {
        fn walk(lm: &EnumerableToyLm, prefix: Vec<usize>, p: f64, out: &mut Vec<(Vec<usize>, f64)>) {
            if prefix.len() == IV_MAX_TOKENS {
                out.push((prefix, p));
                return;
            }
            let mut stop = 0.0;
            for (tok, q) in lm.next(&prefix) {
                if !prefix.is_empty() && lm.ends_unit(tok) {
                    stop += q;
                } else {
                    let mut next = prefix.clone();
                    next.push(tok);
                    walk(lm, next, p * q, out);
                }
            }
            if stop > 0.0 {
                out.push((prefix, p * stop));
            }
        }
        let mut out = Vec::new();
        walk(self, Vec::new(), 1.0, &mut out);
        out.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Vec<usize>, f64)> = Vec::new();
        for (c, p) in out {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += p,
                _ => merged.push((c, p)),
            }
        }
        merged
    }

    pub fn pooled(&self, tokens: &[usize]) -> Vec<f64> {
        let mut acc = [0.0; 2];
        for &t in tokens {
            let e = Self::embedding(t);
            acc[0] += e[0];
            acc[1] += e[1];
        }
        acc.iter().map(|v| v / tokens.len() as f64).collect()
    }

    pub fn observed(&self) -> Vec<usize> {
        vec![0]
    }

    pub fn distance(&self, continuation: &[usize]) -> f64 {
        cosine_distance(&self.pooled(&self.observed()), &self.pooled(continuation))
    }

    /// Expected distance as a finite sum over all continuations.
    pub fn exact_information_value(&self) -> f64 {
        self.enumerate().iter().map(|(c, p)| p * self.distance(c)).sum()
    }

    /// Exact variance of the distance over continuations.
    pub fn distance_variance(&self) -> f64 {
        let m = self.exact_information_value();
        self.enumerate().iter().map(|(c, p)| p * (self.distance(c) - m).powi(2)).sum()
    }

    /// A sample list of size `n` containing each continuation exactly
    /// `p * n` times, or an error when `n` does not make that integral.
    pub fn full_enumeration(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(n);
        for (c, p) in self.enumerate() {
            let k = p * n as f64;
            if (k - k.round()).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "{n} samples cannot represent probability {p} exactly"
                )));
            }
            out.extend(std::iter::repeat_n(c, k.round() as usize));
        }
        Ok(out)
    }

    /// A one-unit document trace whose distance samples are `samples`.
    pub fn document_trace(&self, doc_id: &str, samples: &[Vec<usize>]) -> DocumentTrace {
        let h = Self::embedding(0);
        DocumentTrace {
            doc_id: doc_id.to_string(),
            tokens: vec![Self::TOKENS[0].to_string()],
            unit_index_of_token: vec![0],
            layers_exported: vec![1],
            final_surprisal: vec![std::f32::consts::LN_2],
            logitlens_surprisal: Tensor {
                dims: vec![1, 1],
                data: vec![std::f32::consts::LN_2],
            },
            hidden_states: Tensor {
                dims: vec![1, 1, 2],
                data: h.iter().map(|v| *v as f32).collect(),
            },
            iv_distances: Tensor {
                dims: vec![1, 1, samples.len()],
                data: samples.iter().map(|s| self.distance(s) as f32).collect(),
            },
            has_eos_row: false,
        }
    }

    pub fn manifest(&self, samples: usize) -> TraceManifest {
        TraceManifest::new("enumerable-toy", 1, 2, Self::TOKENS.len(), vec![1], samples)
    }
}
