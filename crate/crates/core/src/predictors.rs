//! Unit-level predictors derived from a document trace, and the design
//! matrices that feed the regressions.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::{AlignmentMap, Measure, UnitTable};
use crate::error::{io_err, Error, Result};
use crate::trace::DocumentTrace;

/// Predictor family of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Baseline,
    Surprisal,
    LogitLens,
    InfoValue,
    Representation,
    ReprSurprisal,
    ReprInfoValue,
    ReprLogitLens,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Baseline,
        Family::Surprisal,
        Family::LogitLens,
        Family::InfoValue,
        Family::Representation,
        Family::ReprSurprisal,
        Family::ReprInfoValue,
        Family::ReprLogitLens,
    ];

    pub fn is_layerwise(self) -> bool {
        !matches!(self, Family::Baseline | Family::Surprisal)
    }

    pub fn is_combined(self) -> bool {
        matches!(
            self,
            Family::ReprSurprisal | Family::ReprInfoValue | Family::ReprLogitLens
        )
    }

    pub fn uses_representation(self) -> bool {
        self == Family::Representation || self.is_combined()
    }

    /// The scalar family a combined setting adds to the representation.
    pub fn scalar_partner(self) -> Option<Family> {
        match self {
            Family::ReprSurprisal => Some(Family::Surprisal),
            Family::ReprInfoValue => Some(Family::InfoValue),
            Family::ReprLogitLens => Some(Family::LogitLens),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::Surprisal => "surprisal",
            Family::LogitLens => "logitlens",
            Family::InfoValue => "infovalue",
            Family::Representation => "representation",
            Family::ReprSurprisal => "repr+surprisal",
            Family::ReprInfoValue => "repr+infovalue",
            Family::ReprLogitLens => "repr+logitlens",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accepts the display name (`repr+surprisal`), the variant name or its
/// snake_case form (`repr_surprisal`).
impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s || format!("{f:?}").eq_ignore_ascii_case(&s.replace('_', "")))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor family {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub family: Family,
    pub layer: Option<usize>,
    pub include_baseline: bool,
}

impl PredictorConfig {
    /// Fails unless `layer` is given exactly for layer-wise families.
    pub fn new(family: Family, layer: Option<usize>) -> Result<Self> {
        if family.is_layerwise() != layer.is_some() {
            return Err(Error::InvalidArgument(format!(
                "family {family} {} a layer",
                if family.is_layerwise() { "requires" } else { "takes no" }
            )));
        }
        Ok(Self {
            family,
            layer,
            include_baseline: true,
        })
    }

    pub fn baseline() -> Self {
        Self::new(Family::Baseline, None).unwrap()
    }

    pub fn label(&self) -> String {
        match self.layer {
            Some(l) => format!("{}@{}", self.family, l),
            None => self.family.to_string(),
        }
    }
}

fn check_alignment(trace: &DocumentTrace, align: &AlignmentMap) -> Result<()> {
    if align.token_count() != trace.unit_token_count() {
        return Err(Error::Shape(format!(
            "{}: alignment covers {} tokens, trace has {}",
            trace.doc_id,
            align.token_count(),
            trace.unit_token_count()
        )));
    }
    Ok(())
}

fn slot(trace: &DocumentTrace, layer: usize) -> Result<usize> {
    trace.layer_slot(layer).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{}: layer {layer} not exported (have {:?})",
            trace.doc_id, trace.layers_exported
        ))
    })
}

/// Sum of the final-head token surprisals over each unit's span (nats).
pub fn unit_surprisal(trace: &DocumentTrace, align: &AlignmentMap) -> Result<Vec<f64>> {
    check_alignment(trace, align)?;
    Ok(align
        .spans
        .iter()
        .map(|s| s.clone().map(|t| trace.final_surprisal[t] as f64).sum())
        .collect())
}

/// Sum of the logit-lens token surprisals at `layer` over each unit's span.
pub fn unit_logitlens_surprisal(
    trace: &DocumentTrace,
    align: &AlignmentMap,
    layer: usize,
) -> Result<Vec<f64>> {
    check_alignment(trace, align)?;
    let j = slot(trace, layer)?;
    Ok(align
        .spans
        .iter()
        .map(|s| {
            s.clone()
                .map(|t| trace.logitlens_surprisal.at2(t, j) as f64)
                .sum()
        })
        .collect())
}

/// Mean of the hidden states of each unit's tokens at `layer`, `[U x d]`.
pub fn pool_unit_representation(
    trace: &DocumentTrace,
    align: &AlignmentMap,
    layer: usize,
) -> Result<DMatrix<f64>> {
    check_alignment(trace, align)?;
    let j = slot(trace, layer)?;
    let d = trace.hidden_dim();
    let mut out = DMatrix::zeros(align.unit_count(), d);
    for (u, span) in align.spans.iter().enumerate() {
        let n = span.len() as f64;
        for t in span.clone() {
            for (k, v) in trace.hidden_states.row3(t, j).iter().enumerate() {
                out[(u, k)] += *v as f64;
            }
        }
        out.row_mut(u).unscale_mut(n);
    }
    Ok(out)
}

/// Monte Carlo information value: the mean of the stored distance samples
/// of each unit at `layer`.
pub fn information_value(trace: &DocumentTrace, layer: usize) -> Result<Vec<f64>> {
    let j = slot(trace, layer)?;
    let n = trace.iv_sample_count();
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: no information-value samples",
            trace.doc_id
        )));
    }
    let units = trace.iv_distances.dims[0];
    Ok((0..units)
        .map(|u| {
            let row = trace.iv_distances.row3(u, j);
            row.iter().map(|&v| v as f64).sum::<f64>() / n as f64
        })
        .collect())
}

/// Word frequency counts. Unknown words count 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    pub fn new(counts: HashMap<String, u64>) -> Self {
        Self { counts }
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Two columns `token<TAB or comma>count`; a non-numeric first line is a header.
    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let mut counts = HashMap::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(io_err("<frequency table>"))?;
            if line.trim().is_empty() {
                continue;
            }
            let (word, count) = line
                .rsplit_once('\t')
                .or_else(|| line.rsplit_once(','))
                .ok_or_else(|| Error::Corpus(format!("frequency line {}: expected two columns", i + 1)))?;
            match count.trim().parse::<u64>() {
                Ok(c) => {
                    counts.insert(word.to_string(), c);
                }
                Err(_) if i == 0 => continue,
                Err(_) => {
                    return Err(Error::Corpus(format!(
                        "frequency line {}: bad count {count:?}",
                        i + 1
                    )))
                }
            }
        }
        Ok(Self { counts })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::from_reader(f)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut entries: Vec<_> = self.counts.iter().collect();
        entries.sort();
        writeln!(out, "token\tcount").map_err(io_err("<frequency table>"))?;
        for (w, c) in entries {
            writeln!(out, "{w}\t{c}").map_err(io_err("<frequency table>"))?;
        }
        Ok(())
    }
}

pub const BASELINE_NAMES: [&str; 3] = ["length", "log_frequency", "position"];

/// Named control columns for one document, `[U x B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineColumns {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Character length, `ln(1 + count)` and position scaled to `[0, 1]`.
pub fn baseline_features(table: &UnitTable, freq: &FrequencyTable) -> BaselineColumns {
    let u = table.len();
    let mut values = DMatrix::zeros(u, 3);
    for (i, w) in table.units.iter().enumerate() {
        values[(i, 0)] = w.chars().count() as f64;
        values[(i, 1)] = (freq.count(w) as f64).ln_1p();
        values[(i, 2)] = if u > 1 { i as f64 / (u - 1) as f64 } else { 0.0 };
    }
    BaselineColumns {
        names: BASELINE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    }
}

/// Everything needed to build design matrices for one document.
#[derive(Debug, Clone)]
pub struct DocInputs {
    pub trace: DocumentTrace,
    pub align: AlignmentMap,
    pub table: UnitTable,
    pub baseline: BaselineColumns,
}

impl DocInputs {
    pub fn doc_id(&self) -> &str {
        &self.table.doc_id
    }
}

/// Identifies the source of a design-matrix row. `unit == None` marks the
/// end-of-string wrap-up row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowId {
    pub doc_id: String,
    pub unit: Option<usize>,
    pub participant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: Family,
    pub layer: Option<usize>,
    pub measure: Measure,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub rows: Vec<RowId>,
    pub provenance: Provenance,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Row-wise concatenation; all parts must share columns.
    pub fn stack(parts: &[&DesignMatrix]) -> Result<DesignMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to stack".into()))?;
        let d = first.n_cols();
        if let Some(bad) = parts.iter().find(|p| p.feature_names != first.feature_names) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.n_cols(),
            });
        }
        let n: usize = parts.iter().map(|p| p.n_rows()).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut rows = Vec::with_capacity(n);
        let mut doc_ids = Vec::new();
        let mut at = 0;
        for p in parts {
            x.rows_mut(at, p.n_rows()).copy_from(&p.x);
            y.rows_mut(at, p.n_rows()).copy_from(&p.y);
            rows.extend(p.rows.iter().cloned());
            doc_ids.extend(p.provenance.doc_ids.iter().cloned());
            at += p.n_rows();
        }
        Ok(DesignMatrix {
            x,
            y,
            feature_names: first.feature_names.clone(),
            rows,
            provenance: Provenance {
                doc_ids,
                ..first.provenance.clone()
            },
        })
    }

    /// Delimited export: one column per feature, then the response.
    pub fn write_delimited<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["doc_id".to_string(), "unit".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push("y".into());
        w.write_record(&header)?;
        for (i, id) in self.rows.iter().enumerate() {
            let mut rec = vec![
                id.doc_id.clone(),
                id.unit.map_or_else(|| "EOS".into(), |u| u.to_string()),
            ];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err("<design matrix>"))?;
        Ok(())
    }
}

/// Unit-by-feature matrix for one document (no response, no row filtering).
/// With `wrap_up`, an extra final row holds the end-of-string position.
pub fn unit_features(
    config: &PredictorConfig,
    inputs: &DocInputs,
    wrap_up: bool,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let trace = &inputs.trace;
    let align = &inputs.align;
    let u = align.unit_count();
    if inputs.table.len() != u || inputs.baseline.values.nrows() != u {
        return Err(Error::Shape(format!(
            "{}: {} units in table, {} in alignment, {} baseline rows",
            inputs.doc_id(),
            inputs.table.len(),
            u,
            inputs.baseline.values.nrows()
        )));
    }
    if wrap_up && !trace.has_eos_row {
        return Err(Error::InvalidArgument(format!(
            "{}: wrap-up row requested but the trace has no end-of-string row",
            trace.doc_id
        )));
    }
    let rows = u + usize::from(wrap_up);
    let eos = trace.token_count() - 1;
    let mut blocks: Vec<(DMatrix<f64>, Vec<String>)> = Vec::new();
    blocks.push((DMatrix::from_element(rows, 1, 1.0), vec!["intercept".into()]));

    if config.include_baseline || config.family == Family::Baseline {
        let b = &inputs.baseline;
        let mut m = DMatrix::zeros(rows, b.values.ncols());
        m.rows_mut(0, u).copy_from(&b.values);
        if wrap_up {
            // No word at the end of the string: zero length and frequency,
            // position one past the last unit.
            let pos = b.names.iter().position(|n| n == "position");
            if let Some(p) = pos {
                m[(u, p)] = 1.0;
            }
        }
        blocks.push((m, b.names.clone()));
    }

    let layer = config.layer;
    let need_layer = || {
        layer.ok_or_else(|| Error::InvalidArgument(format!("{} requires a layer", config.family)))
    };
    if config.family.uses_representation() {
        let l = need_layer()?;
        let pooled = pool_unit_representation(trace, align, l)?;
        let d = pooled.ncols();
        let mut m = DMatrix::zeros(rows, d);
        m.rows_mut(0, u).copy_from(&pooled);
        if wrap_up {
            let j = slot(trace, l)?;
            for (k, v) in trace.hidden_states.row3(eos, j).iter().enumerate() {
                m[(u, k)] = *v as f64;
            }
        }
        blocks.push((m, (0..d).map(|k| format!("h{l}_{k}")).collect()));
    }
    let scalar = match config.family {
        Family::Surprisal | Family::ReprSurprisal => {
            let mut v = unit_surprisal(trace, align)?;
            if wrap_up {
                v.push(trace.final_surprisal[eos] as f64);
            }
            Some((v, "surprisal".to_string()))
        }
        Family::LogitLens | Family::ReprLogitLens => {
            let l = need_layer()?;
            let mut v = unit_logitlens_surprisal(trace, align, l)?;
            if wrap_up {
                v.push(trace.logitlens_surprisal.at2(eos, slot(trace, l)?) as f64);
            }
            Some((v, format!("logitlens_{l}")))
        }
        Family::InfoValue | Family::ReprInfoValue => {
            let l = need_layer()?;
            if wrap_up {
                return Err(Error::InvalidArgument(
                    "information value is undefined at the end-of-string position".into(),
                ));
            }
            let v = information_value(trace, l)?;
            if v.len() != u {
                return Err(Error::Shape(format!(
                    "{}: {} information-value rows for {u} units",
                    trace.doc_id,
                    v.len()
                )));
            }
            Some((v, format!("infovalue_{l}")))
        }
        _ => None,
    };
    if let Some((v, name)) = scalar {
        blocks.push((DMatrix::from_column_slice(rows, 1, &v), vec![name]));
    }

    let d: usize = blocks.iter().map(|(m, _)| m.ncols()).sum();
    let mut x = DMatrix::zeros(rows, d);
    let mut names = Vec::with_capacity(d);
    let mut at = 0;
    for (m, n) in blocks {
        x.columns_mut(at, m.ncols()).copy_from(&m);
        at += m.ncols();
        names.extend(n);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{}: predictors for {}",
            inputs.doc_id(),
            config.label()
        )));
    }
    Ok((x, names))
}

/// Design matrix on participant-averaged reading times. Units with a
/// missing response are dropped. The wrap-up row is added when requested,
/// the trace carries an end-of-string row and the table records a wrap-up
/// time for `measure`.
pub fn build_design_matrix(
    config: &PredictorConfig,
    inputs: &DocInputs,
    measure: Measure,
    include_wrap_up: bool,
) -> Result<DesignMatrix> {
    let wrap = include_wrap_up
        && inputs.trace.has_eos_row
        && inputs.table.wrap_up.and_then(|m| m.get(measure)).is_some();
    let (features, names) = unit_features(config, inputs, wrap)?;
    let mut keep = Vec::new();
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (u, m) in inputs.table.aggregated.iter().enumerate() {
        if let Some(v) = m.get(measure) {
            keep.push(u);
            y.push(v);
            rows.push(RowId {
                doc_id: inputs.doc_id().to_string(),
                unit: Some(u),
                participant: None,
            });
        }
    }
    if wrap {
        keep.push(inputs.table.len());
        y.push(inputs.table.wrap_up.unwrap().get(measure).unwrap());
        rows.push(RowId {
            doc_id: inputs.doc_id().to_string(),
            unit: None,
            participant: None,
        });
    }
    Ok(DesignMatrix {
        x: features.select_rows(keep.iter()),
        y: DVector::from_vec(y),
        feature_names: names,
        rows,
        provenance: Provenance {
            family: config.family,
            layer: config.layer,
            measure,
            doc_ids: vec![inputs.doc_id().to_string()],
        },
    })
}

/// Design matrix on individual participants' reading times: one row per
/// (participant, unit) with a recorded value, ordered by participant then unit.
pub fn build_participant_design(
    config: &PredictorConfig,
    inputs: &DocInputs,
    measure: Measure,
) -> Result<DesignMatrix> {
    let (features, names) = unit_features(config, inputs, false)?;
    let mut keep = Vec::new();
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for ((participant, u), m) in &inputs.table.per_participant {
        if let Some(v) = m.get(measure) {
            keep.push(*u);
            y.push(v);
            rows.push(RowId {
                doc_id: inputs.doc_id().to_string(),
                unit: Some(*u),
                participant: Some(participant.clone()),
            });
        }
    }
    Ok(DesignMatrix {
        x: features.select_rows(keep.iter()),
        y: DVector::from_vec(y),
        feature_names: names,
        rows,
        provenance: Provenance {
            family: config.family,
            layer: config.layer,
            measure,
            doc_ids: vec![inputs.doc_id().to_string()],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Measures;
    use crate::trace::Tensor;
    use std::collections::BTreeMap;

    /// Two units: "ab" = tokens 0..2, "c" = token 2.
    fn trace() -> DocumentTrace {
        DocumentTrace {
            doc_id: "d".into(),
            tokens: vec!["▁a".into(), "b".into(), "▁c".into()],
            unit_index_of_token: vec![0, 0, 1],
            layers_exported: vec![1, 2],
            final_surprisal: vec![1.2, 0.8, 3.5],
            logitlens_surprisal: Tensor::new(vec![3, 2], vec![0.5, 1.0, 0.5, 2.0, 0.25, 3.0])
                .unwrap(),
            hidden_states: Tensor::new(
                vec![3, 2, 2],
                vec![0.0, 2.0, 1.0, 1.0, 2.0, 0.0, 3.0, 3.0, 5.0, 6.0, 7.0, 8.0],
            )
            .unwrap(),
            iv_distances: Tensor::new(vec![2, 2, 2], vec![0.2, 0.4, 0.0, 0.0, 1.0, 1.0, 2.0, 0.0])
                .unwrap(),
            has_eos_row: false,
        }
    }

    fn align() -> AlignmentMap {
        AlignmentMap::from_unit_indices(&[0, 0, 1]).unwrap()
    }

    fn inputs() -> DocInputs {
        let table = UnitTable {
            doc_id: "d".into(),
            language: "en".into(),
            units: vec!["ab".into(), "c".into()],
            aggregated: vec![
                Measures { ffd: Some(200.0), gd: Some(210.0), trt: None },
                Measures { ffd: Some(250.0), gd: Some(260.0), trt: Some(300.0) },
            ],
            per_participant: BTreeMap::new(),
            wrap_up: None,
        };
        let baseline = baseline_features(&table, &FrequencyTable::default());
        DocInputs { trace: trace(), align: align(), table, baseline }
    }

    #[test]
    fn surprisal_sums_over_span() {
        let s = unit_surprisal(&trace(), &align()).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-6);
        assert!((s[1] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn surprisal_matches_probability_table() {
        // Conditional probabilities of a three-symbol toy LM, looked up by hand.
        let p = [[0.5, 0.25, 0.25], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6]];
        let start = [0.7, 0.2, 0.1];
        let seq = [0usize, 2, 1];
        let mut per_token = vec![-(start[seq[0]] as f64).ln() as f32];
        for w in seq.windows(2) {
            per_token.push(-(p[w[0]][w[1]] as f64).ln() as f32);
        }
        let mut tr = trace();
        tr.final_surprisal = per_token;
        let s = unit_surprisal(&tr, &align()).unwrap();
        let expected_first = -(0.7f64 * 0.25).ln();
        assert!((s[0] - expected_first).abs() < 1e-6);
        assert!((s[1] + (0.2f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn logitlens_sums_and_rejects_unknown_layer() {
        let v = unit_logitlens_surprisal(&trace(), &align(), 1).unwrap();
        assert_eq!(v, vec![1.0, 0.25]);
        assert!(unit_logitlens_surprisal(&trace(), &align(), 3).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_two() {
        // h = 0, W = I, b = 0 over two classes: uniform softmax.
        let logits = [0.0f64, 0.0];
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        let surprisal = lse - logits[0];
        assert!((surprisal - std::f64::consts::LN_2).abs() < 1e-12);
        let mut tr = trace();
        tr.logitlens_surprisal.data.fill(surprisal as f32);
        let v = unit_logitlens_surprisal(&tr, &AlignmentMap::from_unit_indices(&[0, 1, 2]).unwrap(), 2);
        // Alignment with three units does not fit the two-unit table but the
        // per-token values stand alone.
        assert!((v.unwrap()[2] - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn pooling_is_mean_of_span() {
        let p = pool_unit_representation(&trace(), &align(), 1).unwrap();
        // tokens [0,2] and [2,0] -> [1,1]
        assert_eq!(p.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(p.row(1).iter().copied().collect::<Vec<_>>(), vec![5.0, 6.0]);
        let mut tr = trace();
        tr.hidden_states = Tensor::new(vec![3, 2, 2], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 3.0, 3.0, 0.0, 0.0]).unwrap();
        let p = pool_unit_representation(&tr, &AlignmentMap::from_unit_indices(&[0, 0, 0]).unwrap(), 1).unwrap();
        assert_eq!(p.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 2.0]);
    }

    #[test]
    fn information_value_is_sample_mean() {
        let iv = information_value(&trace(), 1).unwrap();
        assert!((iv[0] - 0.3).abs() < 1e-7);
        assert!((iv[1] - 1.0).abs() < 1e-12);
        assert_eq!(information_value(&trace(), 2).unwrap()[0], 0.0);
        let mut tr = trace();
        tr.iv_distances = Tensor::zeros(vec![2, 2, 0]);
        assert!(information_value(&tr, 1).is_err());
    }

    #[test]
    fn baseline_feature_definition() {
        let mut counts = HashMap::new();
        counts.insert("cat".to_string(), 100);
        let freq = FrequencyTable::new(counts);
        let mut units: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        units[0] = "cat".into();
        let table = UnitTable {
            doc_id: "x".into(),
            language: String::new(),
            aggregated: vec![Measures::default(); 10],
            units,
            per_participant: BTreeMap::new(),
            wrap_up: None,
        };
        let b = baseline_features(&table, &freq);
        assert_eq!(b.values.row(0).iter().copied().collect::<Vec<_>>(), vec![3.0, 101f64.ln(), 0.0]);
        assert_eq!(b.values[(1, 1)], 0.0);
        assert_eq!(b.values[(9, 2)], 1.0);
    }

    #[test]
    fn design_matrix_composition() {
        let inp = inputs();
        let base = build_design_matrix(&PredictorConfig::baseline(), &inp, Measure::Ffd, false).unwrap();
        assert_eq!(base.n_cols(), 1 + 3);
        let repr = PredictorConfig::new(Family::Representation, Some(2)).unwrap();
        let r = build_design_matrix(&repr, &inp, Measure::Ffd, false).unwrap();
        assert_eq!(r.n_cols(), 1 + 3 + 2);
        let combo = PredictorConfig::new(Family::ReprSurprisal, Some(2)).unwrap();
        let c = build_design_matrix(&combo, &inp, Measure::Ffd, false).unwrap();
        assert_eq!(c.n_cols(), r.n_cols() + 1);
        assert!(c.x.column(0).iter().all(|&v| v == 1.0));
        // TRT missing for unit 0
        let t = build_design_matrix(&combo, &inp, Measure::Trt, false).unwrap();
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.y[0], 300.0);
    }

    #[test]
    fn config_layer_invariant() {
        assert!(PredictorConfig::new(Family::Representation, None).is_err());
        assert!(PredictorConfig::new(Family::Surprisal, Some(1)).is_err());
        assert!(PredictorConfig::new(Family::LogitLens, Some(1)).is_ok());
    }

    #[test]
    fn wrap_up_row_appended() {
        let mut inp = inputs();
        inp.trace.tokens.push("</s>".into());
        inp.trace.unit_index_of_token.push(2);
        inp.trace.final_surprisal.push(0.5);
        inp.trace.logitlens_surprisal.dims[0] = 4;
        inp.trace.logitlens_surprisal.data.extend([0.1, 0.2]);
        inp.trace.hidden_states.dims[0] = 4;
        inp.trace.hidden_states.data.extend([9.0, 9.0, 1.0, 1.0]);
        inp.trace.has_eos_row = true;
        inp.table.wrap_up = Some(Measures { ffd: Some(400.0), gd: None, trt: None });
        let cfg = PredictorConfig::new(Family::Surprisal, None).unwrap();
        let dm = build_design_matrix(&cfg, &inp, Measure::Ffd, true).unwrap();
        assert_eq!(dm.n_rows(), 3);
        assert_eq!(dm.y[2], 400.0);
        assert_eq!(dm.rows[2].unit, None);
        assert!((dm.x[(2, 4)] - 0.5).abs() < 1e-12);
        // no wrap-up time for GD: row omitted
        assert_eq!(build_design_matrix(&cfg, &inp, Measure::Gd, true).unwrap().n_rows(), 2);
        let iv = PredictorConfig::new(Family::InfoValue, Some(1)).unwrap();
        assert!(build_design_matrix(&iv, &inp, Measure::Ffd, true).is_err());
    }

    #[test]
    fn frequency_table_parsing() {
        let f = FrequencyTable::from_reader("token\tcount\nthe\t50\ncat,3\n".as_bytes()).unwrap();
        assert_eq!(f.count("the"), 50);
        assert_eq!(f.count("cat"), 3);
        assert_eq!(f.count("dog"), 0);
    }
}
