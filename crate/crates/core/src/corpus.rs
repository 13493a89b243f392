//! Eye-tracking corpora: word-level reading measures, per-unit aggregation,
//! token-to-unit alignment and the document-level tuning holdout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Eye-tracking measure used as the regression response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "FFD")]
    Ffd,
    #[serde(rename = "GD")]
    Gd,
    #[serde(rename = "TRT")]
    Trt,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Ffd, Measure::Gd, Measure::Trt];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Ffd => "FFD",
            Measure::Gd => "GD",
            Measure::Trt => "TRT",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FFD" => Ok(Measure::Ffd),
            "GD" => Ok(Measure::Gd),
            "TRT" => Ok(Measure::Trt),
            other => Err(Error::InvalidArgument(format!("unknown measure {other}"))),
        }
    }
}

/// First fixation, gaze duration and total reading time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measures {
    pub ffd: Option<f64>,
    pub gd: Option<f64>,
    pub trt: Option<f64>,
}

impl Measures {
    pub fn get(&self, m: Measure) -> Option<f64> {
        match m {
            Measure::Ffd => self.ffd,
            Measure::Gd => self.gd,
            Measure::Trt => self.trt,
        }
    }

    /// `ffd <= gd <= trt`, checked only when all three are present.
    pub fn ordering_ok(&self) -> bool {
        match (self.ffd, self.gd, self.trt) {
            (Some(f), Some(g), Some(t)) => f <= g && g <= t,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub doc_id: String,
    pub participant_id: String,
    pub unit_index: usize,
    pub unit_text: String,
    pub measures: Measures,
    pub language: Option<String>,
    /// Set when `ffd <= gd <= trt` does not hold. Such rows are kept.
    pub ordering_violation: bool,
}

/// Maps corpus columns onto record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub doc_id: String,
    pub participant_id: String,
    pub unit_index: String,
    pub unit_text: String,
    pub ffd: String,
    pub gd: String,
    pub trt: String,
    #[serde(default)]
    pub language: Option<String>,
    /// Value of the first unit index in the file (Provo and MECO count from 1).
    #[serde(default)]
    pub index_base: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

fn default_delimiter() -> char {
    ','
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "NA".to_string()]
}

impl ColumnSchema {
    /// Column layout written by the synthetic generator and by
    /// [`UnitTable::write_delimited`].
    pub fn native() -> Self {
        Self {
            doc_id: "doc_id".into(),
            participant_id: "participant_id".into(),
            unit_index: "unit_index".into(),
            unit_text: "unit_text".into(),
            ffd: "ffd".into(),
            gd: "gd".into(),
            trt: "trt".into(),
            language: Some("language".into()),
            index_base: 0,
            delimiter: ',',
            missing: default_missing(),
        }
    }

    /// Provo eye-tracking data export.
    pub fn provo() -> Self {
        Self {
            doc_id: "Text_ID".into(),
            participant_id: "Participant_ID".into(),
            unit_index: "Word_Number".into(),
            unit_text: "Word".into(),
            ffd: "IA_FIRST_FIXATION_DURATION".into(),
            gd: "IA_FIRST_RUN_DWELL_TIME".into(),
            trt: "IA_DWELL_TIME".into(),
            language: None,
            index_base: 1,
            delimiter: ',',
            missing: vec![String::new(), "NA".into(), ".".into()],
        }
    }

    /// MECO word-level release.
    pub fn meco() -> Self {
        Self {
            doc_id: "trialid".into(),
            participant_id: "uniform_id".into(),
            unit_index: "ianum".into(),
            unit_text: "ia".into(),
            ffd: "firstfix.dur".into(),
            gd: "firstrun.dur".into(),
            trt: "dur".into(),
            language: Some("lang".into()),
            index_base: 1,
            delimiter: ',',
            missing: default_missing(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "native" | "synth" => Ok(Self::native()),
            "provo" => Ok(Self::provo()),
            "meco" => Ok(Self::meco()),
            other => Err(Error::InvalidArgument(format!("unknown schema preset {other}"))),
        }
    }

    fn columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.doc_id.as_str(),
            self.participant_id.as_str(),
            self.unit_index.as_str(),
            self.unit_text.as_str(),
            self.ffd.as_str(),
            self.gd.as_str(),
            self.trt.as_str(),
        ];
        if let Some(l) = &self.language {
            cols.push(l);
        }
        cols
    }

    /// Schema columns absent from `header`.
    pub fn unknown_columns(&self, header: &[String]) -> Vec<String> {
        self.columns()
            .into_iter()
            .filter(|c| !header.iter().any(|h| h == c))
            .map(str::to_string)
            .collect()
    }
}

/// Records parsed from a corpus file plus the rows flagged on the way.
#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub records: Vec<ReadingRecord>,
    /// Human-readable flags, e.g. "measure ordering violated".
    pub flags: Vec<String>,
}

pub fn parse_corpus(path: &Path, schema: &ColumnSchema) -> Result<ParsedCorpus> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    parse_corpus_reader(file, schema)
}

/// Reads the header of a corpus file.
pub fn read_header(path: &Path, schema: &ColumnSchema) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv_reader(file, schema);
    Ok(rdr.headers()?.iter().map(str::to_string).collect())
}

fn csv_reader<R: Read>(input: R, schema: &ColumnSchema) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(false)
        .from_reader(input)
}

pub fn parse_corpus_reader<R: Read>(input: R, schema: &ColumnSchema) -> Result<ParsedCorpus> {
    let mut rdr = csv_reader(input, schema);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let unknown = schema.unknown_columns(&header);
    if !unknown.is_empty() {
        return Err(Error::Corpus(format!(
            "unknown column(s): {}",
            unknown.join(", ")
        )));
    }
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (c_doc, c_part, c_idx, c_text) = (
        col(&schema.doc_id),
        col(&schema.participant_id),
        col(&schema.unit_index),
        col(&schema.unit_text),
    );
    let (c_ffd, c_gd, c_trt) = (col(&schema.ffd), col(&schema.gd), col(&schema.trt));
    let c_lang = schema.language.as_deref().map(col);

    let mut out = ParsedCorpus::default();
    let mut seen = HashSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let measure = |i: usize, name: &str| -> Result<Option<f64>> {
            let raw = field(i);
            if schema.missing.iter().any(|m| m == raw) {
                return Ok(None);
            }
            let v: f64 = raw.parse().map_err(|_| {
                Error::Corpus(format!("line {line}: non-numeric {name} value {raw:?}"))
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Corpus(format!(
                    "line {line}: {name} must be a non-negative duration, got {raw}"
                )));
            }
            Ok(Some(v))
        };
        let raw_idx = field(c_idx);
        let idx: usize = raw_idx
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= schema.index_base as f64)
            .map(|v| v as usize - schema.index_base)
            .ok_or_else(|| Error::Corpus(format!("line {line}: bad unit index {raw_idx:?}")))?;
        let measures = Measures {
            ffd: measure(c_ffd, "ffd")?,
            gd: measure(c_gd, "gd")?,
            trt: measure(c_trt, "trt")?,
        };
        let record = ReadingRecord {
            doc_id: field(c_doc).to_string(),
            participant_id: field(c_part).to_string(),
            unit_index: idx,
            unit_text: field(c_text).to_string(),
            ordering_violation: !measures.ordering_ok(),
            measures,
            language: c_lang.map(|c| field(c).to_string()),
        };
        if !seen.insert((
            record.doc_id.clone(),
            record.participant_id.clone(),
            record.unit_index,
        )) {
            return Err(Error::Corpus(format!(
                "line {line}: duplicate key (doc {}, participant {}, unit {})",
                record.doc_id, record.participant_id, record.unit_index
            )));
        }
        if record.ordering_violation {
            out.flags.push(format!(
                "line {line}: measure ordering violated (doc {}, participant {}, unit {})",
                record.doc_id, record.participant_id, record.unit_index
            ));
        }
        out.records.push(record);
    }
    Ok(out)
}

/// Per-unit reading times of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTable {
    pub doc_id: String,
    pub language: String,
    /// Unit texts; the position of a unit is its index here.
    pub units: Vec<String>,
    /// Participant mean of each measure over non-missing values.
    pub aggregated: Vec<Measures>,
    pub per_participant: BTreeMap<(String, usize), Measures>,
    /// End-of-passage reading time, when the corpus records one.
    #[serde(default)]
    pub wrap_up: Option<Measures>,
}

impl UnitTable {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Writes the aggregated table in the native delimited layout with
    /// participant id `mean`.
    pub fn write_delimited<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["doc_id", "participant_id", "unit_index", "unit_text", "ffd", "gd", "trt", "language"])?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        for (i, (text, m)) in self.units.iter().zip(&self.aggregated).enumerate() {
            w.write_record([
                self.doc_id.clone(),
                "mean".into(),
                i.to_string(),
                text.clone(),
                cell(m.ffd),
                cell(m.gd),
                cell(m.trt),
                self.language.clone(),
            ])?;
        }
        w.flush().map_err(io_err("<unit table>"))?;
        Ok(())
    }
}

/// Unit text marking the end-of-passage position. A document whose last unit
/// carries it gets that row's times as its wrap-up measures.
pub const WRAP_UP_UNIT: &str = "</s>";

/// Groups records by document and averages each measure over participants.
pub fn aggregate(records: &[ReadingRecord]) -> Result<BTreeMap<String, UnitTable>> {
    let mut by_doc: BTreeMap<&str, Vec<&ReadingRecord>> = BTreeMap::new();
    for r in records {
        by_doc.entry(&r.doc_id).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (doc_id, recs) in by_doc {
        let n_units = recs.iter().map(|r| r.unit_index).max().unwrap() + 1;
        let mut texts: Vec<Option<&str>> = vec![None; n_units];
        let mut sums = vec![[(0.0f64, 0usize); 3]; n_units];
        let mut per_participant = BTreeMap::new();
        let mut language = None;
        for r in &recs {
            match texts[r.unit_index] {
                None => texts[r.unit_index] = Some(&r.unit_text),
                Some(t) if t != r.unit_text => {
                    return Err(Error::Corpus(format!(
                        "doc {doc_id}: conflicting unit_text at index {}: {t:?} vs {:?}",
                        r.unit_index, r.unit_text
                    )))
                }
                Some(_) => {}
            }
            if per_participant
                .insert((r.participant_id.clone(), r.unit_index), r.measures)
                .is_some()
            {
                return Err(Error::Corpus(format!(
                    "doc {doc_id}: duplicate row for participant {} at index {}",
                    r.participant_id, r.unit_index
                )));
            }
            if language.is_none() {
                language = r.language.clone();
            }
        }
        // Summing in participant order keeps the means independent of row order.
        for ((_, u), m) in &per_participant {
            for (k, measure) in Measure::ALL.iter().enumerate() {
                if let Some(v) = m.get(*measure) {
                    sums[*u][k].0 += v;
                    sums[*u][k].1 += 1;
                }
            }
        }
        let units = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                t.map(str::to_string).ok_or_else(|| {
                    Error::Corpus(format!("doc {doc_id}: unit positions not contiguous (missing {i})"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let mut aggregated: Vec<Measures> = sums
            .iter()
            .map(|s| Measures {
                ffd: mean(s[0]),
                gd: mean(s[1]),
                trt: mean(s[2]),
            })
            .collect();
        let mut units = units;
        let mut wrap_up = None;
        if units.last().map(String::as_str) == Some(WRAP_UP_UNIT) {
            units.pop();
            wrap_up = aggregated.pop();
            let last = units.len();
            per_participant.retain(|(_, u), _| *u != last);
            if units.is_empty() {
                return Err(Error::Corpus(format!("doc {doc_id}: only a wrap-up row")));
            }
        }
        out.insert(
            doc_id.to_string(),
            UnitTable {
                doc_id: doc_id.to_string(),
                language: language.unwrap_or_default(),
                units,
                aggregated,
                per_participant,
                wrap_up,
            },
        );
    }
    Ok(out)
}

/// How a tokenizer marks word boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerMarkerRules {
    /// Prefixes that stand for a preceding space, e.g. `▁` (SentencePiece).
    pub boundary_markers: Vec<String>,
    /// Tokens use the GPT-2 byte-to-unicode alphabet (`Ġ` for space).
    pub byte_level: bool,
}

impl TokenizerMarkerRules {
    pub fn sentencepiece() -> Self {
        Self {
            boundary_markers: vec!["▁".into()],
            byte_level: false,
        }
    }

    pub fn byte_level() -> Self {
        Self {
            boundary_markers: Vec::new(),
            byte_level: true,
        }
    }

    pub fn plain() -> Self {
        Self {
            boundary_markers: Vec::new(),
            byte_level: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sentencepiece" => Ok(Self::sentencepiece()),
            "byte_level" | "gpt2" => Ok(Self::byte_level()),
            "plain" => Ok(Self::plain()),
            other => Err(Error::InvalidArgument(format!("unknown tokenizer preset {other}"))),
        }
    }

    /// Raw bytes a token contributes to the text, boundary markers turned
    /// into spaces.
    pub fn decode(&self, token: &str) -> Result<Vec<u8>> {
        if self.byte_level {
            let table = byte_decoder();
            return token
                .chars()
                .map(|c| {
                    table.get(&c).copied().ok_or_else(|| {
                        Error::Alignment(format!("token {token:?} is not in the byte-level alphabet"))
                    })
                })
                .collect();
        }
        let mut s = token.to_string();
        for m in &self.boundary_markers {
            s = s.replace(m.as_str(), " ");
        }
        Ok(s.into_bytes())
    }
}

/// Inverse of the GPT-2 `bytes_to_unicode` table.
fn byte_decoder() -> &'static HashMap<char, u8> {
    static TABLE: std::sync::OnceLock<HashMap<char, u8>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let printable = |b: u8| matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        let mut map = HashMap::new();
        let mut extra = 0u32;
        for b in 0..=255u8 {
            let c = if printable(b) {
                char::from_u32(b as u32).unwrap()
            } else {
                let c = char::from_u32(256 + extra).unwrap();
                extra += 1;
                c
            };
            map.insert(c, b);
        }
        map
    })
}

/// Token spans of each unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub spans: Vec<Range<usize>>,
}

impl AlignmentMap {
    /// Builds spans from a non-decreasing, gap-free unit index per token.
    pub fn from_unit_indices(unit_index_of_token: &[usize]) -> Result<Self> {
        let mut spans: Vec<Range<usize>> = Vec::new();
        for (t, &u) in unit_index_of_token.iter().enumerate() {
            match spans.len() {
                n if u + 1 == n => spans[n - 1].end = t + 1,
                n if u == n => spans.push(t..t + 1),
                _ => {
                    return Err(Error::Alignment(format!(
                        "token {t}: unit index {u} breaks order"
                    )))
                }
            }
        }
        Ok(Self { spans })
    }

    pub fn unit_count(&self) -> usize {
        self.spans.len()
    }

    pub fn token_count(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn unit_index_of_token(&self) -> Vec<usize> {
        self.spans
            .iter()
            .enumerate()
            .flat_map(|(u, s)| s.clone().map(move |_| u))
            .collect()
    }
}

/// Assigns every token to the unit its characters come from.
///
/// The detokenized tokens must reproduce the units joined by single spaces.
/// Tokens that decode to whitespace only attach to the following unit.
pub fn align_tokens_to_units(
    unit_texts: &[String],
    tokens: &[String],
    rules: &TokenizerMarkerRules,
) -> Result<AlignmentMap> {
    if unit_texts.is_empty() || tokens.is_empty() {
        return Err(Error::Alignment("length mismatch: empty units or tokens".into()));
    }
    if let Some(u) = unit_texts.iter().find(|u| u.is_empty() || u.contains(char::is_whitespace)) {
        return Err(Error::Alignment(format!("unit {u:?} is not a whitespace-free word")));
    }
    let units: Vec<&[u8]> = unit_texts.iter().map(|u| u.as_bytes()).collect();
    let n_units = units.len();
    // Cursor into the joined text: `offset` bytes into unit `unit`.
    let mut unit = 0usize;
    let mut offset = 0usize;
    let mut unit_of_token = Vec::with_capacity(tokens.len());
    let mut pending = 0usize;
    for (t, token) in tokens.iter().enumerate() {
        let bytes = rules.decode(token)?;
        let mut first_unit: Option<usize> = None;
        let mut last_unit = 0usize;
        for &b in &bytes {
            if b.is_ascii_whitespace() {
                if offset == 0 {
                    continue;
                }
                if offset < units[unit].len() {
                    return Err(Error::Alignment(format!(
                        "token {t} ({token:?}) splits unit {unit} ({:?})",
                        unit_texts[unit]
                    )));
                }
                unit += 1;
                offset = 0;
                continue;
            }
            if unit < n_units && offset == units[unit].len() {
                return Err(Error::Alignment(match first_unit {
                    Some(_) => format!(
                        "token spans two units: token {t} ({token:?}) runs past unit {unit} ({:?})",
                        unit_texts[unit]
                    ),
                    None => format!(
                        "token {t} ({token:?}) follows unit {unit} without a word boundary"
                    ),
                }));
            }
            let Some(&expected) = units.get(unit).and_then(|u| u.get(offset)) else {
                return Err(Error::Alignment(format!(
                    "length mismatch: token {t} ({token:?}) runs past the last unit"
                )));
            };
            if expected != b {
                return Err(Error::Alignment(format!(
                    "token {t} ({token:?}) does not match unit {unit} ({:?})",
                    unit_texts[unit]
                )));
            }
            offset += 1;
            first_unit.get_or_insert(unit);
            last_unit = unit;
        }
        match first_unit {
            Some(a) if a != last_unit => {
                return Err(Error::Alignment(format!(
                    "token spans two units: token {t} ({token:?}) covers units {a} and {last_unit}"
                )))
            }
            Some(a) => {
                unit_of_token.extend(std::iter::repeat_n(a, pending + 1));
                pending = 0;
            }
            None => pending += 1,
        }
    }
    if pending > 0 {
        let last = *unit_of_token
            .last()
            .ok_or_else(|| Error::Alignment("length mismatch: tokens carry no text".into()))?;
        unit_of_token.extend(std::iter::repeat_n(last, pending));
    }
    let at_end = (unit + 1 == n_units && offset == units[unit].len())
        || (unit == n_units && offset == 0);
    if !at_end || unit_of_token.last() != Some(&(n_units - 1)) {
        return Err(Error::Alignment(format!(
            "length mismatch: tokens cover {} of {} units",
            unit_of_token.last().map_or(0, |u| u + 1),
            n_units
        )));
    }
    AlignmentMap::from_unit_indices(&unit_of_token)
}

/// Picks `n_holdout` whole documents for tuning with a seeded shuffle.
/// Returns `(tuning, experiment)`, each in the input order.
pub fn holdout_split(
    doc_ids: &[String],
    n_holdout: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if n_holdout >= doc_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "n_holdout_docs {} must be below the document count {}",
            n_holdout,
            doc_ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: HashSet<usize> = order[..n_holdout].iter().copied().collect();
    let (tuning, experiment): (Vec<_>, Vec<_>) = doc_ids
        .iter()
        .enumerate()
        .partition(|(i, _)| chosen.contains(i));
    Ok((
        tuning.into_iter().map(|(_, d)| d.clone()).collect(),
        experiment.into_iter().map(|(_, d)| d.clone()).collect(),
    ))
}
