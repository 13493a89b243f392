//! GTRC trace directories: the on-disk hand-off between a language-model
//! runtime and the numerical core.
//!
//! A trace directory holds one `manifest.json` plus four tensor blobs per
//! document. Every blob has the layout (little-endian throughout):
//!
//! ```text
//! magic   4 bytes  "GTRC"
//! version u32
//! dtype   u8       0 = float32, 1 = float16
//! ndim    u8
//! dims    ndim x u64
//! payload row-major values
//! ```
//!
//! Only hidden states may be stored as float16. Surprisals and distances are
//! always float32.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"GTRC";
pub const BLOB_VERSION: u32 = 1;
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Element type of a blob payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F16,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F16),
            _ => None,
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

/// A dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                numel,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let numel = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; numel],
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.dims[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    /// Contiguous innermost slice at `[i, j, ..]` of a rank-3 tensor.
    pub fn row3(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.dims[1] + j) * self.dims[2];
        &self.data[start..start + self.dims[2]]
    }
}

/// One serialized tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub dtype: DType,
    pub tensor: Tensor,
}

impl TensorBlob {
    pub fn f32(tensor: Tensor) -> Self {
        Self {
            dtype: DType::F32,
            tensor,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let dims = &self.tensor.dims;
        let mut out = Vec::with_capacity(
            10 + 8 * dims.len() + self.dtype.element_size() * self.tensor.data.len(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self.dtype {
            DType::F32 => {
                for v in &self.tensor.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            DType::F16 => {
                for v in &self.tensor.data {
                    out.extend_from_slice(&half::f16::from_f32(*v).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], name: &str) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Format(format!("{name}: truncated header")));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::BadMagic(name.to_string()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BLOB_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(bytes[8])
            .ok_or_else(|| Error::Format(format!("{name}: unknown dtype code {}", bytes[8])))?;
        let ndim = bytes[9] as usize;
        let header_len = 10 + 8 * ndim;
        if bytes.len() < header_len {
            return Err(Error::Format(format!("{name}: truncated dims")));
        }
        let dims: Vec<usize> = bytes[10..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
        let payload = &bytes[header_len..];
        let expected = numel
            .checked_mul(dtype.element_size())
            .ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "{name}: dims {:?} need {} payload bytes, found {}",
                dims,
                expected,
                payload.len()
            )));
        }
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F16 => payload
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes(c.try_into().unwrap()).to_f32())
                .collect(),
        };
        Ok(Self {
            dtype,
            tensor: Tensor { dims, data },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::decode(&bytes, &name)
    }
}

/// File names of the four tensors of a document, relative to the trace root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorFiles {
    pub final_surprisal: String,
    pub logitlens_surprisal: String,
    pub hidden_states: String,
    pub iv_distances: String,
}

impl TensorFiles {
    fn for_index(index: usize) -> Self {
        let stem = format!("doc{index:05}");
        Self {
            final_surprisal: format!("{stem}.final_surprisal.gtrc"),
            logitlens_surprisal: format!("{stem}.logitlens_surprisal.gtrc"),
            hidden_states: format!("{stem}.hidden_states.gtrc"),
            iv_distances: format!("{stem}.iv_distances.gtrc"),
        }
    }

    fn iter(&self) -> [(&'static str, &str); 4] {
        [
            ("final_surprisal", &self.final_surprisal),
            ("logitlens_surprisal", &self.logitlens_surprisal),
            ("hidden_states", &self.hidden_states),
            ("iv_distances", &self.iv_distances),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub doc_id: String,
    pub token_count: usize,
    pub unit_count: usize,
    #[serde(default)]
    pub has_eos_row: bool,
    pub tokens: Vec<String>,
    pub unit_index_of_token: Vec<usize>,
    pub files: TensorFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub format_version: u32,
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub iv_sample_count: usize,
    pub layers_exported: Vec<usize>,
    #[serde(default)]
    pub hidden_dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv_seed: Option<u64>,
    pub documents: Vec<DocumentEntry>,
}

impl TraceManifest {
    pub fn new(
        model_name: impl Into<String>,
        num_layers: usize,
        hidden_dim: usize,
        vocab_size: usize,
        layers_exported: Vec<usize>,
        iv_sample_count: usize,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_name: model_name.into(),
            num_layers,
            hidden_dim,
            vocab_size,
            iv_sample_count,
            layers_exported,
            hidden_dtype: DType::F32,
            iv_seed: None,
            documents: Vec::new(),
        }
    }

    /// Manifest-level invariants, one message per violation.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.format_version != FORMAT_VERSION {
            out.push(format!(
                "unsupported format_version {}",
                self.format_version
            ));
        }
        if self.layers_exported.is_empty() {
            out.push("layers_exported is empty".to_string());
        }
        if self.layers_exported.windows(2).any(|w| w[0] >= w[1]) {
            out.push("layers_exported not strictly increasing".to_string());
        }
        if let Some(bad) = self
            .layers_exported
            .iter()
            .find(|&&l| l == 0 || l > self.num_layers)
        {
            out.push(format!(
                "layer {bad} outside 1..={}",
                self.num_layers
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &self.documents {
            if !seen.insert(d.doc_id.as_str()) {
                out.push(format!("duplicate doc_id {}", d.doc_id));
            }
        }
        out
    }

    /// Position of `layer` within `layers_exported`.
    pub fn layer_slot(&self, layer: usize) -> Option<usize> {
        self.layers_exported.iter().position(|&l| l == layer)
    }
}

/// Everything exported for one document.
///
/// Token rows are indexed `0..T`. When `has_eos_row` is set the last token
/// row is the end-of-string position and its `unit_index_of_token` entry is
/// the sentinel `unit_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTrace {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub unit_index_of_token: Vec<usize>,
    pub layers_exported: Vec<usize>,
    /// `[T]`, nats.
    pub final_surprisal: Vec<f32>,
    /// `[T, layers]`, nats.
    pub logitlens_surprisal: Tensor,
    /// `[T, layers, d]`.
    pub hidden_states: Tensor,
    /// `[U, layers, N]`, cosine distances.
    pub iv_distances: Tensor,
    pub has_eos_row: bool,
}

impl DocumentTrace {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Number of token rows that belong to units.
    pub fn unit_token_count(&self) -> usize {
        self.tokens.len() - usize::from(self.has_eos_row)
    }

    pub fn unit_count(&self) -> usize {
        self.unit_index_of_token[..self.unit_token_count()]
            .last()
            .map_or(0, |&u| u + 1)
    }

    pub fn layer_slot(&self, layer: usize) -> Option<usize> {
        self.layers_exported.iter().position(|&l| l == layer)
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_states.dims.get(2).copied().unwrap_or(0)
    }

    pub fn iv_sample_count(&self) -> usize {
        self.iv_distances.dims.get(2).copied().unwrap_or(0)
    }

    /// Document invariants against the manifest's declared counts.
    pub fn check(&self, manifest: &TraceManifest) -> Vec<String> {
        let mut out = Vec::new();
        let t = self.tokens.len();
        if t == 0 {
            out.push("empty document".to_string());
            return out;
        }
        let nl = manifest.layers_exported.len();
        if self.unit_index_of_token.len() != t {
            out.push(format!(
                "unit_index_of_token has {} entries for {} tokens",
                self.unit_index_of_token.len(),
                t
            ));
            return out;
        }
        let body = &self.unit_index_of_token[..self.unit_token_count()];
        if body.is_empty() {
            out.push("empty document".to_string());
            return out;
        }
        if body.windows(2).any(|w| w[1] < w[0]) {
            out.push("token/unit order violated".to_string());
        } else if body[0] != 0 || body.windows(2).any(|w| w[1] > w[0] + 1) {
            out.push("unit without tokens".to_string());
        }
        let units = self.unit_count();
        if self.has_eos_row && self.unit_index_of_token[t - 1] != units {
            out.push("end-of-string row must carry the sentinel unit index".to_string());
        }
        if self.final_surprisal.len() != t {
            out.push(format!(
                "final_surprisal has {} rows, expected {t}",
                self.final_surprisal.len()
            ));
        } else if self
            .final_surprisal
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            out.push("final_surprisal must be finite and non-negative".to_string());
        }
        if self.logitlens_surprisal.dims != [t, nl] {
            out.push(format!(
                "logitlens_surprisal dims {:?}, expected [{t}, {nl}]",
                self.logitlens_surprisal.dims
            ));
        } else if self
            .logitlens_surprisal
            .data
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            out.push("logitlens_surprisal must be finite and non-negative".to_string());
        }
        if self.hidden_states.dims != [t, nl, manifest.hidden_dim] {
            out.push(format!(
                "hidden_states dims {:?}, expected [{t}, {nl}, {}]",
                self.hidden_states.dims, manifest.hidden_dim
            ));
        } else if self.hidden_states.data.iter().any(|v| !v.is_finite()) {
            out.push("hidden_states must be finite".to_string());
        }
        let n = manifest.iv_sample_count;
        if self.iv_distances.dims != [units, nl, n] {
            out.push(format!(
                "iv_distances dims {:?}, expected [{units}, {nl}, {n}]",
                self.iv_distances.dims
            ));
        } else if self
            .iv_distances
            .data
            .iter()
            .any(|v| !(0.0..=2.0).contains(v))
        {
            out.push("iv_distances outside [0, 2]".to_string());
        }
        if self.layers_exported != manifest.layers_exported {
            out.push("layers_exported differs from manifest".to_string());
        }
        out
    }
}

/// Writes `docs` under `target`, filling `manifest.documents`. Returns the
/// manifest as written.
pub fn write_trace(
    manifest: &TraceManifest,
    docs: &[DocumentTrace],
    target: &Path,
) -> Result<TraceManifest> {
    let problems = manifest.check();
    if let Some(p) = problems.into_iter().next() {
        return Err(Error::Shape(p));
    }
    if !manifest.documents.is_empty() {
        let declared: Vec<&str> = manifest.documents.iter().map(|d| d.doc_id.as_str()).collect();
        let given: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        if declared != given {
            return Err(Error::Shape(
                "manifest documents do not match the supplied documents".to_string(),
            ));
        }
    }
    fs::create_dir_all(target).map_err(io_err(target))?;
    let mut out = manifest.clone();
    out.documents.clear();
    for (index, doc) in docs.iter().enumerate() {
        if doc.tokens.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        if let Some(p) = doc.check(manifest).into_iter().next() {
            return Err(Error::Shape(format!("{}: {}", doc.doc_id, p)));
        }
        if let Some(declared) = manifest.documents.get(index) {
            if declared.token_count != doc.token_count() || declared.unit_count != doc.unit_count()
            {
                return Err(Error::Shape(format!(
                    "{}: counts differ from manifest",
                    doc.doc_id
                )));
            }
        }
        let files = TensorFiles::for_index(index);
        TensorBlob::f32(Tensor {
            dims: vec![doc.final_surprisal.len()],
            data: doc.final_surprisal.clone(),
        })
        .write(&target.join(&files.final_surprisal))?;
        TensorBlob::f32(doc.logitlens_surprisal.clone())
            .write(&target.join(&files.logitlens_surprisal))?;
        TensorBlob {
            dtype: manifest.hidden_dtype,
            tensor: doc.hidden_states.clone(),
        }
        .write(&target.join(&files.hidden_states))?;
        TensorBlob::f32(doc.iv_distances.clone()).write(&target.join(&files.iv_distances))?;
        out.documents.push(DocumentEntry {
            doc_id: doc.doc_id.clone(),
            token_count: doc.token_count(),
            unit_count: doc.unit_count(),
            has_eos_row: doc.has_eos_row,
            tokens: doc.tokens.clone(),
            unit_index_of_token: doc.unit_index_of_token.clone(),
            files,
        });
    }
    let path = target.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&out)?;
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(out)
}

/// A problem found while validating a trace directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub doc_id: Option<String>,
    pub file: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.doc_id, &self.file) {
            (Some(d), Some(file)) => write!(f, "[{d}] {file}: {}", self.message),
            (Some(d), None) => write!(f, "[{d}] {}", self.message),
            (None, Some(file)) => write!(f, "{file}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Read-only handle on a trace directory. Documents load on demand and are
/// validated on every load. Safe to share between threads.
#[derive(Debug, Clone)]
pub struct TraceReader {
    root: PathBuf,
    manifest: TraceManifest,
}

fn read_manifest(root: &Path) -> Result<TraceManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Opens a trace directory. Manifest-level invariants are checked here;
/// document invariants are checked as each document is loaded.
pub fn read_trace(source: &Path) -> Result<TraceReader> {
    let manifest = read_manifest(source)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    if let Some(p) = manifest.check().into_iter().next() {
        return Err(Error::Invariant {
            doc_id: "<manifest>".to_string(),
            message: p,
        });
    }
    Ok(TraceReader {
        root: source.to_path_buf(),
        manifest,
    })
}

impl TraceReader {
    pub fn manifest(&self) -> &TraceManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.manifest.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.documents.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<DocumentTrace> {
        let entry = self
            .manifest
            .documents
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no document at index {index}")))?;
        let (doc, findings) = load_entry(&self.root, &self.manifest, entry)?;
        match (doc, findings.into_iter().next()) {
            (Some(doc), None) => Ok(doc),
            (_, Some(f)) => Err(finding_to_error(f)),
            (None, None) => unreachable!("load_entry returns a document or a finding"),
        }
    }

    pub fn load_by_id(&self, doc_id: &str) -> Result<DocumentTrace> {
        let index = self
            .manifest
            .documents
            .iter()
            .position(|d| d.doc_id == doc_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown doc_id {doc_id}")))?;
        self.load(index)
    }

    /// Documents in manifest order.
    pub fn documents(&self) -> impl Iterator<Item = Result<DocumentTrace>> + '_ {
        (0..self.len()).map(move |i| self.load(i))
    }
}

fn finding_to_error(f: Finding) -> Error {
    let doc_id = f.doc_id.unwrap_or_default();
    if f.message.starts_with("bad magic") {
        return Error::BadMagic(f.file.unwrap_or(doc_id));
    }
    if f.message == "empty document" {
        return Error::EmptyDocument(doc_id);
    }
    let message = match f.file {
        Some(file) => format!("{file}: {}", f.message),
        None => f.message,
    };
    Error::Invariant { doc_id, message }
}

/// Loads one document, collecting every problem instead of stopping at the
/// first. Only I/O errors other than a missing blob are returned as `Err`.
fn load_entry(
    root: &Path,
    manifest: &TraceManifest,
    entry: &DocumentEntry,
) -> Result<(Option<DocumentTrace>, Vec<Finding>)> {
    let mut findings = Vec::new();
    let finding = |file: Option<&str>, message: String| Finding {
        doc_id: Some(entry.doc_id.clone()),
        file: file.map(str::to_string),
        message,
    };
    if entry.token_count == 0 {
        findings.push(finding(None, "empty document".to_string()));
        return Ok((None, findings));
    }
    let mut blobs = Vec::with_capacity(4);
    for (role, file) in entry.files.iter() {
        let path = root.join(file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                findings.push(finding(Some(file), "referenced tensor file missing".to_string()));
                blobs.push(None);
                continue;
            }
            Err(e) => return Err(Error::Io { path, source: e }),
        };
        match TensorBlob::decode(&bytes, file) {
            Ok(blob) => {
                if blob.dtype != DType::F32 && role != "hidden_states" {
                    findings.push(finding(
                        Some(file),
                        format!("{role} must be float32"),
                    ));
                    blobs.push(None);
                } else {
                    blobs.push(Some(blob.tensor));
                }
            }
            Err(e) => {
                let message = match e {
                    Error::BadMagic(_) => "bad magic".to_string(),
                    Error::UnsupportedVersion(v) => format!("version {v} unsupported"),
                    other => other.to_string(),
                };
                findings.push(finding(Some(file), message));
                blobs.push(None);
            }
        }
    }
    if !findings.is_empty() {
        return Ok((None, findings));
    }
    let mut it = blobs.into_iter().map(Option::unwrap);
    let final_surprisal = it.next().unwrap();
    let logitlens_surprisal = it.next().unwrap();
    let hidden_states = it.next().unwrap();
    let iv_distances = it.next().unwrap();
    if final_surprisal.dims.len() != 1 {
        findings.push(finding(
            Some(&entry.files.final_surprisal),
            format!("expected rank 1, got dims {:?}", final_surprisal.dims),
        ));
        return Ok((None, findings));
    }
    let doc = DocumentTrace {
        doc_id: entry.doc_id.clone(),
        tokens: entry.tokens.clone(),
        unit_index_of_token: entry.unit_index_of_token.clone(),
        layers_exported: manifest.layers_exported.clone(),
        final_surprisal: final_surprisal.data,
        logitlens_surprisal,
        hidden_states,
        iv_distances,
        has_eos_row: entry.has_eos_row,
    };
    if doc.tokens.len() != entry.token_count {
        findings.push(finding(
            None,
            format!(
                "token_count {} but {} tokens listed",
                entry.token_count,
                doc.tokens.len()
            ),
        ));
    }
    for message in doc.check(manifest) {
        findings.push(finding(None, message));
    }
    if findings.is_empty() && doc.unit_count() != entry.unit_count {
        findings.push(finding(
            None,
            format!(
                "unit_count {} but tokens map to {} units",
                entry.unit_count,
                doc.unit_count()
            ),
        ));
    }
    if findings.is_empty() {
        Ok((Some(doc), findings))
    } else {
        Ok((None, findings))
    }
}

/// Lists every invariant violation in a trace directory. Only I/O errors
/// abort; a manifest that cannot be parsed is reported as a single finding.
pub fn validate_trace(source: &Path) -> Result<ValidationReport> {
    let path = source.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut report = ValidationReport::default();
    let manifest: TraceManifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => {
            report.findings.push(Finding {
                doc_id: None,
                file: Some(MANIFEST_FILE.to_string()),
                message: format!("unreadable manifest: {e}"),
            });
            return Ok(report);
        }
    };
    for message in manifest.check() {
        report.findings.push(Finding {
            doc_id: None,
            file: Some(MANIFEST_FILE.to_string()),
            message,
        });
    }
    for entry in &manifest.documents {
        let (_, findings) = load_entry(source, &manifest, entry)?;
        report.findings.extend(findings);
    }
    Ok(report)
}
