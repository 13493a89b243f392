//! Result tables: per-layer rows, best-layer summaries, plot data, and their
//! CSV / JSON / LaTeX renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Measure;
use crate::error::{io_err, Error, Result};
use crate::evaluation::{delta_mse, CvResult};
use crate::predictors::Family;
use crate::regression::Penalty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub language: String,
    pub measure: Measure,
    pub family: Family,
    pub layer: Option<usize>,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub vs_permuted: bool,
    pub vs_baseline: bool,
    pub vs_representation: Option<bool>,
    pub vs_scalar: Option<bool>,
    pub chosen_penalty: Penalty,
    pub chosen_lambda: f64,
}

impl ReportRow {
    pub fn markers(&self) -> Markers {
        Markers {
            permuted: self.vs_permuted,
            baseline: self.vs_baseline,
            representation: self.vs_representation.unwrap_or(false),
        }
    }
}

/// Significance markers of one cell: `*` vs. permuted, `•` vs. baseline,
/// `‡` vs. representation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers {
    pub permuted: bool,
    pub baseline: bool,
    pub representation: bool,
}

impl Markers {
    pub fn plain(&self) -> String {
        let mut s = String::new();
        if self.permuted {
            s.push('*');
        }
        if self.baseline {
            s.push('•');
        }
        if self.representation {
            s.push('‡');
        }
        s
    }

    pub fn latex(&self) -> String {
        let mut parts = Vec::new();
        if self.permuted {
            parts.push("*");
        }
        if self.baseline {
            parts.push("\\bullet");
        }
        if self.representation {
            parts.push("\\ddagger");
        }
        if parts.is_empty() {
            String::new()
        } else {
            format!("$^{{{}}}$", parts.join(""))
        }
    }
}

/// Two decimals, with negative zero printed as zero.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Cell rendering for terminals: `-2.28₍4.55₎`. The standard deviation keeps
/// ASCII digits; only the brackets are subscripted.
pub fn fmt_cell_plain(mean: f64, std: f64) -> String {
    format!("{}₍{}₎", fmt_num(mean), fmt_num(std))
}

/// Cell rendering for LaTeX tables: `-2.28$_{4.55}$`.
pub fn fmt_cell_latex(mean: f64, std: f64) -> String {
    format!("{}$_{{{}}}$", fmt_num(mean), fmt_num(std))
}

/// Best layer of one family in one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub family: Family,
    pub layer: Option<usize>,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub markers: Markers,
    pub bold: bool,
}

impl SummaryCell {
    pub fn plain(&self) -> String {
        let mut s = fmt_cell_plain(self.mean_delta, self.std_delta);
        s.push_str(&self.markers.plain());
        if let Some(l) = self.layer {
            let _ = write!(s, " ({l})");
        }
        if self.bold {
            s = format!("[{s}]");
        }
        s
    }

    pub fn latex(&self) -> String {
        self.latex_with(self.bold)
    }

    fn latex_with(&self, bold: bool) -> String {
        let mut s = fmt_cell_latex(self.mean_delta, self.std_delta);
        s.push_str(&self.markers.latex());
        if let Some(l) = self.layer {
            let _ = write!(s, " ({l})");
        }
        if bold {
            s = format!("\\textbf{{{s}}}");
        }
        s
    }
}

/// One (language, measure) line of the summary table: the lowest mean ΔMSE
/// of each family over its layers. Cells tied for the lowest value at
/// display precision are bold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub language: String,
    pub measure: Measure,
    pub cells: Vec<SummaryCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub language: String,
    pub measure: Measure,
    pub family: Family,
    pub layer: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    pub plot: Vec<PlotPoint>,
}

fn family_rank(f: Family) -> usize {
    Family::ALL.iter().position(|&g| g == f).unwrap()
}

impl EvalReport {
    /// Adds the results of one (language, measure) group. Significance flags
    /// must already be set; the baseline result is required.
    pub fn add_group(&mut self, language: &str, measure: Measure, results: &[CvResult]) -> Result<()> {
        let baseline = results
            .iter()
            .find(|r| r.config.family == Family::Baseline)
            .ok_or_else(|| Error::InvalidArgument("missing baseline result".into()))?;
        let mut rows = Vec::with_capacity(results.len());
        for r in results {
            if r.measure != measure {
                return Err(Error::InvalidArgument(format!(
                    "result for {} in {measure} group",
                    r.measure
                )));
            }
            let (mean_delta, std_delta) = delta_mse(r, baseline)?;
            let s = &r.significance;
            rows.push(ReportRow {
                language: language.to_string(),
                measure,
                family: r.config.family,
                layer: r.config.layer,
                mean_delta,
                std_delta,
                mean_mse: r.mean_mse,
                std_mse: r.std_mse,
                vs_permuted: s.vs_permuted,
                vs_baseline: s.vs_baseline,
                vs_representation: s.vs_representation,
                vs_scalar: s.vs_scalar,
                chosen_penalty: r.chosen_penalty,
                chosen_lambda: r.chosen_lambda,
            });
        }
        rows.sort_by_key(|r| (family_rank(r.family), r.layer));

        for r in rows.iter().filter(|r| r.layer.is_some()) {
            self.plot.push(PlotPoint {
                language: language.to_string(),
                measure,
                family: r.family,
                layer: r.layer.unwrap(),
                mean_mse: r.mean_mse,
                std_mse: r.std_mse,
                mean_delta: r.mean_delta,
            });
        }
        self.summary.push(summarize(language, measure, &rows));
        self.rows.extend(rows);
        Ok(())
    }

    /// Rows for one family in one group, by layer.
    pub fn family_rows<'a>(
        &'a self,
        language: &'a str,
        measure: Measure,
        family: Family,
    ) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.language == language && r.measure == measure && r.family == family)
    }

    /// Best (lowest mean ΔMSE) row of a family; ties go to the lower layer.
    pub fn best_row(&self, language: &str, measure: Measure, family: Family) -> Option<&ReportRow> {
        best_of(
            self.rows
                .iter()
                .filter(|r| r.language == language && r.measure == measure && r.family == family),
        )
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "language",
            "measure",
            "family",
            "layer",
            "mean_delta_mse",
            "std_delta_mse",
            "mean_mse",
            "std_mse",
            "vs_permuted",
            "vs_baseline",
            "vs_representation",
            "vs_scalar",
            "penalty",
            "lambda",
            "cell",
        ])?;
        let opt = |b: Option<bool>| b.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.language.clone(),
                r.measure.to_string(),
                r.family.to_string(),
                r.layer.map(|l| l.to_string()).unwrap_or_default(),
                format!("{:.6}", r.mean_delta),
                format!("{:.6}", r.std_delta),
                format!("{:.6}", r.mean_mse),
                format!("{:.6}", r.std_mse),
                r.vs_permuted.to_string(),
                r.vs_baseline.to_string(),
                opt(r.vs_representation),
                opt(r.vs_scalar),
                r.chosen_penalty.to_string(),
                format!("{}", r.chosen_lambda),
                format!("{}{}", fmt_cell_plain(r.mean_delta, r.std_delta), r.markers().plain()),
            ])?;
        }
        csv_string(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["language", "measure", "family", "layer", "mean_delta_mse", "std_delta_mse", "markers", "bold", "cell"])?;
        for row in &self.summary {
            for c in &row.cells {
                w.write_record([
                    row.language.clone(),
                    row.measure.to_string(),
                    c.family.to_string(),
                    c.layer.map(|l| l.to_string()).unwrap_or_default(),
                    format!("{:.6}", c.mean_delta),
                    format!("{:.6}", c.std_delta),
                    c.markers.plain(),
                    c.bold.to_string(),
                    c.plain(),
                ])?;
            }
        }
        csv_string(w)
    }

    pub fn plot_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["language", "measure", "family", "layer", "mean_mse", "std_mse", "mean_delta_mse"])?;
        for p in &self.plot {
            w.write_record([
                p.language.clone(),
                p.measure.to_string(),
                p.family.to_string(),
                p.layer.to_string(),
                format!("{:.6}", p.mean_mse),
                format!("{:.6}", p.std_mse),
                format!("{:.6}", p.mean_delta),
            ])?;
        }
        csv_string(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Main summary table: surprisal and the best layer of each layer-wise
    /// scalar and representation family.
    pub fn to_latex(&self) -> String {
        self.latex_table(&[
            Family::Surprisal,
            Family::Representation,
            Family::InfoValue,
            Family::LogitLens,
        ])
    }

    /// Summary table of the combined settings next to their components.
    pub fn combined_latex(&self) -> String {
        self.latex_table(&[
            Family::Surprisal,
            Family::Representation,
            Family::ReprSurprisal,
            Family::ReprInfoValue,
            Family::ReprLogitLens,
        ])
    }

    /// LaTeX summary table with one column per family in `columns`, a
    /// header line per language and one line per measure. In each line the
    /// cells showing the lowest mean ΔMSE (at display precision) are bold.
    pub fn latex_table(&self, columns: &[Family]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\begin{{tabular}}{{l{}}}", "r".repeat(columns.len()));
        let _ = writeln!(out, "\\toprule");
        let header: Vec<String> = columns
            .iter()
            .map(|f| {
                if f.is_layerwise() {
                    format!("Best {f} (layer)")
                } else {
                    capitalize(f.as_str())
                }
            })
            .collect();
        let _ = writeln!(out, "Measure & {} \\\\", header.join(" & "));
        let mut language: Option<&str> = None;
        for row in &self.summary {
            if language != Some(row.language.as_str()) {
                language = Some(&row.language);
                let _ = writeln!(out, "\\midrule");
                let _ = writeln!(
                    out,
                    "\\multicolumn{{{}}}{{c}}{{\\textbf{{{}}}}} \\\\",
                    columns.len() + 1,
                    row.language
                );
                let _ = writeln!(out, "\\midrule");
            }
            let shown: Vec<Option<&SummaryCell>> = columns
                .iter()
                .map(|f| row.cells.iter().find(|c| c.family == *f))
                .collect();
            let best = shown
                .iter()
                .flatten()
                .map(|c| c.mean_delta)
                .fold(f64::INFINITY, f64::min);
            let best = fmt_num(best);
            let cells: Vec<String> = shown
                .iter()
                .map(|c| match c {
                    Some(c) => c.latex_with(fmt_num(c.mean_delta) == best),
                    None => "--".into(),
                })
                .collect();
            let _ = writeln!(out, "{} & {} \\\\", row.measure, cells.join(" & "));
        }
        let _ = writeln!(out, "\\bottomrule");
        let _ = writeln!(out, "\\end{{tabular}}");
        out
    }

    /// Human-readable summary for terminals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.summary {
            let _ = writeln!(out, "{} {}", row.language, row.measure);
            for c in &row.cells {
                let _ = writeln!(out, "  {:<16} {}", c.family.as_str(), c.plain());
            }
        }
        out
    }

    /// Writes `report.csv`, `summary.csv`, `report.json`, `table.tex`,
    /// `table_combined.tex` and `plot_data.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let files = [
            ("report.csv", self.to_csv()?),
            ("summary.csv", self.summary_csv()?),
            ("report.json", self.to_json()?),
            ("table.tex", self.to_latex()),
            ("table_combined.tex", self.combined_latex()),
            ("plot_data.csv", self.plot_csv()?),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn best_of<'a>(rows: impl Iterator<Item = &'a ReportRow>) -> Option<&'a ReportRow> {
    rows.fold(None, |best: Option<&ReportRow>, r| match best {
        Some(b) if b.mean_delta <= r.mean_delta => Some(b),
        _ => Some(r),
    })
}

fn summarize(language: &str, measure: Measure, rows: &[ReportRow]) -> SummaryRow {
    let mut cells: Vec<SummaryCell> = Family::ALL
        .iter()
        .filter(|&&f| f != Family::Baseline)
        .filter_map(|&f| best_of(rows.iter().filter(|r| r.family == f)))
        .map(|r| SummaryCell {
            family: r.family,
            layer: r.layer,
            mean_delta: r.mean_delta,
            std_delta: r.std_delta,
            markers: r.markers(),
            bold: false,
        })
        .collect();
    let best = fmt_num(cells.iter().map(|c| c.mean_delta).fold(f64::INFINITY, f64::min));
    for c in &mut cells {
        c.bold = fmt_num(c.mean_delta) == best;
    }
    SummaryRow {
        language: language.to_string(),
        measure,
        cells,
    }
}
