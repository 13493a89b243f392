//! `rtprobe`: validate inputs, run the regression and mixed-model
//! pipelines, generate synthetic fixtures and re-render reports.

mod config;
mod failure;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rtprobe_core::corpus::{parse_corpus, read_header, Measure};
use rtprobe_core::pipeline::{load_inputs, run, run_lmm, LoadedInputs};
use rtprobe_core::predictors::{Family, FrequencyTable};
use rtprobe_core::report::EvalReport;
use rtprobe_core::synth::{generate, GeneratingFamily, SynthConfig};
use rtprobe_core::trace::validate_trace;

use config::{RunConfig, SchemaSpec, Tokenizer};
use failure::Failure;

#[derive(Parser)]
#[command(name = "rtprobe", version, about = "Reading-time prediction from language-model predictors")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "RTPROBE_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check trace, corpus and frequency inputs without fitting anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tune, cross-validate and report regularized regressions.
    Run(RunArgs),
    /// Cross-validate mixed-effects models on per-participant times.
    Lmm(RunArgs),
    /// Write a synthetic corpus, trace and matching run config.
    Synth(SynthArgs),
    /// Re-render a saved report.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for report files; overrides `output` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated languages to keep (default: all).
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    /// Comma-separated subset of FFD, GD, TRT.
    #[arg(long, value_delimiter = ',')]
    measures: Option<Vec<Measure>>,
    /// Comma-separated predictor families, e.g. surprisal,representation.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<Family>>,
    /// Comma-separated exported layers (default: all).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Documents per language reserved for hyperparameter tuning.
    #[arg(long)]
    holdout_docs: Option<usize>,
    /// Seed for choosing tuning documents.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Seed for assigning documents to folds.
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Seed for the permuted-predictor control.
    #[arg(long)]
    permutation_seed: Option<u64>,
    /// Principal components kept for mixed-model representations.
    #[arg(long)]
    pca_k: Option<usize>,
    /// Add the end-of-string row where the trace and corpus provide one.
    #[arg(long)]
    wrap_up: Option<bool>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the fixture.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// none, surprisal, representation, infovalue or logitlens.
    #[arg(long)]
    family: Option<String>,
    /// Layer whose predictor generates the reading times.
    #[arg(long)]
    layer: Option<usize>,
    /// Effect size of the generating predictor (ms per unit).
    #[arg(long)]
    slope: Option<f64>,
    /// Residual noise standard deviation (ms).
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Number of documents.
    #[arg(long)]
    n_docs: Option<usize>,
    /// Number of simulated readers.
    #[arg(long)]
    n_participants: Option<usize>,
    /// Give each document an end-of-string row with its own effect.
    #[arg(long)]
    wrap_up: Option<bool>,
    /// Store hidden states as f16.
    #[arg(long)]
    hidden_f16: Option<bool>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Latex,
    CombinedLatex,
    Csv,
    SummaryCsv,
    PlotCsv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// A `report.json` written by `run` or `lmm`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    /// Write every format into this directory instead of printing one.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let f = Failure::validation("usage", e.to_string());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::validation("workers", "worker count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::internal("workers", e.to_string()))?;
    }
    match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run(args) => cmd_run(&args, false),
        Command::Lmm(args) => cmd_run(&args, true),
        Command::Synth(args) => cmd_synth(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| Failure::internal("io", format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Failure::internal("json", e.to_string()))
}

#[derive(Serialize)]
struct ValidationOutput {
    clean: bool,
    findings: Vec<String>,
    notes: Vec<String>,
}

fn validate(cfg: &RunConfig) -> Result<ValidationOutput, Failure> {
    let mut findings = cfg.missing_paths();
    let mut notes = Vec::new();
    let schema = cfg.schema.resolve()?;
    if cfg.trace.is_dir() {
        match validate_trace(&cfg.trace) {
            Ok(report) => findings.extend(report.findings.iter().map(|f| format!("trace: {f}"))),
            Err(e) => findings.push(format!("trace: {e}")),
        }
    } else if cfg.trace.exists() {
        findings.push(format!("trace path {} is not a directory", cfg.trace.display()));
    }
    if cfg.corpus.is_file() {
        match read_header(&cfg.corpus, &schema) {
            Ok(header) => {
                let unknown = schema.unknown_columns(&header);
                if !unknown.is_empty() {
                    findings.push(format!("corpus: unknown columns {}", unknown.join(", ")));
                } else {
                    match parse_corpus(&cfg.corpus, &schema) {
                        Ok(parsed) => notes.extend(parsed.flags.iter().map(|f| format!("corpus: {f}"))),
                        Err(e) => findings.push(format!("corpus: {e}")),
                    }
                }
            }
            Err(e) => findings.push(format!("corpus: {e}")),
        }
    }
    if cfg.freq.is_file() {
        if let Err(e) = FrequencyTable::from_path(&cfg.freq) {
            findings.push(format!("freq: {e}"));
        }
    }
    if let Err(e) = cfg.pipeline.grid() {
        findings.push(format!("pipeline: {e}"));
    }
    if findings.is_empty() {
        match load(cfg) {
            Ok(inputs) => {
                if let Err(e) = cfg.pipeline.configs(&inputs.manifest.layers_exported) {
                    findings.push(format!("pipeline: {e}"));
                }
                for lang in &cfg.pipeline.languages {
                    if !inputs.languages().contains(lang) {
                        findings.push(format!("pipeline: no documents for language {lang:?}"));
                    }
                }
            }
            Err(e) => findings.push(format!("inputs: {}", e.message)),
        }
    }
    Ok(ValidationOutput {
        clean: findings.is_empty(),
        findings,
        notes,
    })
}

fn load(cfg: &RunConfig) -> Result<LoadedInputs, Failure> {
    let schema = cfg.schema.resolve()?;
    Ok(load_inputs(&cfg.trace, &cfg.corpus, &schema, &cfg.freq, &cfg.tokenizer.rules())?)
}

fn cmd_validate(path: &Path) -> Result<u8, Failure> {
    let cfg = RunConfig::load(path)?;
    let out = validate(&cfg)?;
    print!("{}", to_json(&out)?);
    Ok(if out.clean { 0 } else { failure::EXIT_VALIDATION as u8 })
}

fn apply_overrides(cfg: &mut RunConfig, a: &RunArgs) {
    let p = &mut cfg.pipeline;
    if let Some(v) = &a.output {
        cfg.output = v.clone();
    }
    if let Some(v) = &a.languages {
        p.languages = v.clone();
    }
    if let Some(v) = &a.measures {
        p.measures = v.clone();
    }
    if let Some(v) = &a.families {
        p.families = v.clone();
    }
    if let Some(v) = &a.layers {
        p.layers = v.clone();
    }
    if let Some(v) = a.folds {
        p.folds = v;
    }
    if let Some(v) = a.holdout_docs {
        p.holdout_docs = v;
    }
    if let Some(v) = a.split_seed {
        p.seeds.split = v;
    }
    if let Some(v) = a.fold_seed {
        p.seeds.folds = v;
    }
    if let Some(v) = a.permutation_seed {
        p.seeds.permutation = v;
    }
    if let Some(v) = a.pca_k {
        p.pca_k = v;
    }
    if let Some(v) = a.wrap_up {
        p.wrap_up = v;
    }
}

fn cmd_run(args: &RunArgs, lmm: bool) -> Result<u8, Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args);
    let missing = cfg.missing_paths();
    if !missing.is_empty() {
        return Err(Failure::validation("missing_path", missing.join("; ")));
    }
    let inputs = load(&cfg)?;
    let out_dir = cfg.output.clone();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::internal("io", format!("{}: {e}", out_dir.display())))?;
    // Computation finishes before anything is written; all files come from
    // this thread.
    if lmm {
        let out = run_lmm(&inputs, &cfg.pipeline, &cfg.lmm)?;
        out.report.write_all(&out_dir)?;
        write(&out_dir.join("splits.json"), to_json(&out.splits)?)?;
        write(&out_dir.join("results.json"), to_json(&out.results)?)?;
        write(&out_dir.join("lmm_fits.json"), to_json(&out.fits)?)?;
        print!("{}", out.report.to_text());
    } else {
        let out = run(&inputs, &cfg.pipeline)?;
        out.report.write_all(&out_dir)?;
        write(&out_dir.join("splits.json"), to_json(&out.splits)?)?;
        write(&out_dir.join("tuning.json"), to_json(&out.tuning)?)?;
        write(&out_dir.join("results.json"), to_json(&out.results)?)?;
        print!("{}", out.report.to_text());
    }
    write(&out_dir.join("run.resolved.toml"), cfg.to_toml()?)?;
    Ok(0)
}

fn parse_generating_family(s: &str) -> Result<GeneratingFamily, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Failure::validation("invalid_argument", format!("unknown generating family {s}")))
}

fn cmd_synth(a: &SynthArgs) -> Result<u8, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::validation("config", format!("{}: {e}", p.display())))?;
            toml::from_str::<SynthConfig>(&text)
                .map_err(|e| Failure::validation("config", format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(f) = &a.family {
        cfg.generating_family = parse_generating_family(f)?;
        if matches!(cfg.generating_family, GeneratingFamily::None | GeneratingFamily::Surprisal) {
            cfg.generating_layer = None;
        }
    }
    if let Some(v) = a.layer {
        cfg.generating_layer = Some(v);
    }
    if let Some(v) = a.slope {
        cfg.slope = v;
    }
    if let Some(v) = a.noise_sd {
        cfg.noise_sd = v;
    }
    if let Some(v) = a.n_docs {
        cfg.n_docs = v;
    }
    if let Some(v) = a.n_participants {
        cfg.n_participants = v;
    }
    if let Some(v) = a.wrap_up {
        cfg.wrap_up = v;
    }
    if let Some(v) = a.hidden_f16 {
        cfg.hidden_f16 = v;
    }
    let fx = generate(&cfg)?;
    let paths = fx.write(&a.out)?;
    let rel = |p: &Path| PathBuf::from(p.file_name().expect("fixture paths name a file"));
    let run_cfg = RunConfig {
        corpus: rel(&paths.corpus),
        schema: SchemaSpec::Preset("native".into()),
        trace: rel(&paths.trace),
        freq: rel(&paths.freq),
        tokenizer: Tokenizer::Sentencepiece,
        output: PathBuf::from("results"),
        pipeline: rtprobe_core::pipeline::PipelineConfig {
            wrap_up: cfg.wrap_up,
            ..Default::default()
        },
        lmm: Default::default(),
    };
    write(&a.out.join("run.toml"), run_cfg.to_toml()?)?;
    println!(
        "{}",
        serde_json::json!({
            "out": a.out,
            "generating_family": fx.meta.generating_family,
            "generating_layer": fx.meta.generating_layer,
            "realized_snr": fx.meta.realized_snr,
        })
    );
    Ok(0)
}

fn cmd_report(a: &ReportArgs) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| Failure::validation("missing_path", format!("{}: {e}", a.input.display())))?;
    let report = EvalReport::from_json(&text)?;
    if let Some(dir) = &a.output {
        report.write_all(dir)?;
        return Ok(0);
    }
    let body = match a.format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Latex => report.to_latex(),
        ReportFormat::CombinedLatex => report.combined_latex(),
        ReportFormat::Csv => report.to_csv()?,
        ReportFormat::SummaryCsv => report.summary_csv()?,
        ReportFormat::PlotCsv => report.plot_csv()?,
        ReportFormat::Json => report.to_json()?,
    };
    print!("{body}");
    Ok(0)
}
