//! Batch commands behind the `safety-score` binary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::analysis::{arch_correlation, metric_correlation_matrix, read_arch_csv, read_metric_csv};
use crate::corpus::{
    downsample_balanced, ingest, map_binary_dataset, BinaryRecord, EvaluationSet, RawAnnotation,
    SentenceRecord, DEFAULT_HARM_THRESHOLD, TOXICITY_MAX, TOXICITY_MIN,
};
use crate::demo::run_demo;
use crate::io::{atomic_write, csv_reader, parse_ndjson, parse_ndjson_strict, read_text, to_ndjson};
use crate::rankstat::{per_group_report, GroupBy};
use crate::report::{arch_table, matrix_table, safety_table, summary_table, Format};
use crate::scoring::{logppl_summary, score_evaluation_set, ScaledScore, TokenScoreRecord};

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn to_line(&self) -> String {
        let kind = match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
        };
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {kind}: {msg}")
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Raw annotations (or binary-labelled rows) to an evaluation set.
    Ingest,
    /// Evaluation set plus token log-probabilities to scaled scores.
    Score,
    /// Scaled scores to a per-group safety table.
    Safety,
    /// Log-perplexity mean and standard deviation per label.
    Summarize,
    /// Correlation matrix of metric vectors.
    Correlate,
    /// Correlation of average safety with architecture, per family.
    ArchCorr,
    /// End-to-end run on bundled synthetic data.
    Demo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum IngestMode {
    /// Per-annotator groups and toxicities.
    #[default]
    Annotated,
    /// `text`, `label` and optional `group`, mapped to fixed toxicities.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum GroupByArg {
    #[default]
    TargetGroup,
    All,
}

impl From<GroupByArg> for GroupBy {
    fn from(g: GroupByArg) -> Self {
        match g {
            GroupByArg::TargetGroup => GroupBy::TargetGroup,
            GroupByArg::All => GroupBy::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum FormatArg {
    Csv,
    #[default]
    Markdown,
    Ndjson,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Markdown => Format::Markdown,
            FormatArg::Ndjson => Format::Ndjson,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "safety-score", version, about = "Toxicity-scaled perplexity safety scores for language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Raw annotations (or binary-labelled rows) to an evaluation set.
    Ingest(Opts),
    /// Evaluation set plus token log-probabilities to scaled scores.
    Score(Opts),
    /// Scaled scores to a per-group safety table.
    Safety(Opts),
    /// Log-perplexity mean and standard deviation per label.
    Summarize(Opts),
    /// Correlation matrix of metric vectors.
    Correlate(Opts),
    /// Correlation of average safety with architecture, per family.
    ArchCorr(Opts),
    /// End-to-end run on bundled synthetic data.
    Demo(Opts),
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// Input file(s).
    #[arg(long = "input", short = 'i')]
    pub input: Vec<PathBuf>,
    /// Token-score, scaled-score or safety file, depending on the command.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Output file; written atomically. Standard output when omitted.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HARM_THRESHOLD)]
    pub harm_threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tie_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    pub format: FormatArg,
    #[arg(long, value_enum, default_value_t = GroupByArg::TargetGroup)]
    pub group_by: GroupByArg,
    /// Input layout for `ingest`.
    #[arg(long, value_enum, default_value_t = IngestMode::Annotated)]
    pub mode: IngestMode,
    /// Balance harmful and benign counts per group after ingesting.
    #[arg(long)]
    pub balance: bool,
    /// Restrict `score` to one model id.
    #[arg(long)]
    pub model: Option<String>,
}

/// Everything a command needs, independent of argument parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input_paths: Vec<PathBuf>,
    pub scores_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub harm_threshold: f64,
    pub tie_tol: f64,
    pub seed: u64,
    pub format: Format,
    pub group_by: GroupBy,
    pub ingest_mode: IngestMode,
    pub balance: bool,
    pub model: Option<String>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            input_paths: Vec::new(),
            scores_path: None,
            output_path: None,
            harm_threshold: DEFAULT_HARM_THRESHOLD,
            tie_tol: 0.0,
            seed: 0,
            format: Format::Markdown,
            group_by: GroupBy::TargetGroup,
            ingest_mode: IngestMode::Annotated,
            balance: false,
            model: None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if !(TOXICITY_MIN..=TOXICITY_MAX).contains(&self.harm_threshold) {
            return usage("--harm-threshold must lie in [1, 5]");
        }
        if !(self.tie_tol.is_finite() && self.tie_tol >= 0.0) {
            return usage("--tie-tol must be a non-negative number");
        }
        let inputs = self.input_paths.len();
        let needs_scores = matches!(
            self.command,
            Command::Score | Command::Safety | Command::Summarize | Command::ArchCorr
        );
        match self.command {
            Command::Ingest | Command::Correlate if inputs == 0 => return usage("--input is required"),
            Command::Score | Command::Safety | Command::Summarize | Command::ArchCorr if inputs != 1 => {
                return usage("exactly one --input is required")
            }
            Command::Demo if inputs != 0 => return usage("demo takes no --input"),
            _ => {}
        }
        if needs_scores && self.scores_path.is_none() {
            return usage("--scores is required");
        }
        Ok(())
    }
}

impl From<CommandArgs> for RunConfig {
    fn from(args: CommandArgs) -> Self {
        let (command, o) = match args {
            CommandArgs::Ingest(o) => (Command::Ingest, o),
            CommandArgs::Score(o) => (Command::Score, o),
            CommandArgs::Safety(o) => (Command::Safety, o),
            CommandArgs::Summarize(o) => (Command::Summarize, o),
            CommandArgs::Correlate(o) => (Command::Correlate, o),
            CommandArgs::ArchCorr(o) => (Command::ArchCorr, o),
            CommandArgs::Demo(o) => (Command::Demo, o),
        };
        RunConfig {
            command,
            input_paths: o.input,
            scores_path: o.scores,
            output_path: o.output,
            harm_threshold: o.harm_threshold,
            tie_tol: o.tie_tol,
            seed: o.seed,
            format: o.format.into(),
            group_by: o.group_by.into(),
            ingest_mode: o.mode,
            balance: o.balance,
            model: o.model,
        }
    }
}

/// Runs one command and writes its output.
pub fn run(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let output = execute(config)?;
    match &config.output_path {
        Some(path) => atomic_write(path, output.as_bytes())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => {
            print!("{output}");
            Ok(())
        }
    }
}

/// Runs one command and returns what it would write.
pub fn execute(config: &RunConfig) -> Result<String, CliError> {
    config.validate()?;
    match config.command {
        Command::Ingest => cmd_ingest(config),
        Command::Score => cmd_score(config),
        Command::Safety => cmd_safety(config),
        Command::Summarize => cmd_summarize(config),
        Command::Correlate => cmd_correlate(config),
        Command::ArchCorr => cmd_arch_corr(config),
        Command::Demo => {
            let out = run_demo(config.seed, config.harm_threshold, config.tie_tol).map_err(data)?;
            Ok(out.render(config.format))
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    read_text(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn scores_path(config: &RunConfig) -> &Path {
    config.scores_path.as_deref().expect("validated")
}

/// Loads an evaluation set written by `ingest`.
pub fn load_evaluation_set(path: &Path) -> Result<EvaluationSet, CliError> {
    let records: Vec<SentenceRecord> = parse_ndjson_strict(&read(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    EvaluationSet::from_records(records, path.display().to_string()).map_err(data)
}

fn load_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    parse_ndjson_strict(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_ingest(config: &RunConfig) -> Result<String, CliError> {
    let provenance: Vec<String> = config.input_paths.iter().map(|p| p.display().to_string()).collect();
    let provenance = provenance.join(",");
    let mut set = match config.ingest_mode {
        IngestMode::Annotated => {
            let mut raw = Vec::new();
            let mut bad_lines = 0;
            for path in &config.input_paths {
                for row in parse_ndjson::<RawAnnotation>(&read(path)?) {
                    match row {
                        Ok((_, r)) => raw.push(r),
                        Err(e) => {
                            warn!("{}: dropping {e}", path.display());
                            bad_lines += 1;
                        }
                    }
                }
            }
            let out = ingest(raw, config.harm_threshold, &provenance);
            info!(
                "kept {} records; {} annotator disagreements, {} malformed records, {} undecodable lines",
                out.set.len(),
                out.disagreements,
                out.rejected.len(),
                bad_lines
            );
            out.set
        }
        IngestMode::Binary => {
            let mut rows: Vec<BinaryRecord> = Vec::new();
            for path in &config.input_paths {
                rows.extend(load_ndjson::<BinaryRecord>(path)?);
            }
            map_binary_dataset(rows, &provenance).map_err(data)?
        }
    };
    if config.balance {
        let out = downsample_balanced(&set, config.seed).map_err(data)?;
        set = out.set;
    }
    Ok(to_ndjson(set.records()))
}

fn cmd_score(config: &RunConfig) -> Result<String, CliError> {
    let set = load_evaluation_set(&config.input_paths[0])?;
    let scores: Vec<TokenScoreRecord> = load_ndjson(scores_path(config))?;
    for s in &scores {
        s.validate().map_err(data)?;
    }
    let models: BTreeSet<&str> = match &config.model {
        Some(m) => [m.as_str()].into(),
        None => scores.iter().map(|s| s.model_id.as_str()).collect(),
    };
    let mut out = Vec::new();
    for model in models {
        out.extend(score_evaluation_set(&set, &scores, model).map_err(data)?);
    }
    Ok(to_ndjson(&out))
}

fn load_scaled(config: &RunConfig) -> Result<(EvaluationSet, Vec<ScaledScore>, BTreeSet<String>), CliError> {
    let set = load_evaluation_set(&config.input_paths[0])?;
    let scaled: Vec<ScaledScore> = load_ndjson(scores_path(config))?;
    let models = scaled.iter().map(|s| s.model_id.clone()).collect();
    Ok((set, scaled, models))
}

fn cmd_safety(config: &RunConfig) -> Result<String, CliError> {
    let (set, scaled, models) = load_scaled(config)?;
    let reports = models
        .iter()
        .map(|m| per_group_report(&scaled, &set, m, config.tie_tol, config.group_by).map_err(data))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = safety_table(&reports, config.format);
    if config.format == Format::Markdown {
        for r in &reports {
            for e in &r.excluded {
                out.push_str(&format!(
                    "\nexcluded: {} / {} ({} harmful, {} benign)\n",
                    r.model_id, e.group, e.harmful, e.benign
                ));
            }
        }
    }
    Ok(out)
}

fn cmd_summarize(config: &RunConfig) -> Result<String, CliError> {
    let (set, scaled, models) = load_scaled(config)?;
    let labels: HashMap<String, _> = set.records().iter().map(|r| (r.id.clone(), r.label)).collect();
    let summaries = models
        .iter()
        .map(|m| {
            let rows: Vec<ScaledScore> = scaled.iter().filter(|s| &s.model_id == m).cloned().collect();
            logppl_summary(&rows, &labels).map_err(data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summary_table(&summaries, config.format))
}

fn cmd_correlate(config: &RunConfig) -> Result<String, CliError> {
    let mut vectors = Vec::new();
    for path in &config.input_paths {
        vectors.extend(read_metric_csv(&read(path)?).map_err(data)?);
    }
    let matrix = metric_correlation_matrix(&vectors).map_err(data)?;
    Ok(matrix_table(&matrix, config.format))
}

/// Reads `model_id` and average safety from a safety table (the `average`
/// column written by `safety --format csv`) or any CSV with an
/// `average_safety` column.
pub fn read_average_safety(text: &str) -> Result<BTreeMap<String, f64>, CliError> {
    let mut reader = csv_reader(text);
    let headers = reader.headers().map_err(data)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let model_col = col("model_id").ok_or_else(|| CliError::Data("safety table lacks model_id".into()))?;
    let value_col = col("average_safety")
        .or_else(|| col("average"))
        .ok_or_else(|| CliError::Data("safety table lacks average or average_safety".into()))?;
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(data)?;
        let model = row.get(model_col).unwrap_or_default().to_string();
        let value = row.get(value_col).unwrap_or_default();
        match value.parse::<f64>() {
            Ok(v) => {
                out.insert(model, v);
            }
            Err(_) => warn!("model {model}: no average safety ({value:?})"),
        }
    }
    Ok(out)
}

fn cmd_arch_corr(config: &RunConfig) -> Result<String, CliError> {
    let specs = read_arch_csv(&read(&config.input_paths[0])?).map_err(data)?;
    let safety = read_average_safety(&read(scores_path(config))?)?;
    let mut families: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for spec in specs {
        let Some(&s) = safety.get(&spec.model_id) else {
            warn!("model {}: no safety score, skipped", spec.model_id);
            continue;
        };
        let family = spec.family.clone().unwrap_or_else(|| "all".into());
        families.entry(family).or_default().push((spec, s));
    }
    let rows = families
        .into_iter()
        .map(|(family, rows)| {
            arch_correlation(&rows)
                .map(|c| (family.clone(), c))
                .map_err(|e| CliError::Data(format!("family {family}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(arch_table(&rows, config.format))
}
