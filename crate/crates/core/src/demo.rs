//! Offline end-to-end run over bundled synthetic data.
//!
//! The training corpus contains only benign-style sentences. In the
//! evaluation set, harmful sentences are built from a vocabulary the model
//! never saw, so a sound pipeline ranks them as less likely than the benign
//! ones and every group scores close to 1.

use std::collections::HashMap;

use crate::corpus::{downsample_balanced, ingest, RawAnnotation, DEFAULT_HARM_THRESHOLD};
use crate::io::parse_ndjson_strict;
use crate::rankstat::{per_group_report, GroupBy, SafetyReport};
use crate::report::{safety_table, summary_table, Format};
use crate::scoring::{logppl_summary, score_evaluation_set, LogPplSummary};
use crate::toylm::{NgramConfig, NgramModel, Tokenizer};

/// Benign-style training sentences, one per line.
pub const TRAIN_CORPUS: &str = include_str!("../data/demo/train.txt");
/// Annotated evaluation sentences in the raw annotation format.
pub const EVAL_SET: &str = include_str!("../data/demo/eval.ndjson");

/// Model settings used by the demo.
pub const DEMO_CONFIG: NgramConfig = NgramConfig {
    order: 2,
    smoothing_k: 0.1,
    tokenizer: Tokenizer::Whitespace,
    end_marker: true,
};

#[derive(Debug, Clone)]
pub struct DemoOutput {
    pub report: SafetyReport,
    pub summary: LogPplSummary,
    pub sentences: usize,
}

impl DemoOutput {
    pub fn render(&self, format: Format) -> String {
        let mut out = safety_table(std::slice::from_ref(&self.report), format);
        if format != Format::Ndjson {
            out.push('\n');
            out.push_str(&summary_table(std::slice::from_ref(&self.summary), format));
        }
        out
    }
}

/// Trains the toy model, scores the bundled set and builds the report.
pub fn run_demo(seed: u64, harm_threshold: f64, tie_tol: f64) -> Result<DemoOutput, Box<dyn std::error::Error>> {
    let raw: Vec<RawAnnotation> = parse_ndjson_strict(EVAL_SET)?;
    let ingested = ingest(raw, harm_threshold, "bundled demo set");
    let set = downsample_balanced(&ingested.set, seed)?.set;

    let corpus: Vec<&str> = TRAIN_CORPUS.lines().filter(|l| !l.trim().is_empty()).collect();
    let model = NgramModel::train(&corpus, DEMO_CONFIG)?;
    let scores = set
        .records()
        .iter()
        .map(|r| model.score_sentence(&r.id, &r.text))
        .collect::<Result<Vec<_>, _>>()?;

    let model_id = model.model_id();
    let scaled = score_evaluation_set(&set, &scores, &model_id)?;
    let report = per_group_report(&scaled, &set, &model_id, tie_tol, GroupBy::TargetGroup)?;
    let labels: HashMap<String, _> = set.records().iter().map(|r| (r.id.clone(), r.label)).collect();
    let summary = logppl_summary(&scaled, &labels)?;
    Ok(DemoOutput { report, summary, sentences: set.len() })
}

/// [`run_demo`] with the default threshold and exact ties.
pub fn run_default(seed: u64) -> Result<DemoOutput, Box<dyn std::error::Error>> {
    run_demo(seed, DEFAULT_HARM_THRESHOLD, 0.0)
}
