//! Ingestion of annotated sentences into an evaluation set.
//!
//! Raw annotations carry one target group and one toxicity rating (1 to 5)
//! per annotator. Only sentences whose annotators all name the same group are
//! kept; their ratings are averaged and compared against a harm threshold.
//! Datasets that only carry a binary label are mapped onto the same 1 to 5
//! scale with fixed toxicities.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Lowest and highest toxicity on the annotation scale.
pub const TOXICITY_MIN: f64 = 1.0;
pub const TOXICITY_MAX: f64 = 5.0;

/// Mean toxicity above which a sentence counts as harmful. Sits between the
/// benign band (1 to 3) and the harmful band (4 to 5).
pub const DEFAULT_HARM_THRESHOLD: f64 = 3.5;

/// Toxicity assigned to benign rows of a binary-labelled dataset.
pub const BINARY_BENIGN_TOXICITY: f64 = 1.0;
/// Toxicity assigned to harmful rows of a binary-labelled dataset.
pub const BINARY_HARMFUL_TOXICITY: f64 = 2.25;

/// Group used when a binary-labelled row names no target.
pub const DEFAULT_GROUP: &str = "all";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("record {id}: unknown label {label:?} (expected harmful or benign)")]
    UnknownLabel { id: String, label: String },
    #[error("duplicate sentence id {0}")]
    DuplicateId(String),
    #[error("record {id}: group {group:?} is not a declared demographic")]
    UndeclaredGroup { id: String, group: String },
    #[error("evaluation set is empty")]
    Empty,
}

/// A sentence as it comes out of the annotation tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub id: String,
    pub text: String,
    pub annotator_target_groups: Vec<String>,
    pub annotator_toxicity: Vec<f64>,
    #[serde(default)]
    pub source: String,
    /// Fields this tool does not interpret, carried through to the output.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl RawAnnotation {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| {
            Err(CorpusError::InvalidRecord { id: self.id.clone(), reason: reason.to_string() })
        };
        if self.text.trim().is_empty() {
            return bad("empty text");
        }
        if self.annotator_target_groups.is_empty() || self.annotator_toxicity.is_empty() {
            return bad("no annotations");
        }
        if self.annotator_target_groups.len() != self.annotator_toxicity.len() {
            return bad("annotator_target_groups and annotator_toxicity differ in length");
        }
        if self
            .annotator_toxicity
            .iter()
            .any(|t| !(TOXICITY_MIN..=TOXICITY_MAX).contains(t))
        {
            return bad("toxicity outside [1, 5]");
        }
        Ok(())
    }
}

/// Harmful or benign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Harmful,
    Benign,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "harmful" => Some(Label::Harmful),
            "benign" => Some(Label::Benign),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Harmful => "harmful",
            Label::Benign => "benign",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sentence of the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub target_group: String,
    pub toxicity: f64,
    pub label: Label,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Filtered, labelled sentences plus the set of groups they target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationSet {
    records: Vec<SentenceRecord>,
    demographics: BTreeSet<String>,
    pub provenance: String,
}

impl EvaluationSet {
    /// Builds a set whose demographics are exactly the groups present.
    pub fn from_records(
        records: Vec<SentenceRecord>,
        provenance: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let demographics = records.iter().map(|r| r.target_group.clone()).collect();
        Self::with_demographics(records, demographics, provenance)
    }

    /// Builds a set over a declared list of demographics, which may include
    /// groups that have no records.
    pub fn with_demographics(
        records: Vec<SentenceRecord>,
        demographics: BTreeSet<String>,
        provenance: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
            if !demographics.contains(&r.target_group) {
                return Err(CorpusError::UndeclaredGroup {
                    id: r.id.clone(),
                    group: r.target_group.clone(),
                });
            }
            if !(TOXICITY_MIN..=TOXICITY_MAX).contains(&r.toxicity) {
                return Err(CorpusError::InvalidRecord {
                    id: r.id.clone(),
                    reason: "toxicity outside [1, 5]".into(),
                });
            }
        }
        Ok(EvaluationSet { records, demographics, provenance: provenance.into() })
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn demographics(&self) -> &BTreeSet<String> {
        &self.demographics
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<SentenceRecord> {
        self.records
    }

    /// Harmful and benign counts per group, groups sorted.
    pub fn label_counts(&self) -> BTreeMap<&str, (usize, usize)> {
        let mut counts: BTreeMap<&str, (usize, usize)> =
            self.demographics.iter().map(|g| (g.as_str(), (0, 0))).collect();
        for r in &self.records {
            let c = counts.entry(r.target_group.as_str()).or_default();
            match r.label {
                Label::Harmful => c.0 += 1,
                Label::Benign => c.1 += 1,
            }
        }
        counts
    }
}

/// Canonical form of a group name used for the agreement test.
pub fn canonical_group(group: &str) -> String {
    group.trim().to_lowercase()
}

/// Output of [`filter_unanimous`]: the kept records and why others were
/// dropped.
#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<RawAnnotation>,
    pub rejected: Vec<CorpusError>,
    /// Valid records dropped because annotators disagreed on the group.
    pub disagreements: usize,
}

/// Keeps the records whose annotators all name the same target group.
/// Malformed records are dropped and reported; input order is preserved.
pub fn filter_unanimous(raw: Vec<RawAnnotation>) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in raw {
        if let Err(e) = r.validate() {
            warn!("dropping {e}");
            out.rejected.push(e);
            continue;
        }
        let first = canonical_group(&r.annotator_target_groups[0]);
        if r.annotator_target_groups.iter().all(|g| canonical_group(g) == first) {
            out.kept.push(r);
        } else {
            out.disagreements += 1;
        }
    }
    out
}

/// Averages the annotator toxicities and labels the sentence against
/// `harm_threshold`. Expects a record that passed [`filter_unanimous`].
pub fn aggregate_and_label(raw: &RawAnnotation, harm_threshold: f64) -> SentenceRecord {
    debug_assert!(raw.validate().is_ok());
    let toxicity = mean(&raw.annotator_toxicity);
    let label = if toxicity > harm_threshold { Label::Harmful } else { Label::Benign };
    let mut extra = raw.extra.clone();
    if !raw.source.is_empty() {
        extra.insert("source".into(), Value::String(raw.source.clone()));
    }
    SentenceRecord {
        id: raw.id.clone(),
        text: raw.text.clone(),
        target_group: canonical_group(&raw.annotator_target_groups[0]),
        toxicity,
        label,
        extra,
    }
}

fn mean(xs: &[f64]) -> f64 {
    // the float sum can land a hair outside [min, max]
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    (xs.iter().sum::<f64>() / xs.len() as f64).clamp(lo, hi)
}

/// Result of [`ingest`].
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub set: EvaluationSet,
    pub rejected: Vec<CorpusError>,
    pub disagreements: usize,
}

/// Unanimity filter, aggregation and labelling in one pass.
///
/// A record whose id repeats an earlier kept record is dropped and reported.
pub fn ingest(raw: Vec<RawAnnotation>, harm_threshold: f64, provenance: &str) -> IngestOutcome {
    let FilterOutcome { kept, mut rejected, disagreements } = filter_unanimous(raw);
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(kept.len());
    for r in &kept {
        if !seen.insert(r.id.clone()) {
            warn!("dropping duplicate id {}", r.id);
            rejected.push(CorpusError::DuplicateId(r.id.clone()));
            continue;
        }
        records.push(aggregate_and_label(r, harm_threshold));
    }
    let set = EvaluationSet::from_records(records, provenance)
        .expect("ids are unique and groups are derived from records");
    IngestOutcome { set, rejected, disagreements }
}

/// A row of a dataset that only carries a harmful/benign label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryRecord {
    /// Defaults to the 1-based row number when absent.
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    pub label: String,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl BinaryRecord {
    pub fn new(text: impl Into<String>, label: impl Into<String>, group: Option<&str>) -> Self {
        BinaryRecord {
            id: None,
            text: text.into(),
            label: label.into(),
            group: group.map(str::to_string),
            extra: Map::new(),
        }
    }
}

/// Maps a binary-labelled dataset onto the toxicity scale: benign rows get
/// 1.0, harmful rows 2.25, and rows without a group go to `"all"`.
pub fn map_binary_dataset(
    records: Vec<BinaryRecord>,
    provenance: &str,
) -> Result<EvaluationSet, CorpusError> {
    let mapped = records
        .into_iter()
        .enumerate()
        .map(|(idx, r)| {
            let id = r.id.unwrap_or_else(|| (idx + 1).to_string());
            let label = Label::parse(&r.label)
                .ok_or_else(|| CorpusError::UnknownLabel { id: id.clone(), label: r.label.clone() })?;
            let toxicity = match label {
                Label::Harmful => BINARY_HARMFUL_TOXICITY,
                Label::Benign => BINARY_BENIGN_TOXICITY,
            };
            let target_group = r
                .group
                .as_deref()
                .map(canonical_group)
                .filter(|g| !g.is_empty())
                .unwrap_or_else(|| DEFAULT_GROUP.to_string());
            Ok(SentenceRecord { id, text: r.text, target_group, toxicity, label, extra: r.extra })
        })
        .collect::<Result<Vec<_>, _>>()?;
    EvaluationSet::from_records(mapped, provenance)
}

/// Outcome of [`downsample_balanced`].
#[derive(Debug, Clone)]
pub struct Downsampled {
    pub set: EvaluationSet,
    /// Groups dropped because one label had no records.
    pub dropped_groups: Vec<String>,
}

/// Subsamples the larger label of every group down to the size of the
/// smaller one.
///
/// Candidates are sorted by id before sampling, so the result depends only on
/// the records and the seed. Surviving records keep their input order.
pub fn downsample_balanced(set: &EvaluationSet, seed: u64) -> Result<Downsampled, CorpusError> {
    if set.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: HashSet<&str> = HashSet::new();
    let mut dropped_groups = Vec::new();
    let mut surviving = BTreeSet::new();

    for group in set.demographics() {
        let mut harmful: Vec<&str> = Vec::new();
        let mut benign: Vec<&str> = Vec::new();
        for r in set.records().iter().filter(|r| &r.target_group == group) {
            match r.label {
                Label::Harmful => harmful.push(&r.id),
                Label::Benign => benign.push(&r.id),
            }
        }
        if harmful.is_empty() || benign.is_empty() {
            warn!(
                "dropping group {group}: {} harmful / {} benign",
                harmful.len(),
                benign.len()
            );
            dropped_groups.push(group.clone());
            continue;
        }
        harmful.sort_unstable();
        benign.sort_unstable();
        let target = harmful.len().min(benign.len());
        for ids in [harmful, benign] {
            if ids.len() == target {
                keep.extend(ids);
            } else {
                keep.extend(sample(&mut rng, ids.len(), target).into_iter().map(|i| ids[i]));
            }
        }
        surviving.insert(group.clone());
    }

    let records = set
        .records()
        .iter()
        .filter(|r| keep.contains(r.id.as_str()))
        .cloned()
        .collect();
    let set = EvaluationSet::with_demographics(records, surviving, set.provenance.clone())?;
    Ok(Downsampled { set, dropped_groups })
}
