//! Add-k smoothed n-gram model over characters or whitespace tokens.
//!
//! Small and deterministic; it produces the same [`TokenScoreRecord`]s a real
//! model extractor would, so the whole pipeline can be exercised offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scoring::{ScoringMode, TokenScoreRecord};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToyLmError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("order must be at least 1")]
    BadOrder,
    #[error("smoothing k must be positive and finite, got {0}")]
    BadSmoothing(f64),
    #[error("sentence {0}: no tokens to score")]
    EmptyText(String),
    #[error("count dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    Char,
    Whitespace,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Char => text.chars().map(String::from).collect(),
            Tokenizer::Whitespace => text.split_whitespace().map(String::from).collect(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Tokenizer::Char => "char",
            Tokenizer::Whitespace => "whitespace",
        }
    }
}

/// Training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramConfig {
    pub order: usize,
    pub smoothing_k: f64,
    pub tokenizer: Tokenizer,
    /// Append and score an end-of-sentence marker.
    pub end_marker: bool,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { order: 2, smoothing_k: 1.0, tokenizer: Tokenizer::Whitespace, end_marker: true }
    }
}

type Context = Vec<String>;

/// Trained counts. Immutable after training.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    config: NgramConfig,
    vocabulary: BTreeSet<String>,
    counts: BTreeMap<Context, BTreeMap<String, u64>>,
    context_totals: BTreeMap<Context, u64>,
}

impl NgramModel {
    /// Counts every n-gram of the corpus, padding each sentence with
    /// `order - 1` begin markers and, if configured, one end marker.
    pub fn train<S: AsRef<str>>(corpus: &[S], config: NgramConfig) -> Result<Self, ToyLmError> {
        if config.order == 0 {
            return Err(ToyLmError::BadOrder);
        }
        if !(config.smoothing_k.is_finite() && config.smoothing_k > 0.0) {
            return Err(ToyLmError::BadSmoothing(config.smoothing_k));
        }
        if corpus.is_empty() {
            return Err(ToyLmError::EmptyCorpus);
        }
        let mut vocabulary: BTreeSet<String> =
            [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        let mut counts: BTreeMap<Context, BTreeMap<String, u64>> = BTreeMap::new();
        for sentence in corpus {
            let tokens = config.tokenizer.tokenize(sentence.as_ref());
            vocabulary.extend(tokens.iter().cloned());
            let padded = pad(&config, tokens);
            for window in padded.windows(config.order) {
                let (ctx, tok) = window.split_at(config.order - 1);
                *counts.entry(ctx.to_vec()).or_default().entry(tok[0].clone()).or_default() += 1;
            }
        }
        let context_totals = counts.iter().map(|(c, m)| (c.clone(), m.values().sum())).collect();
        Ok(NgramModel { config, vocabulary, counts, context_totals })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    /// Identifier used as `model_id` in emitted records.
    pub fn model_id(&self) -> String {
        format!("toy-{}-{}gram", self.config.tokenizer.name(), self.config.order)
    }

    /// Add-k conditional probability over the full vocabulary.
    pub fn prob(&self, context: &[String], token: &str) -> f64 {
        let k = self.config.smoothing_k;
        let v = self.vocabulary.len() as f64;
        let total = self.context_totals.get(context).copied().unwrap_or(0) as f64;
        let count = self
            .counts
            .get(context)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0) as f64;
        (count + k) / (total + k * v)
    }

    /// Scores a sentence causally. Out-of-vocabulary tokens become `<unk>`.
    ///
    /// ```
    /// use safety_score::toylm::{NgramConfig, NgramModel};
    ///
    /// let model = NgramModel::train(&["a b a b"], NgramConfig::default())?;
    /// let rec = model.score_sentence("s1", "a b")?;
    /// assert_eq!(rec.num_tokens, 3); // a, b, </s>
    /// # Ok::<(), safety_score::toylm::ToyLmError>(())
    /// ```
    pub fn score_sentence(&self, sentence_id: &str, text: &str) -> Result<TokenScoreRecord, ToyLmError> {
        let tokens: Vec<String> = self
            .config
            .tokenizer
            .tokenize(text)
            .into_iter()
            .map(|t| if self.vocabulary.contains(&t) { t } else { UNK.to_string() })
            .collect();
        if tokens.is_empty() {
            return Err(ToyLmError::EmptyText(sentence_id.to_string()));
        }
        let padded = pad(&self.config, tokens);
        let logprobs = padded
            .windows(self.config.order)
            .map(|w| {
                let (ctx, tok) = w.split_at(self.config.order - 1);
                self.prob(ctx, &tok[0]).ln()
            })
            .collect();
        Ok(TokenScoreRecord::new(sentence_id, self.model_id(), ScoringMode::Causal, logprobs))
    }

    /// Sorted, line-oriented count dump: a header comment, then
    /// `context<TAB>token<TAB>count` per observed n-gram. Context tokens are
    /// space-separated; tokens are escaped so the format stays line-oriented.
    pub fn count_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# order={} k={} tokenizer={} end_marker={}",
            self.config.order,
            self.config.smoothing_k,
            self.config.tokenizer.name(),
            self.config.end_marker
        );
        let vocab: Vec<String> = self.vocabulary.iter().map(|t| escape(t)).collect();
        let _ = writeln!(out, "# vocabulary={}", vocab.join(" "));
        for (ctx, tokens) in &self.counts {
            let ctx: Vec<String> = ctx.iter().map(|t| escape(t)).collect();
            let ctx = ctx.join(" ");
            for (tok, n) in tokens {
                let _ = writeln!(out, "{ctx}\t{}\t{n}", escape(tok));
            }
        }
        out
    }

    /// Inverse of [`NgramModel::count_dump`].
    pub fn from_count_dump(text: &str) -> Result<Self, ToyLmError> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, message: &str| ToyLmError::Dump { line: line + 1, message: message.into() };

        let (i, header) = lines.next().ok_or_else(|| bad(0, "missing header"))?;
        let mut config = NgramConfig::default();
        for field in header.strip_prefix("# ").ok_or_else(|| bad(i, "bad header"))?.split(' ') {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(i, "bad header field"))?;
            match key {
                "order" => config.order = value.parse().map_err(|_| bad(i, "bad order"))?,
                "k" => config.smoothing_k = value.parse().map_err(|_| bad(i, "bad k"))?,
                "tokenizer" => {
                    config.tokenizer = match value {
                        "char" => Tokenizer::Char,
                        "whitespace" => Tokenizer::Whitespace,
                        _ => return Err(bad(i, "bad tokenizer")),
                    }
                }
                "end_marker" => config.end_marker = value.parse().map_err(|_| bad(i, "bad end_marker"))?,
                _ => return Err(bad(i, "unknown header field")),
            }
        }
        let (i, vocab_line) = lines.next().ok_or_else(|| bad(1, "missing vocabulary"))?;
        let vocab = vocab_line.strip_prefix("# vocabulary=").ok_or_else(|| bad(i, "bad vocabulary"))?;
        let vocabulary: BTreeSet<String> = vocab.split(' ').map(unescape).collect();

        let mut counts: BTreeMap<Context, BTreeMap<String, u64>> = BTreeMap::new();
        for (i, line) in lines {
            let mut parts = line.split('\t');
            let (Some(ctx), Some(tok), Some(n), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad(i, "expected three tab-separated fields"));
            };
            let ctx: Context = if ctx.is_empty() { Vec::new() } else { ctx.split(' ').map(unescape).collect() };
            if ctx.len() + 1 != config.order {
                return Err(bad(i, "context length does not match order"));
            }
            let n: u64 = n.parse().map_err(|_| bad(i, "bad count"))?;
            counts.entry(ctx).or_default().insert(unescape(tok), n);
        }
        let context_totals = counts.iter().map(|(c, m)| (c.clone(), m.values().sum())).collect();
        Ok(NgramModel { config, vocabulary, counts, context_totals })
    }
}

fn pad(config: &NgramConfig, tokens: Vec<String>) -> Vec<String> {
    let mut padded = vec![BOS.to_string(); config.order - 1];
    padded.extend(tokens);
    if config.end_marker {
        padded.push(EOS.to_string());
    }
    padded
}

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let mut chars = token.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}
