//! Pearson correlation between per-model metrics and architecture.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Deserialize;

use crate::io::csv_reader;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired values, got {0}")]
    TooFew(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite value")]
    NonFinite,
    #[error("metric {metric}: duplicate model {model}")]
    DuplicateModel { metric: String, model: String },
    #[error("model {0}: layer, head and hidden sizes must be at least 1")]
    BadArch(String),
    #[error("need at least 2 metric vectors, got {0}")]
    TooFewMetrics(usize),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for AnalysisError {
    fn from(e: csv::Error) -> Self {
        AnalysisError::Csv(e.to_string())
    }
}

/// Pearson product-moment correlation.
///
/// ```
/// let r = safety_score::analysis::pcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
/// assert_eq!(r, 0.5);
/// ```
pub fn pcc(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(AnalysisError::TooFew(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One metric's value for a number of models.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricVector {
    pub metric_name: String,
    pub values: Vec<(String, f64)>,
}

impl MetricVector {
    pub fn new(
        metric_name: impl Into<String>,
        values: Vec<(String, f64)>,
    ) -> Result<Self, AnalysisError> {
        let metric_name = metric_name.into();
        let mut seen = HashSet::new();
        for (model, _) in &values {
            if !seen.insert(model.as_str()) {
                return Err(AnalysisError::DuplicateModel {
                    metric: metric_name.clone(),
                    model: model.clone(),
                });
            }
        }
        Ok(MetricVector { metric_name, values })
    }
}

#[derive(Deserialize)]
struct MetricRow {
    metric_name: String,
    model_id: String,
    value: f64,
}

/// Reads `metric_name,model_id,value` rows, one vector per metric in order of
/// first appearance.
pub fn read_metric_csv(text: &str) -> Result<Vec<MetricVector>, AnalysisError> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for row in csv_reader(text).deserialize() {
        let row: MetricRow = row?;
        if !rows.contains_key(&row.metric_name) {
            order.push(row.metric_name.clone());
        }
        rows.entry(row.metric_name).or_default().push((row.model_id, row.value));
    }
    order
        .into_iter()
        .map(|name| {
            let values = rows.remove(&name).unwrap_or_default();
            MetricVector::new(name, values)
        })
        .collect()
}

/// One cell of a correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Value(f64),
    /// Fewer than three shared models.
    TooFewShared(usize),
    /// One side is constant over the shared models.
    ZeroVariance,
}

/// Symmetric matrix of pairwise correlations, labels sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
}

/// Pairwise-complete correlation matrix: each pair of metrics is aligned on
/// the models they share, in sorted model order.
pub fn metric_correlation_matrix(
    vectors: &[MetricVector],
) -> Result<CorrelationMatrix, AnalysisError> {
    if vectors.len() < 2 {
        return Err(AnalysisError::TooFewMetrics(vectors.len()));
    }
    let mut sorted: Vec<&MetricVector> = vectors.iter().collect();
    sorted.sort_by(|a, b| a.metric_name.cmp(&b.metric_name));
    let maps: Vec<BTreeMap<&str, f64>> = sorted
        .iter()
        .map(|v| v.values.iter().map(|(m, x)| (m.as_str(), *x)).collect())
        .collect();

    let k = sorted.len();
    let mut cells = vec![vec![Cell::ZeroVariance; k]; k];
    for i in 0..k {
        for j in i..k {
            let shared: BTreeSet<&str> =
                maps[i].keys().filter(|m| maps[j].contains_key(*m)).copied().collect();
            let cell = if shared.len() < 3 {
                Cell::TooFewShared(shared.len())
            } else {
                let xs: Vec<f64> = shared.iter().map(|m| maps[i][m]).collect();
                let ys: Vec<f64> = shared.iter().map(|m| maps[j][m]).collect();
                match pcc(&xs, &ys) {
                    Ok(r) => Cell::Value(r),
                    Err(AnalysisError::ZeroVariance) => Cell::ZeroVariance,
                    Err(e) => return Err(e),
                }
            };
            cells[i][j] = cell.clone();
            cells[j][i] = cell;
        }
    }
    Ok(CorrelationMatrix {
        labels: sorted.iter().map(|v| v.metric_name.clone()).collect(),
        cells,
    })
}

/// Width and depth of a network.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ArchSpec {
    pub model_id: String,
    pub attention_heads: u32,
    pub layers: u32,
    pub hidden_dim: u32,
    #[serde(default, rename = "parameters_millions")]
    pub parameters: Option<f64>,
    /// Optional family label used to split rows into separate correlations.
    #[serde(default)]
    pub family: Option<String>,
}

impl ArchSpec {
    pub fn new(model_id: impl Into<String>, attention_heads: u32, layers: u32, hidden_dim: u32) -> Self {
        ArchSpec {
            model_id: model_id.into(),
            attention_heads,
            layers,
            hidden_dim,
            parameters: None,
            family: None,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.attention_heads == 0 || self.layers == 0 || self.hidden_dim == 0 {
            return Err(AnalysisError::BadArch(self.model_id.clone()));
        }
        Ok(())
    }
}

/// Reads `model_id,attention_heads,layers,hidden_dim,parameters_millions`
/// rows, with an optional trailing `family` column.
pub fn read_arch_csv(text: &str) -> Result<Vec<ArchSpec>, AnalysisError> {
    let specs = csv_reader(text)
        .deserialize()
        .collect::<Result<Vec<ArchSpec>, _>>()?;
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Correlation of average safety with heads, layers and hidden size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchCorrelation {
    pub heads: f64,
    pub layers: f64,
    pub hidden: f64,
}

pub fn arch_correlation(rows: &[(ArchSpec, f64)]) -> Result<ArchCorrelation, AnalysisError> {
    for (a, _) in rows {
        a.validate()?;
    }
    let safety: Vec<f64> = rows.iter().map(|(_, s)| *s).collect();
    let column = |f: fn(&ArchSpec) -> u32| -> Vec<f64> {
        rows.iter().map(|(a, _)| f64::from(f(a))).collect()
    };
    Ok(ArchCorrelation {
        heads: pcc(&column(|a| a.attention_heads), &safety)?,
        layers: pcc(&column(|a| a.layers), &safety)?,
        hidden: pcc(&column(|a| a.hidden_dim), &safety)?,
    })
}
