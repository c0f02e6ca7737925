//! Tabular binary-classification data: CSV ingestion, min-max scaling,
//! stratified splitting and per-class reference samples.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub n_rows: usize,
}

/// Feature matrix with binary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>, source: impl Into<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != feature_names.len()) {
            return Err(Error::Data { row: i, message: format!("{} cells, expected {}", r.len(), feature_names.len()) });
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Schema(format!("label {} at row {i} is not 0/1", labels[i])));
        }
        let n_rows = rows.len();
        Ok(Dataset { feature_names, rows, labels, provenance: Provenance { source: source.into(), n_rows } })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: Provenance { source: format!("{}#{tag}", self.provenance.source), n_rows: indices.len() },
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    /// Replaces zeros in the named columns by the median of that column's
    /// nonzero values. Opt-in: the default pipeline leaves zeros untouched.
    pub fn impute_zero_median(&self, columns: &[&str]) -> Result<Dataset> {
        let mut out = self.clone();
        for name in columns {
            let j = self
                .feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::Schema(format!("no column named '{name}'")))?;
            let mut nonzero: Vec<f64> = self.rows.iter().map(|r| r[j]).filter(|&v| v != 0.0).collect();
            if nonzero.is_empty() {
                continue;
            }
            nonzero.sort_by(f64::total_cmp);
            let m = nonzero.len();
            let median = if m % 2 == 1 { nonzero[m / 2] } else { 0.5 * (nonzero[m / 2 - 1] + nonzero[m / 2]) };
            for r in &mut out.rows {
                if r[j] == 0.0 {
                    r[j] = median;
                }
            }
        }
        Ok(out)
    }
}

/// Reads a headered, comma-delimited CSV. Every non-label column is a feature.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read dataset {}: {e}", path.display())))?;
    parse_csv(&text, label_column, &path.display().to_string())
}

pub fn parse_csv(text: &str, label_column: &str, source: &str) -> Result<Dataset> {
    if text.trim().is_empty() {
        return Err(Error::Schema(format!("{source}: empty file, no header row")));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Schema(format!("{source}: no label column '{label_column}'")))?;
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.clone()).collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Data { row: i, message: format!("{} cells, header has {}", record.len(), header.len()) });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Data {
                row: i,
                message: format!("column '{}': cannot parse '{cell}' as a finite number", header[j]),
            })?;
            if j == label_idx {
                labels.push(match value {
                    v if v == 0.0 => 0,
                    v if v == 1.0 => 1,
                    v => return Err(Error::Schema(format!("{source}: label {v} at row {i} is not binary"))),
                });
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }
    Dataset::new(feature_names, rows, labels, source)
}

/// Per-feature min-max scaler fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scaled {
    pub rows: Vec<Vec<f64>>,
    /// Cells clipped back into `[0, 1]`.
    pub clipped: usize,
}

impl Scaler {
    pub fn fit(train: &Dataset) -> Result<Scaler> {
        if train.is_empty() {
            return Err(Error::Argument("cannot fit a scaler on an empty split".into()));
        }
        let d = train.n_features();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in &train.rows {
            for j in 0..d {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        if let Some(j) = (0..d).find(|&j| max[j] <= min[j]) {
            return Err(Error::Scaler(train.feature_names[j].clone()));
        }
        Ok(Scaler { feature_names: train.feature_names.clone(), min, max })
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Scaled> {
        let mut clipped = 0;
        let mut out = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != self.min.len() {
                return Err(Error::Data { row: i, message: format!("{} features, scaler has {}", r.len(), self.min.len()) });
            }
            out.push(
                r.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let s = (v - self.min[j]) / (self.max[j] - self.min[j]);
                        if !(0.0..=1.0).contains(&s) {
                            clipped += 1;
                        }
                        s.clamp(0.0, 1.0)
                    })
                    .collect(),
            );
        }
        Ok(Scaled { rows: out, clipped })
    }

    /// Scaled copy of a dataset; the clip count is discarded.
    pub fn transform_dataset(&self, ds: &Dataset) -> Result<(Dataset, usize)> {
        let scaled = self.transform(&ds.rows)?;
        let mut out = ds.clone();
        out.rows = scaled.rows;
        Ok((out, scaled.clipped))
    }
}

/// Row indices of a split, persisted for exact reproduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded stratified split. Test rows per class are allocated by largest
/// remainder so the total is `round(test_fraction * n)`.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset, SplitManifest)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Argument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let by_class: [Vec<usize>; 2] = [0u8, 1].map(|c| order.iter().copied().filter(|&i| ds.labels[i] == c).collect());

    let total_test = (test_fraction * ds.len() as f64).round() as usize;
    let quotas: Vec<f64> = by_class.iter().map(|c| test_fraction * c.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest = total_test.saturating_sub(take.iter().sum());
    let mut by_remainder: Vec<usize> = vec![0, 1];
    by_remainder.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for c in by_remainder {
        if rest > 0 && take[c] < by_class[c].len() {
            take[c] += 1;
            rest -= 1;
        }
    }

    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for c in 0..2 {
        test_idx.extend_from_slice(&by_class[c][..take[c]]);
        train_idx.extend_from_slice(&by_class[c][take[c]..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let train = ds.subset(&train_idx, "train");
    if train.class_counts().contains(&0) {
        return Err(Error::Split(format!(
            "a class is absent from the training split (seed {seed}, fraction {test_fraction}); try another seed or fraction"
        )));
    }
    let test = ds.subset(&test_idx, "test");
    Ok((train, test, SplitManifest { seed, test_fraction, train_indices: train_idx, test_indices: test_idx }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    #[default]
    Mean,
    Medoid,
}

/// Central sample of one class in scaled feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReference {
    pub label: u8,
    pub vector: Vec<f64>,
}

/// One reference per class present in `labels`, ordered by label.
pub fn class_references(rows: &[Vec<f64>], labels: &[u8], kind: ReferenceKind) -> Result<Vec<ClassReference>> {
    if rows.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let mut refs = Vec::new();
    for label in 0..=1u8 {
        let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l == label).map(|(r, _)| r).collect();
        if members.is_empty() {
            continue;
        }
        let d = members[0].len();
        let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64).collect();
        let vector = match kind {
            ReferenceKind::Mean => mean,
            ReferenceKind::Medoid => {
                let cost = |a: &Vec<f64>| -> f64 {
                    members.iter().map(|b| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()).sum()
                };
                members.iter().min_by(|a, b| cost(a).total_cmp(&cost(b))).map(|m| (*m).clone()).unwrap()
            }
        };
        refs.push(ClassReference { label, vector });
    }
    Ok(refs)
}

/// Column means of `rows`.
pub fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else { return vec![] };
    (0..first.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}
