use std::path::Path;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::TensorBuffer;

/// Column selection for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Empty selects every column except the label.
    pub feature_cols: Vec<String>,
    pub label_col: String,
    pub class_count: usize,
    /// Min-max scale each feature column to `[0, 1]`.
    pub normalize: bool,
}

/// Reads a headed CSV file into a row-ordered set of shape-`[d]` examples.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LabeledSet> {
    let path = path.as_ref();
    let mut reader = ::csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, format!("missing column `{name}`")))
    };
    let label_idx = column(&opts.label_col)?;
    let feature_idx = if opts.feature_cols.is_empty() {
        (0..headers.len()).filter(|&j| j != label_idx).collect()
    } else {
        opts.feature_cols
            .iter()
            .map(|c| column(c))
            .collect::<Result<Vec<_>>>()?
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // row 1 is the header
        let row = i + 2;
        let record = record.map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
        let cell = |j: usize| record.get(j).unwrap_or("").trim();
        let values = feature_idx
            .iter()
            .map(|&j| {
                cell(j).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::parse(path, format!("row {row}: non-numeric value `{}` in `{}`", cell(j), &headers[j]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let label: usize = cell(label_idx)
            .parse()
            .map_err(|_| Error::parse(path, format!("row {row}: bad label `{}`", cell(label_idx))))?;
        if label >= opts.class_count {
            return Err(Error::parse(
                path,
                format!("row {row}: label {label} not below class count {}", opts.class_count),
            ));
        }
        rows.push(values);
        labels.push(label);
    }

    if opts.normalize {
        for j in 0..feature_idx.len() {
            let (lo, hi) = rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
            let width = hi - lo;
            for r in &mut rows {
                r[j] = if width > 0.0 { (r[j] - lo) / width } else { 0.0 };
            }
        }
    } else if let Some((i, _)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return Err(Error::parse(
            path,
            format!("row {}: feature outside [0, 1]; enable normalization", i + 2),
        ));
    }

    let features = rows.into_iter().map(TensorBuffer::vector).collect();
    LabeledSet::new(features, labels, opts.class_count)
}
