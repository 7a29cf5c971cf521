//! Immutable labeled datasets and their CSV form.
//!
//! The CSV layout is a header row followed by one row per example. Feature
//! columns are named `f0`, `f1`, ... `f{d-1}`, the label column is `label`,
//! and an optional `cluster` column carries a precomputed cluster id. Column
//! order in the file does not matter; other columns are ignored.
//!
//! Labels are stored as dense integers `0..K`. If the `label` column is not
//! entirely integer, its distinct strings are sorted and numbered, and the
//! names are kept on the dataset so they can be written back out.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Arc<Vec<f64>>,
    dim: usize,
    labels: Vec<usize>,
    num_labels: usize,
    cluster_column: Option<Vec<usize>>,
    label_names: Option<Arc<Vec<String>>>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        let dim = features.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if let Some((row, f)) = features.iter().enumerate().find(|(_, f)| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                row,
                expected: dim,
                got: f.len(),
            });
        }
        Self::from_flat(features.concat(), dim, labels, num_labels)
    }

    /// Builds a dataset from row-major features of width `dim`.
    pub fn from_flat(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_labels == 0 {
            return Err(Error::param("num_labels", "label space must be non-empty"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some((row, y)) = labels.iter().enumerate().find(|(_, y)| **y >= num_labels) {
            return Err(Error::LabelOutOfRange {
                row,
                label: y.to_string(),
                num_labels,
            });
        }
        Ok(Self {
            features: Arc::new(features),
            dim,
            labels,
            num_labels,
            cluster_column: None,
            label_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: construction rejects empty datasets.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.feature(i))
    }

    pub fn features_flat(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Cluster ids read from the input's `cluster` column, when it had one.
    pub fn cluster_column(&self) -> Option<&[usize]> {
        self.cluster_column.as_deref()
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref().map(Vec::as_slice)
    }

    pub fn with_cluster_column(mut self, clusters: Vec<usize>) -> Result<Self> {
        if clusters.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: clusters.len(),
            });
        }
        self.cluster_column = Some(clusters);
        Ok(self)
    }

    pub fn without_cluster_column(mut self) -> Self {
        self.cluster_column = None;
        self
    }

    /// Same examples with replacement labels. Features are shared, not copied.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        if let Some((row, y)) = labels.iter().enumerate().find(|(_, y)| **y >= self.num_labels) {
            return Err(Error::LabelOutOfRange {
                row,
                label: y.to_string(),
                num_labels: self.num_labels,
            });
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    /// Rows at `indices`, in that order, each with the given label. The
    /// result may be empty.
    pub fn select_relabeled(&self, indices: &[usize], labels: Vec<usize>) -> Result<Self> {
        if labels.len() != indices.len() {
            return Err(Error::LengthMismatch {
                expected: indices.len(),
                got: labels.len(),
            });
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        let mut out = if indices.is_empty() {
            Self {
                features: Arc::new(features),
                labels,
                cluster_column: None,
                ..self.clone()
            }
        } else {
            Self::from_flat(features, self.dim, labels, self.num_labels)?
        };
        out.cluster_column = self
            .cluster_column
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i]).collect());
        out.label_names = self.label_names.clone();
        Ok(out)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        self.select_relabeled(indices, labels)
    }

    /// Writes the dataset in the layout read by [`read_csv`]. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        if self.cluster_column.is_some() {
            header.push("cluster".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            record.clear();
            record.extend(self.feature(i).iter().map(|x| x.to_string()));
            record.push(match &self.label_names {
                Some(names) => names[self.labels[i]].clone(),
                None => self.labels[i].to_string(),
            });
            if let Some(c) = &self.cluster_column {
                record.push(c[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// What the reader should expect from a CSV file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CsvSchema {
    /// Declared label-space size. When `None` it is inferred as the largest
    /// integer label plus one, or the number of distinct string labels.
    pub num_labels: Option<usize>,
    /// Read the `cluster` column if present.
    pub read_clusters: bool,
    /// Fixed names for string labels, so files lacking some label map
    /// consistently with the file that defined them.
    pub label_names: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn with_labels(num_labels: usize) -> Self {
        Self {
            num_labels: Some(num_labels),
            read_clusters: true,
            label_names: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::EmptyDataset),
    };
    let position = |name: &str| header.iter().position(|h| h.trim() == name);

    let label_col = position("label").ok_or_else(|| Error::MissingColumn("label".into()))?;
    let mut feature_cols = Vec::new();
    while let Some(c) = position(&format!("f{}", feature_cols.len())) {
        feature_cols.push(c);
    }
    if feature_cols.is_empty() {
        return Err(Error::MissingColumn("f0".into()));
    }
    // a gap in the numbering (f0, f2) is reported rather than silently truncated
    let gap = header.iter().filter_map(|h| h.trim().strip_prefix('f')?.parse::<usize>().ok()).max();
    if let Some(max) = gap {
        if max >= feature_cols.len() {
            return Err(Error::MissingColumn(format!("f{}", feature_cols.len())));
        }
    }
    let cluster_col = if schema.read_clusters { position("cluster") } else { None };

    let dim = feature_cols.len();
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut clusters = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        for (j, &c) in feature_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => features.push(x),
                _ => {
                    return Err(Error::NonNumericFeature {
                        row,
                        column: format!("f{j}"),
                        value: cell.to_string(),
                    })
                }
            }
        }
        raw_labels.push(rec.get(label_col).unwrap_or("").trim().to_string());
        if let Some(c) = cluster_col {
            let cell = rec.get(c).unwrap_or("").trim();
            clusters.push(cell.parse::<usize>().map_err(|_| Error::BadClusterId {
                row,
                value: cell.to_string(),
            })?);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let (labels, num_labels, names) = decode_labels(&raw_labels, schema.num_labels, schema.label_names.as_deref())?;
    let mut data = LabeledDataset::from_flat(features, dim, labels, num_labels)?;
    data.label_names = names.map(Arc::new);
    if cluster_col.is_some() {
        data = data.with_cluster_column(clusters)?;
    }
    Ok(data)
}

type DecodedLabels = (Vec<usize>, usize, Option<Vec<String>>);

fn decode_labels(raw: &[String], declared: Option<usize>, fixed: Option<&[String]>) -> Result<DecodedLabels> {
    if let Some(names) = fixed {
        let num_labels = declared.unwrap_or(names.len());
        let labels = raw
            .iter()
            .enumerate()
            .map(|(row, s)| match names.iter().position(|n| n == s) {
                Some(y) if y < num_labels => Ok(y),
                _ => Err(Error::LabelOutOfRange {
                    row,
                    label: s.clone(),
                    num_labels,
                }),
            })
            .collect::<Result<_>>()?;
        return Ok((labels, num_labels, Some(names.to_vec())));
    }
    let ints: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(ints) = ints {
        let max = *ints.iter().max().expect("non-empty");
        let num_labels = declared.unwrap_or((max.max(0) + 1) as usize);
        let mut labels = Vec::with_capacity(ints.len());
        for (row, &y) in ints.iter().enumerate() {
            if y < 0 || y as u64 >= num_labels as u64 {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: y.to_string(),
                    num_labels,
                });
            }
            labels.push(y as usize);
        }
        return Ok((labels, num_labels, None));
    }
    let names: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let num_labels = declared.unwrap_or(names.len());
    let mut labels = Vec::with_capacity(raw.len());
    for (row, s) in raw.iter().enumerate() {
        let y = names.binary_search(s).expect("name collected above");
        if y >= num_labels {
            return Err(Error::LabelOutOfRange {
                row,
                label: s.clone(),
                num_labels,
            });
        }
        labels.push(y);
    }
    Ok((labels, num_labels, Some(names)))
}
