//! Tabular dataset ingestion: CSV parsing against a per-column schema,
//! one-hot/z-score encoding fitted on the training split, deterministic
//! splits, leave-one-out neighbors, synthetic test datasets, and a flat
//! binary cache format.

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CACHE_MAGIC: &[u8; 7] = b"SGLDDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

/// Per-column typing for CSV ingestion, keyed by header name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnKind>,
    /// Label value mapped to class 1 in binary tasks (e.g. "good credit").
    #[serde(default)]
    pub positive_label: Option<String>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

/// A parsed CSV table with typed columns, row order preserved.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub columns: Vec<RawColumn>,
    pub labels: Vec<String>,
    pub n_rows: usize,
}

/// Parses a headered CSV file against the schema.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Other(format!("missing header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(Error::Other("missing header row".into()));
    }
    let kinds: Vec<ColumnKind> = headers
        .iter()
        .map(|h| {
            schema
                .columns
                .get(h)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("schema missing column '{h}'")))
        })
        .collect::<Result<_>>()?;
    let label_count = kinds.iter().filter(|k| **k == ColumnKind::Label).count();
    if label_count != 1 {
        return Err(Error::InvalidArgument(format!(
            "schema must mark exactly one label column, found {label_count}"
        )));
    }

    // One storage column per non-label column; labels live separately.
    let mut columns: Vec<RawColumn> = kinds
        .iter()
        .filter(|k| **k != ColumnKind::Label)
        .map(|k| match k {
            ColumnKind::Numeric => RawColumn::Numeric(Vec::new()),
            _ => RawColumn::Categorical(Vec::new()),
        })
        .collect();
    let mut labels = Vec::new();
    let mut n_rows = 0usize;

    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse {
            row: row_idx,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::CsvParse {
                row: row_idx,
                column: "<record>".into(),
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let mut col_cursor = 0;
        for ((cell, kind), header) in record.iter().zip(&kinds).zip(&headers) {
            match kind {
                ColumnKind::Label => labels.push(cell.to_string()),
                ColumnKind::Numeric => {
                    let v: f64 = cell.parse().map_err(|e| Error::CsvParse {
                        row: row_idx,
                        column: header.clone(),
                        message: format!("unparseable numeric cell '{cell}': {e}"),
                    })?;
                    match &mut columns[col_cursor] {
                        RawColumn::Numeric(values) => values.push(v),
                        _ => unreachable!("column kind/storage mismatch"),
                    }
                    col_cursor += 1;
                }
                ColumnKind::Categorical => {
                    match &mut columns[col_cursor] {
                        RawColumn::Categorical(values) => values.push(cell.to_string()),
                        _ => unreachable!("column kind/storage mismatch"),
                    }
                    col_cursor += 1;
                }
            }
        }
        n_rows += 1;
    }

    Ok(RawTable {
        headers,
        kinds,
        columns,
        labels,
        n_rows,
    })
}

/// Encoding metadata: how each raw column maps onto feature columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub kind: ColumnKind,
    /// Categories observed in the fit split, sorted; one indicator column
    /// each plus a trailing unknown bucket.
    pub categories: Vec<String>,
    pub mean: f64,
    pub std: f64,
    /// Set for constant numeric columns, which encode to zeros.
    pub constant: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingMeta {
    pub columns: Vec<EncodedColumn>,
    pub label_classes: Vec<String>,
    pub warnings: Vec<String>,
}

/// Encoded feature matrix with labels and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularDataset {
    pub features: Vec<f64>,
    pub n_cols: usize,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub encoding: EncodingMeta,
    pub digest: String,
}

impl TabularDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn feature_refs(&self) -> Vec<&[f64]> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    /// A new dataset holding the given rows, encoding metadata unchanged.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        let mut out = Self {
            features,
            n_cols: self.n_cols,
            labels,
            n_classes: self.n_classes,
            encoding: self.encoding.clone(),
            digest: String::new(),
        };
        out.digest = out.compute_digest();
        out
    }

    /// Leave-one-out neighbor: this dataset minus row `index`.
    pub fn adjacent(&self, index: usize) -> Result<Self> {
        if index >= self.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "row index {index} out of range for n = {}",
                self.n_rows()
            )));
        }
        let indices: Vec<usize> = (0..self.n_rows()).filter(|&i| i != index).collect();
        Ok(self.subset(&indices))
    }

    fn compute_digest(&self) -> String {
        // FNV-1a over the raw feature and label bytes.
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for v in &self.features {
            for b in v.to_le_bytes() {
                eat(b);
            }
        }
        for l in &self.labels {
            for b in (*l as u64).to_le_bytes() {
                eat(b);
            }
        }
        format!("{hash:016x}")
    }

    /// Writes the flat binary container plus the JSON sidecar with the
    /// encoding metadata.
    pub fn save_cache(&self, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(bin_path)?;
        file.write_all(CACHE_MAGIC)?;
        file.write_all(&(self.n_rows() as u64).to_le_bytes())?;
        file.write_all(&(self.n_cols as u64).to_le_bytes())?;
        file.write_all(&(self.n_classes as u64).to_le_bytes())?;
        for v in &self.features {
            file.write_all(&v.to_le_bytes())?;
        }
        for l in &self.labels {
            file.write_all(&(*l as u64).to_le_bytes())?;
        }
        let sidecar = serde_json::json!({
            "digest": self.digest,
            "encoding": self.encoding,
        });
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load_cache(bin_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(bin_path)?;
        let mut magic = [0u8; 7];
        file.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Other("bad cache magic".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |file: &mut std::fs::File| -> Result<u64> {
            file.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let n_rows = read_u64(&mut file)? as usize;
        let n_cols = read_u64(&mut file)? as usize;
        let n_classes = read_u64(&mut file)? as usize;
        let mut features = vec![0.0f64; n_rows * n_cols];
        let mut buf = [0u8; 8];
        for v in &mut features {
            file.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mut labels = vec![0usize; n_rows];
        for l in &mut labels {
            file.read_exact(&mut buf)?;
            *l = u64::from_le_bytes(buf) as usize;
        }
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
        let encoding: EncodingMeta = serde_json::from_value(sidecar["encoding"].clone())?;
        let mut out = Self {
            features,
            n_cols,
            labels,
            n_classes,
            encoding,
            digest: String::new(),
        };
        out.digest = out.compute_digest();
        Ok(out)
    }
}

/// Encodes a raw table: categoricals one-hot against fit-split categories
/// plus an unknown bucket, numerics z-scored with fit-split statistics,
/// labels as contiguous integers.
pub fn encode(table: &RawTable, fit_rows: &[usize], schema: &Schema) -> Result<TabularDataset> {
    if fit_rows.is_empty() {
        return Err(Error::InvalidArgument("fit split is empty".into()));
    }
    let mut encoded_columns = Vec::new();
    let mut warnings = Vec::new();

    let mut col_cursor = 0;
    for (header, kind) in table.headers.iter().zip(&table.kinds) {
        if *kind == ColumnKind::Label {
            continue;
        }
        let column = &table.columns[col_cursor];
        col_cursor += 1;
        match (kind, column) {
            (ColumnKind::Numeric, RawColumn::Numeric(values)) => {
                let n = fit_rows.len() as f64;
                let mean: f64 = fit_rows.iter().map(|&i| values[i]).sum::<f64>() / n;
                let var: f64 =
                    fit_rows.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                let constant = std == 0.0;
                if constant {
                    warnings.push(format!("numeric column '{header}' is constant on the fit split"));
                }
                encoded_columns.push(EncodedColumn {
                    name: header.clone(),
                    kind: ColumnKind::Numeric,
                    categories: Vec::new(),
                    mean,
                    std,
                    constant,
                });
            }
            (ColumnKind::Categorical, RawColumn::Categorical(values)) => {
                let mut categories: Vec<String> =
                    fit_rows.iter().map(|&i| values[i].clone()).collect();
                categories.sort();
                categories.dedup();
                encoded_columns.push(EncodedColumn {
                    name: header.clone(),
                    kind: ColumnKind::Categorical,
                    categories,
                    mean: 0.0,
                    std: 0.0,
                    constant: false,
                });
            }
            _ => unreachable!("column kind/storage mismatch"),
        }
    }

    // Label classes: total over the observed values so every split encodes.
    let mut label_classes: Vec<String> = table.labels.clone();
    label_classes.sort();
    label_classes.dedup();
    if let Some(positive) = &schema.positive_label {
        if label_classes.len() == 2 {
            if let Some(pos) = label_classes.iter().position(|c| c == positive) {
                if pos == 0 {
                    label_classes.swap(0, 1);
                }
            }
        }
    }

    let n_cols: usize = encoded_columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => c.categories.len() + 1,
            ColumnKind::Label => 0,
        })
        .sum();

    let mut features = Vec::with_capacity(table.n_rows * n_cols);
    for row in 0..table.n_rows {
        let mut enc_idx = 0;
        for column in &table.columns {
            match (&encoded_columns[enc_idx], column) {
                (meta, RawColumn::Numeric(values)) => {
                    if meta.constant {
                        features.push(0.0);
                    } else {
                        features.push((values[row] - meta.mean) / meta.std);
                    }
                }
                (meta, RawColumn::Categorical(values)) => {
                    let slot = meta.categories.iter().position(|c| *c == values[row]);
                    for k in 0..meta.categories.len() {
                        features.push(if slot == Some(k) { 1.0 } else { 0.0 });
                    }
                    // Unknown bucket for values unseen at fit time.
                    features.push(if slot.is_none() { 1.0 } else { 0.0 });
                }
            }
            enc_idx += 1;
        }
    }

    let labels: Vec<usize> = table
        .labels
        .iter()
        .map(|l| {
            label_classes
                .iter()
                .position(|c| c == l)
                .expect("label class observed")
        })
        .collect();

    let n_classes = label_classes.len();
    let mut out = TabularDataset {
        features,
        n_cols,
        labels,
        n_classes,
        encoding: EncodingMeta {
            columns: encoded_columns,
            label_classes,
            warnings,
        },
        digest: String::new(),
    };
    out.digest = out.compute_digest();
    Ok(out)
}

/// Requested split sizes and the permutation seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub holdout: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TabularDataset,
    pub holdout: TabularDataset,
    pub test: TabularDataset,
}

/// The deterministic row permutation used by [`split`].
pub fn split_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, 0x5714);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order
}

/// Deterministic permutation by seed, then contiguous slicing.
pub fn split(dataset: &TabularDataset, spec: &SplitSpec) -> Result<Splits> {
    let n = dataset.n_rows();
    let requested = spec.train + spec.holdout + spec.test;
    if requested > n {
        return Err(Error::InvalidArgument(format!(
            "split sizes {requested} exceed dataset size {n}"
        )));
    }
    let order = split_permutation(n, spec.seed);
    let train = dataset.subset(&order[..spec.train]);
    let holdout = dataset.subset(&order[spec.train..spec.train + spec.holdout]);
    let test = dataset.subset(&order[spec.train + spec.holdout..requested]);
    Ok(Splits {
        train,
        holdout,
        test,
    })
}

/// Two Gaussian blobs at +-(separation/2) along the first axis, unit
/// covariance, balanced labels.
pub fn synthetic(n: usize, dims: usize, class_separation: f64, seed: u64) -> Result<TabularDataset> {
    if n < 2 || dims < 1 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs n >= 2 and dims >= 1, got n = {n}, dims = {dims}"
        )));
    }
    let mut rng = RngStream::new(seed, 0x5b10);
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let center = if label == 0 {
            -class_separation / 2.0
        } else {
            class_separation / 2.0
        };
        for d in 0..dims {
            let mean = if d == 0 { center } else { 0.0 };
            features.push(mean + rng.standard_normal());
        }
        labels.push(label);
    }
    let mut out = TabularDataset {
        features,
        n_cols: dims,
        labels,
        n_classes: 2,
        encoding: EncodingMeta {
            columns: Vec::new(),
            label_classes: vec!["0".into(), "1".into()],
            warnings: Vec::new(),
        },
        digest: String::new(),
    };
    out.digest = out.compute_digest();
    Ok(out)
}

/// A credit-scoring shaped surrogate table: 1000 rows, mixed categorical
/// and numeric columns, binary label from a noisy linear rule. Stands in
/// for real credit data when no data directory is configured.
pub fn credit_surrogate_table(seed: u64) -> (RawTable, Schema) {
    let n = 1000;
    let mut rng = RngStream::new(seed, 0xc4ed);
    let purposes = ["car", "furniture", "education", "business", "repairs"];
    let housings = ["own", "rent", "free"];
    let jobs = ["skilled", "unskilled", "management"];

    let mut amount = Vec::with_capacity(n);
    let mut duration = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut purpose = Vec::with_capacity(n);
    let mut housing = Vec::with_capacity(n);
    let mut job = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    for _ in 0..n {
        let a = 250.0 + 5000.0 * rng.uniform() + 2500.0 * rng.uniform();
        let d = 6.0 + (66.0 * rng.uniform()).floor();
        let g = 19.0 + (56.0 * rng.uniform()).floor();
        let p = (rng.next_u64() % purposes.len() as u64) as usize;
        let h = (rng.next_u64() % housings.len() as u64) as usize;
        let j = (rng.next_u64() % jobs.len() as u64) as usize;

        // Weak linear signal with heavy noise so that memorization pays
        // off more than generalization at n = 400 training rows.
        let score = -0.0004 * a - 0.04 * d + 0.02 * g
            + if h == 0 { 0.8 } else { 0.0 }
            + if j == 2 { 0.5 } else { 0.0 }
            + 2.2 * rng.standard_normal();
        let mut good = score > -0.5;
        if rng.uniform() < 0.15 {
            good = !good;
        }

        amount.push(a);
        duration.push(d);
        age.push(g);
        purpose.push(purposes[p].to_string());
        housing.push(housings[h].to_string());
        job.push(jobs[j].to_string());
        labels.push(if good { "good" } else { "bad" }.to_string());
    }

    let table = RawTable {
        headers: vec![
            "amount".into(),
            "duration".into(),
            "age".into(),
            "purpose".into(),
            "housing".into(),
            "job".into(),
            "credit".into(),
        ],
        kinds: vec![
            ColumnKind::Numeric,
            ColumnKind::Numeric,
            ColumnKind::Numeric,
            ColumnKind::Categorical,
            ColumnKind::Categorical,
            ColumnKind::Categorical,
            ColumnKind::Label,
        ],
        columns: vec![
            RawColumn::Numeric(amount),
            RawColumn::Numeric(duration),
            RawColumn::Numeric(age),
            RawColumn::Categorical(purpose),
            RawColumn::Categorical(housing),
            RawColumn::Categorical(job),
        ],
        labels,
        n_rows: n,
    };
    let mut columns = BTreeMap::new();
    for (h, k) in table.headers.iter().zip(&table.kinds) {
        columns.insert(h.clone(), *k);
    }
    let schema = Schema {
        columns,
        positive_label: Some("good".into()),
    };
    (table, schema)
}
