//! Dataset ingestion: tabular CSV with a column schema, and small raster images.
//!
//! Encoded features are laid out column by column: a numeric column takes one
//! slot (standardized), a categorical column a one-hot block. Labels are
//! one-hot over the sorted distinct label values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Magic bytes of the raster image format.
pub const IMAGE_MAGIC: &[u8; 4] = b"DPIM";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric { mean: f64, std: f64, round: bool },
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// First encoded slot of this column.
    pub offset: usize,
}

impl Column {
    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Numeric { .. } => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }
}

/// Whether features are free-range tabular values or pixels in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Tabular,
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub domain: Domain,
    pub columns: Vec<Column>,
    pub label: String,
    pub classes: Vec<String>,
}

impl Schema {
    pub fn feature_dim(&self) -> usize {
        self.columns.iter().map(Column::width).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Encoded slots that hold one-hot categorical values.
    pub fn categorical_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.feature_dim()];
        for col in &self.columns {
            if let ColumnKind::Categorical { .. } = col.kind {
                mask[col.offset..col.offset + col.width()].fill(true);
            }
        }
        mask
    }

    /// One-hot blocks as `(offset, width)`.
    pub fn categorical_blocks(&self) -> Vec<(usize, usize)> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Categorical { .. }))
            .map(|c| (c.offset, c.width()))
            .collect()
    }

    /// Identity-scaled numeric schema for `rows×cols` images with `classes` labels.
    pub fn image(rows: usize, cols: usize, classes: Vec<String>) -> Self {
        let columns = (0..rows * cols)
            .map(|i| Column {
                name: format!("px{i}"),
                kind: ColumnKind::Numeric {
                    mean: 0.0,
                    std: 1.0,
                    round: false,
                },
                offset: i,
            })
            .collect();
        Schema {
            domain: Domain::Image,
            columns,
            label: "label".into(),
            classes,
        }
    }

    fn class_index(&self, value: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == value)
            .ok_or_else(|| Error::Schema(format!("unknown label value {value:?}")))
    }

    pub fn check_compatible(&self, other: &Schema) -> Result<()> {
        if self != other {
            return Err(Error::Schema(
                "datasets do not share the same schema".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Test,
    Synthetic,
}

/// Encoded features, one-hot labels and the schema that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Tensor,
    schema: Schema,
    pub split: SplitTag,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Tensor, schema: Schema, split: SplitTag) -> Result<Self> {
        let (m, p) = features.dims2();
        let (ml, c) = labels.dims2();
        if !features.is_matrix() || !labels.is_matrix() || m != ml {
            return Err(Error::Shape(format!(
                "features {:?} and labels {:?} disagree",
                features.shape(),
                labels.shape()
            )));
        }
        if p != schema.feature_dim() || c != schema.num_classes() {
            return Err(Error::Shape(format!(
                "dataset is {m}×{p} with {c} classes but schema wants {} features and {} classes",
                schema.feature_dim(),
                schema.num_classes()
            )));
        }
        for i in 0..m {
            let row = labels.row(i);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) || row.iter().sum::<f64>() != 1.0 {
                return Err(Error::Schema(format!("label row {i} is not one-hot")));
            }
        }
        Ok(LabeledDataset {
            features,
            labels,
            schema,
            split,
        })
    }

    pub fn from_indices(
        features: Tensor,
        labels: &[usize],
        schema: Schema,
        split: SplitTag,
    ) -> Result<Self> {
        let c = schema.num_classes();
        let mut onehot = Tensor::zeros(&[labels.len(), c]);
        for (i, &k) in labels.iter().enumerate() {
            if k >= c {
                return Err(Error::Schema(format!("label {k} out of {c} classes")));
            }
            onehot.data_mut()[i * c + k] = 1.0;
        }
        Self::new(features, onehot, schema, split)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.schema.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        let c = self.num_classes();
        self.labels
            .data()
            .chunks(c.max(1))
            .take(self.len())
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for k in self.label_indices() {
            counts[k] += 1;
        }
        counts
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize], split: SplitTag) -> Result<Self> {
        let p = self.feature_dim();
        let c = self.num_classes();
        let mut f = Vec::with_capacity(rows.len() * p);
        let mut l = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= self.len() {
                return Err(Error::Shape(format!("row {i} out of {}", self.len())));
            }
            f.extend_from_slice(self.features.row(i));
            l.extend_from_slice(self.labels.row(i));
        }
        Ok(LabeledDataset {
            features: Tensor::matrix(rows.len(), p, f)?,
            labels: Tensor::matrix(rows.len(), c, l)?,
            schema: self.schema.clone(),
            split,
        })
    }

    /// Original-space values of every row, label last.
    pub fn decode(&self) -> Vec<Vec<String>> {
        let labels = self.label_indices();
        (0..self.len())
            .map(|i| {
                let row = self.features.row(i);
                let mut out: Vec<String> = self
                    .schema
                    .columns
                    .iter()
                    .map(|col| decode_value(col, &row[col.offset..col.offset + col.width()]))
                    .collect();
                out.push(self.schema.classes[labels[i]].clone());
                out
            })
            .collect()
    }

    /// Write decoded rows as CSV with a header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let mut header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(&self.schema.label);
        w.write_record(&header)?;
        for row in self.decode() {
            w.write_record(&row)?;
        }
        Ok(())
    }
}

fn decode_value(col: &Column, slots: &[f64]) -> String {
    match &col.kind {
        ColumnKind::Numeric { mean, std, round } => {
            let v = slots[0] * std + mean;
            if *round {
                format!("{}", v.round())
            } else {
                format!("{v}")
            }
        }
        ColumnKind::Categorical { categories } => {
            let k = argmax(slots);
            categories[k].clone()
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// How missing cells are handled while encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impute {
    #[default]
    None,
    /// Numeric mean, categorical mode.
    MeanMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Numeric,
    Categorical,
    Label,
    Ignore,
}

/// Column roles read from a TOML schema file:
///
/// ```toml
/// label = "income"
/// impute = "mean_mode"   # optional, default "none"
/// round = ["age"]        # numeric columns rounded on decode
///
/// [columns]
/// age = "numeric"
/// workclass = "categorical"
/// fnlwgt = "ignore"
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub label: String,
    #[serde(default)]
    pub impute: Impute,
    #[serde(default)]
    pub round: Vec<String>,
    pub columns: BTreeMap<String, ColumnRole>,
}

impl SchemaSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    fn role(&self, name: &str) -> Result<ColumnRole> {
        if name == self.label {
            return Ok(ColumnRole::Label);
        }
        self.columns
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("column {name:?} has no role in the schema spec")))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "?" | "NA" | "NaN" | "nan")
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(RawTable { header, rows })
}

/// Load a CSV and fit the schema (category vocabularies, numeric statistics) on it.
pub fn load_csv(path: impl AsRef<Path>, spec: &SchemaSpec) -> Result<LabeledDataset> {
    let table = read_table(path.as_ref())?;
    let schema = fit_schema(&table, spec)?;
    encode_table(&table, &schema, spec.impute)
}

/// Load a CSV and encode it with an already-fitted schema.
pub fn load_csv_with_schema(
    path: impl AsRef<Path>,
    schema: &Schema,
    impute: Impute,
) -> Result<LabeledDataset> {
    let table = read_table(path.as_ref())?;
    encode_table(&table, schema, impute)
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("CSV has no column {name:?}")))
}

fn fit_schema(table: &RawTable, spec: &SchemaSpec) -> Result<Schema> {
    let label_idx = column_index(&table.header, &spec.label)?;
    let mut columns = Vec::new();
    let mut offset = 0;
    for (j, name) in table.header.iter().enumerate() {
        let kind = match spec.role(name)? {
            ColumnRole::Label | ColumnRole::Ignore => continue,
            ColumnRole::Numeric => {
                let mut vals = Vec::with_capacity(table.rows.len());
                for (i, row) in table.rows.iter().enumerate() {
                    let cell = &row[j];
                    if is_missing(cell) {
                        continue;
                    }
                    vals.push(parse_number(cell, i, name)?);
                }
                if vals.is_empty() {
                    return Err(Error::Schema(format!("numeric column {name:?} has no values")));
                }
                let (mean, std) = mean_std(&vals);
                ColumnKind::Numeric {
                    mean,
                    std: if std > 0.0 { std } else { 1.0 },
                    round: spec.round.iter().any(|r| r == name),
                }
            }
            ColumnRole::Categorical => {
                let cats: BTreeSet<&str> = table
                    .rows
                    .iter()
                    .map(|r| r[j].as_str())
                    .filter(|c| !is_missing(c))
                    .collect();
                if cats.is_empty() {
                    return Err(Error::Schema(format!("categorical column {name:?} has no values")));
                }
                ColumnKind::Categorical {
                    categories: cats.into_iter().map(str::to_string).collect(),
                }
            }
        };
        let col = Column {
            name: name.clone(),
            kind,
            offset,
        };
        offset += col.width();
        columns.push(col);
    }
    for name in spec.columns.keys() {
        if !table.header.contains(name) {
            return Err(Error::Schema(format!("schema names column {name:?} missing from CSV")));
        }
    }
    let classes: BTreeSet<&str> = table.rows.iter().map(|r| r[label_idx].as_str()).collect();
    if classes.iter().any(|c| is_missing(c)) {
        return Err(Error::Schema("label column has missing values".into()));
    }
    Ok(Schema {
        domain: Domain::Tabular,
        columns,
        label: spec.label.clone(),
        classes: classes.into_iter().map(str::to_string).collect(),
    })
}

fn parse_number(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::Schema(format!("row {row}, column {col:?}: {cell:?} is not a number")))
}

/// Mean and population standard deviation.
fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn encode_table(table: &RawTable, schema: &Schema, impute: Impute) -> Result<LabeledDataset> {
    let label_idx = column_index(&table.header, &schema.label)?;
    let idx: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| column_index(&table.header, &c.name))
        .collect::<Result<_>>()?;

    // fill values for imputation come from the data being encoded
    let fills: Vec<Option<String>> = match impute {
        Impute::None => vec![None; schema.columns.len()],
        Impute::MeanMode => schema
            .columns
            .iter()
            .zip(&idx)
            .map(|(col, &j)| impute_fill(table, col, j))
            .collect::<Result<_>>()?,
    };

    let p = schema.feature_dim();
    let m = table.rows.len();
    let mut features = vec![0.0; m * p];
    let mut labels = Vec::with_capacity(m);
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(Error::Schema(format!("row {i} has {} cells", row.len())));
        }
        let out = &mut features[i * p..(i + 1) * p];
        for ((col, &j), fill) in schema.columns.iter().zip(&idx).zip(&fills) {
            let mut cell = row[j].as_str();
            if is_missing(cell) {
                match fill {
                    Some(f) => cell = f.as_str(),
                    None => {
                        return Err(Error::Schema(format!(
                            "missing value at row {i}, column {:?} (no imputation configured)",
                            col.name
                        )))
                    }
                }
            }
            match &col.kind {
                ColumnKind::Numeric { mean, std, .. } => {
                    out[col.offset] = (parse_number(cell, i, &col.name)? - mean) / std;
                }
                ColumnKind::Categorical { categories } => {
                    let k = categories.iter().position(|c| c == cell).ok_or_else(|| {
                        Error::Schema(format!(
                            "unknown category {cell:?} in column {:?} (row {i})",
                            col.name
                        ))
                    })?;
                    out[col.offset + k] = 1.0;
                }
            }
        }
        labels.push(schema.class_index(&row[label_idx])?);
    }
    LabeledDataset::from_indices(
        Tensor::matrix(m, p, features)?,
        &labels,
        schema.clone(),
        SplitTag::Full,
    )
}

fn impute_fill(table: &RawTable, col: &Column, j: usize) -> Result<Option<String>> {
    let present = table.rows.iter().map(|r| r[j].as_str()).filter(|c| !is_missing(c));
    Ok(Some(match &col.kind {
        ColumnKind::Numeric { .. } => {
            let vals: Vec<f64> = present
                .enumerate()
                .map(|(i, c)| parse_number(c, i, &col.name))
                .collect::<Result<_>>()?;
            if vals.is_empty() {
                return Ok(None);
            }
            format!("{}", vals.iter().sum::<f64>() / vals.len() as f64)
        }
        ColumnKind::Categorical { .. } => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for c in present {
                *counts.entry(c).or_default() += 1;
            }
            // ties resolve to the lexicographically first category
            let Some((mode, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            else {
                return Ok(None);
            };
            mode.to_string()
        }
    }))
}

/// Raster images: either the binary format
///
/// ```text
/// magic "DPIM" | count u32 LE | rows u32 LE | cols u32 LE
/// then per image: label u8 | rows·cols pixel u8
/// ```
///
/// or a headerless CSV whose rows are `label, p0, p1, …` with pixels in 0..=255.
/// Pixels are scaled to `[0, 1]`; classes are the distinct labels in ascending order.
pub fn load_images(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(IMAGE_MAGIC) {
        decode_image_bytes(&bytes)
    } else {
        load_image_csv(path)
    }
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "image file truncated in header at byte offset {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != IMAGE_MAGIC {
        return Err(Error::Format("bad image magic".into()));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (count, rows, cols) = (word(4), word(8), word(12));
    let record = 1 + rows * cols;
    let need = 16 + count * record;
    if bytes.len() < need {
        let complete = (bytes.len() - 16) / record;
        return Err(Error::Format(format!(
            "image file truncated: record {complete} incomplete at byte offset {} (expected {need} bytes)",
            bytes.len()
        )));
    }
    if bytes.len() > need {
        return Err(Error::Format(format!(
            "image file has {} trailing bytes after {count} records (byte offset {need})",
            bytes.len() - need
        )));
    }
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * rows * cols);
    for rec in bytes[16..].chunks_exact(record) {
        labels.push(rec[0]);
        pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    build_image_dataset(rows, cols, &labels, pixels)
}

fn build_image_dataset(rows: usize, cols: usize, labels: &[u8], pixels: Vec<f64>) -> Result<LabeledDataset> {
    let distinct: BTreeSet<u8> = labels.iter().copied().collect();
    let classes: Vec<u8> = distinct.into_iter().collect();
    let schema = Schema::image(rows, cols, classes.iter().map(|c| c.to_string()).collect());
    let idx: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();
    LabeledDataset::from_indices(
        Tensor::matrix(labels.len(), rows * cols, pixels)?,
        &idx,
        schema,
        SplitTag::Full,
    )
}

fn load_image_csv(path: &Path) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let w = rec.len().saturating_sub(1);
        if *width.get_or_insert(w) != w || w == 0 {
            return Err(Error::Format(format!("image CSV row {i} has {w} pixels")));
        }
        let label: u8 = rec[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {i}: bad label {:?}", &rec[0])))?;
        labels.push(label);
        for cell in rec.iter().skip(1) {
            let v: u8 = cell
                .parse()
                .map_err(|_| Error::Format(format!("row {i}: bad pixel {cell:?}")))?;
            pixels.push(f64::from(v) / 255.0);
        }
    }
    let w = width.unwrap_or(0);
    let side = (w as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == w { (side, side) } else { (1, w) };
    build_image_dataset(rows, cols, &labels, pixels)
}

/// Binary image encoding of pixel rows in `[0, 1]` (rounded to u8).
pub fn encode_images(rows: usize, cols: usize, labels: &[u8], pixels: &[Vec<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + labels.len() * (1 + rows * cols));
    out.extend_from_slice(IMAGE_MAGIC);
    for v in [labels.len(), rows, cols] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (l, px) in labels.iter().zip(pixels) {
        out.push(*l);
        out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

/// Seeded shuffle, then the first `fraction` of rows become the training split.
pub fn split(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = Rng::new(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    if stratified {
        let labels = data.label_indices();
        for k in 0..data.num_classes() {
            let mut rows: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == k).collect();
            if rows.is_empty() {
                continue;
            }
            rng.shuffle(&mut rows);
            let n_train = (fraction * rows.len() as f64).round() as usize;
            if n_train == 0 || n_train == rows.len() {
                return Err(Error::Domain(format!(
                    "class {:?} ({} rows) would be absent from one side of the split",
                    data.schema().classes[k],
                    rows.len()
                )));
            }
            train.extend_from_slice(&rows[..n_train]);
            test.extend_from_slice(&rows[n_train..]);
        }
        rng.shuffle(&mut train);
        rng.shuffle(&mut test);
    } else {
        let mut rows: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut rows);
        let n_train = (fraction * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    Ok((
        data.select(&train, SplitTag::Train)?,
        data.select(&test, SplitTag::Test)?,
    ))
}
