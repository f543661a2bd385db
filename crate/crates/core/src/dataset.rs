//! Line-delimited dataset files and the manifest built from them.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::fusion::BlendWeight;
use crate::guidance::{emit_guidance, parse_guidance};
use crate::model::{BinaryLabel, PredictionRecord, Probability, Split};

/// Embedding width of the reference backbone.
pub const DEFAULT_EMBEDDING_DIM: usize = 5120;

const FIELDS: [&str; 8] = [
    "id",
    "report_text",
    "label",
    "t_hat",
    "epsilon_hat",
    "embedding",
    "guidance_text",
    "split",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read `{path}`")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("bad split fractions: {0}")]
    Fraction(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<PredictionRecord>,
    pub d: usize,
}

impl DatasetManifest {
    pub fn new(records: Vec<PredictionRecord>, d: usize) -> Self {
        Self { records, d }
    }

    pub fn labeled(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.iter().filter(|r| r.label.is_some())
    }

    /// Fraction of positive labels among labeled records; `None` without
    /// labels.
    pub fn class_balance(&self) -> Option<f64> {
        let (mut n, mut pos) = (0usize, 0usize);
        for r in self.labeled() {
            n += 1;
            pos += usize::from(r.label == Some(BinaryLabel::Positive));
        }
        (n > 0).then(|| pos as f64 / n as f64)
    }

    pub fn positive_count(&self) -> usize {
        self.labeled()
            .filter(|r| r.label == Some(BinaryLabel::Positive))
            .count()
    }

    /// Recomputes `mu_hat` on every record.
    pub fn fill_combined(&mut self, alpha: BlendWeight) {
        for r in &mut self.records {
            r.refresh_combined(alpha);
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PredictionRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        line,
        field: field.to_owned(),
        message: message.into(),
    }
}

fn probability_field(obj: &Map<String, Value>, line: usize, field: &str) -> Result<Option<Probability>, DatasetError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => {
            let v = n.as_f64().ok_or_else(|| schema(line, field, "not representable"))?;
            Probability::new(v)
                .map(Some)
                .map_err(|e| schema(line, field, e.to_string()))
        }
        Some(_) => Err(schema(line, field, "expected a number")),
    }
}

fn string_field(obj: &Map<String, Value>, line: usize, field: &str) -> Result<Option<String>, DatasetError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(schema(line, field, "expected a string")),
    }
}

/// Parses one dataset line (1-based `line` for messages).
pub fn parse_record(text: &str, line: usize, expected_d: usize) -> Result<PredictionRecord, DatasetError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| schema(line, "<record>", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(schema(line, "<record>", "expected an object"));
    };
    if let Some(unknown) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(schema(line, unknown, "unknown field"));
    }
    let id = string_field(&obj, line, "id")?.ok_or_else(|| schema(line, "id", "missing"))?;
    if id.is_empty() {
        return Err(schema(line, "id", "empty"));
    }
    let report_text =
        string_field(&obj, line, "report_text")?.ok_or_else(|| schema(line, "report_text", "missing"))?;
    let mut record = PredictionRecord::new(id, report_text);

    record.label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(0) => Some(BinaryLabel::Negative),
            Some(1) => Some(BinaryLabel::Positive),
            _ => return Err(schema(line, "label", "expected 0 or 1")),
        },
    };
    record.t_hat = probability_field(&obj, line, "t_hat")?;
    record.epsilon_hat = probability_field(&obj, line, "epsilon_hat")?;

    record.embedding = match obj.get("embedding") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            if items.len() != expected_d {
                return Err(schema(
                    line,
                    "embedding",
                    format!("length {} but d = {expected_d}", items.len()),
                ));
            }
            let values = items
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| schema(line, "embedding", "expected finite numbers"))?;
            Some(values)
        }
        Some(_) => Err(schema(line, "embedding", "expected an array"))?,
    };

    if let Some(text) = string_field(&obj, line, "guidance_text")? {
        let doc = parse_guidance(&text).map_err(|e| schema(line, "guidance_text", e.to_string()))?;
        if record.t_hat.is_none() {
            record.t_hat = Some(doc.probability());
        }
        record.guidance = Some(doc);
    }

    record.split = match string_field(&obj, line, "split")? {
        None => None,
        Some(s) => Some(s.parse().map_err(|e: String| schema(line, "split", e))?),
    };
    record.refresh_combined(BlendWeight::default());
    Ok(record)
}

/// Reads every non-blank line. `mu_hat` is filled with the default blend
/// weight; refit and call [`DatasetManifest::fill_combined`] to change it.
pub fn read_dataset(input: impl BufRead, expected_d: usize) -> Result<DatasetManifest, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| schema(line_no, "<record>", e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let record = parse_record(&text, line_no, expected_d)?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(DatasetManifest::new(records, expected_d))
}

pub fn load_dataset(path: impl AsRef<Path>, expected_d: usize) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(BufReader::new(file), expected_d)
}

/// The wire form of a record. `mu_hat` is derived and not written; a
/// `t_hat` equal to the guidance probability is still written explicitly.
pub fn record_to_json(record: &PredictionRecord) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), record.id.clone().into());
    obj.insert("report_text".into(), record.report_text.clone().into());
    if let Some(label) = record.label {
        obj.insert("label".into(), u8::from(label).into());
    }
    if let Some(t) = record.t_hat {
        obj.insert("t_hat".into(), t.value().into());
    }
    if let Some(e) = record.epsilon_hat {
        obj.insert("epsilon_hat".into(), e.value().into());
    }
    if let Some(emb) = &record.embedding {
        obj.insert("embedding".into(), emb.clone().into());
    }
    if let Some(doc) = &record.guidance {
        obj.insert("guidance_text".into(), emit_guidance(doc).into());
    }
    if let Some(split) = record.split {
        obj.insert("split".into(), split.as_str().into());
    }
    Value::Object(obj)
}

pub fn write_dataset(manifest: &DatasetManifest, mut out: impl Write) -> std::io::Result<()> {
    for record in &manifest.records {
        serde_json::to_writer(&mut out, &record_to_json(record))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Split sizes: `floor(n * f)` each, then the remainder one at a time to the
/// splits with nonzero fraction, in declaration order.
pub fn split_sizes(n: usize, fractions: [f64; 4]) -> Result<[usize; 4], DatasetError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(DatasetError::Fraction("fractions must be finite and non-negative".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Fraction(format!("fractions sum to {total}, not 1")));
    }
    let mut sizes = fractions.map(|f| (n as f64 * f + 1e-9).floor() as usize);
    let mut assigned: usize = sizes.iter().sum();
    // floor can overshoot by one only through the epsilon; trim from the back
    while assigned > n {
        let i = (0..4).rev().find(|&i| sizes[i] > 0).expect("some split is nonempty");
        sizes[i] -= 1;
        assigned -= 1;
    }
    let eligible: Vec<usize> = (0..4).filter(|&i| fractions[i] > 0.0).collect();
    for &i in eligible.iter().cycle().take(n - assigned) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Seeded random assignment of every record to one split.
pub fn split_dataset(
    mut manifest: DatasetManifest,
    fractions: [f64; 4],
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let sizes = split_sizes(manifest.records.len(), fractions)?;
    let mut order: Vec<usize> = (0..manifest.records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut cursor = order.into_iter();
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for idx in cursor.by_ref().take(size) {
            manifest.records[idx].split = Some(split);
        }
    }
    Ok(manifest)
}
