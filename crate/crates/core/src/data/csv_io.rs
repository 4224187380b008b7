use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{RawDataset, SubjectStream};
use crate::error::{Error, Result};

/// Column mapping for `subject,<ch_0>,...,<ch_{C-1}>,label` files.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub sampling_rate_hz: f64,
    pub subject_column: String,
    pub label_column: String,
    /// Channel columns in order; `None` takes every other column in file order.
    pub channel_columns: Option<Vec<String>>,
    /// Fixed label table; `None` assigns indices by first appearance.
    pub class_table: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn new(sampling_rate_hz: f64) -> Self {
        Self {
            sampling_rate_hz,
            subject_column: "subject".into(),
            label_column: "label".into(),
            channel_columns: None,
            class_table: None,
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawDataset> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_csv(file, path, schema)
}

/// Parses CSV from any reader; `origin` is only used in error messages.
pub fn read_csv(input: impl Read, origin: &Path, schema: &CsvSchema) -> Result<RawDataset> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let subject_col = find(&schema.subject_column)?;
    let label_col = find(&schema.label_column)?;
    let channel_cols: Vec<usize> = match &schema.channel_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != subject_col && i != label_col)
            .collect(),
    };
    if channel_cols.is_empty() {
        return Err(parse_err(1, "no channel columns".into()));
    }
    let channel_names = channel_cols
        .iter()
        .map(|&i| headers[i].to_string())
        .collect();

    let mut class_names: Vec<String> = schema.class_table.clone().unwrap_or_default();
    let mut class_index: HashMap<String, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let mut subjects: Vec<SubjectStream> = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let subject = record
            .get(subject_col)
            .ok_or_else(|| parse_err(line, "missing subject field".into()))?;
        let label = record
            .get(label_col)
            .ok_or_else(|| parse_err(line, "missing label field".into()))?;
        let label = match class_index.get(label) {
            Some(&i) => i,
            None if schema.class_table.is_some() => {
                return Err(parse_err(line, format!("unknown label `{label}`")))
            }
            None => {
                class_names.push(label.to_string());
                class_index.insert(label.to_string(), class_names.len() - 1);
                class_names.len() - 1
            }
        };
        let idx = *subject_index.entry(subject.to_string()).or_insert_with(|| {
            subjects.push(SubjectStream {
                subject: subject.to_string(),
                samples: Vec::new(),
                labels: Vec::new(),
            });
            subjects.len() - 1
        });
        let stream = &mut subjects[idx];
        for &c in &channel_cols {
            let raw = record
                .get(c)
                .ok_or_else(|| parse_err(line, format!("missing value for `{}`", &headers[c])))?;
            let value: f64 = raw.parse().map_err(|_| {
                parse_err(
                    line,
                    format!("non-numeric value `{raw}` in `{}`", &headers[c]),
                )
            })?;
            stream.samples.push(value);
        }
        stream.labels.push(label);
    }
    if subjects.is_empty() {
        return Err(Error::NoDataRows(PathBuf::from(origin)));
    }
    let dataset = RawDataset {
        sampling_rate_hz: schema.sampling_rate_hz,
        channel_names,
        class_names,
        subjects,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `subject,<channels...>,label` with labels as class names.
pub fn write_csv(raw: &RawDataset, out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string()];
    header.extend(raw.channel_names.iter().cloned());
    header.push("label".into());
    writer.write_record(&header)?;
    let c = raw.channels();
    for s in &raw.subjects {
        for (t, &label) in s.labels.iter().enumerate() {
            let mut row = Vec::with_capacity(c + 2);
            row.push(s.subject.clone());
            row.extend(s.samples[t * c..(t + 1) * c].iter().map(|v| v.to_string()));
            row.push(raw.class_names[label].clone());
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}
