//! CSV storage for datasets.
//!
//! ```text
//! sample_id,experiment_id,subject_id,label,role,f0,f1,...
//! A-0000,A,A-s0,1,source,0.25,-1.5,...
//! ```
//!
//! Labels are `1`, `-1` or `NA`; roles are `source`, `target_labeled` or
//! `target_test`. Features are written in shortest round-trip form, so a
//! write followed by a read is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::domain::{Dataset, Label, Role};
use crate::error::{Error, Result};

const META: [&str; 5] = ["sample_id", "experiment_id", "subject_id", "label", "role"];

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_from(File::open(path)?)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = File::create(path)?;
    write_dataset_to(ds, &mut file)?;
    file.flush()?;
    Ok(())
}

fn schema(line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        line: line as usize,
        message: message.into(),
    }
}

pub fn read_dataset_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = csv.records();

    let header = match records.next() {
        Some(r) => r?,
        None => return Err(schema(1, "missing header")),
    };
    if header.len() < META.len() || header.iter().zip(META).any(|(got, want)| got != want) {
        return Err(schema(
            1,
            format!("header must start with {}", META.join(",")),
        ));
    }
    let d = header.len() - META.len();
    if d == 0 {
        return Err(schema(1, "no feature columns"));
    }
    for (j, name) in header.iter().skip(META.len()).enumerate() {
        if name != format!("f{j}") {
            return Err(schema(1, format!("feature column {j} is named `{name}`, expected `f{j}`")));
        }
    }

    let mut values = Vec::new();
    let (mut samples, mut experiments, mut subjects) = (Vec::new(), Vec::new(), Vec::new());
    let (mut labels, mut roles) = (Vec::new(), Vec::new());
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(schema(
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        samples.push(record[0].to_string());
        experiments.push(record[1].to_string());
        subjects.push(record[2].to_string());
        let label: Label = record[3]
            .parse()
            .map_err(|_| schema(line, format!("label `{}` is not one of 1, -1, NA", &record[3])))?;
        labels.push(label);
        let role: Role = record[4].parse().map_err(|_| {
            schema(
                line,
                format!("role `{}` is not one of source, target_labeled, target_test", &record[4]),
            )
        })?;
        roles.push(role);
        for (j, field) in record.iter().skip(META.len()).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| schema(line, format!("feature f{j} `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(schema(line, format!("feature f{j} is not finite")));
            }
            values.push(v);
        }
        if role != Role::TargetTest && !label.is_labeled() {
            return Err(schema(line, format!("role {role} requires a label")));
        }
    }
    let n = samples.len();
    let features = DMatrix::from_vec(d, n, values);
    Dataset::new(features, samples, experiments, subjects, labels, roles)
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = META.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.d()).map(|j| format!("f{j}")));
    csv.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        row.clear();
        row.push(ds.sample_ids()[i].clone());
        row.push(ds.experiment_ids()[i].clone());
        row.push(ds.subject_ids()[i].clone());
        row.push(ds.labels()[i].token().to_string());
        row.push(ds.roles()[i].token().to_string());
        row.extend(ds.features().column(i).iter().map(|v| format!("{v}")));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, SynthConfig};

    fn read_str(s: &str) -> Result<Dataset> {
        read_dataset_from(s.as_bytes())
    }

    #[test]
    fn round_trip_is_lossless() {
        let cfg = SynthConfig {
            d: 5,
            subjects_per_experiment: 2,
            samples_per_subject_per_class: 3,
            ..SynthConfig::default()
        };
        for (_, ds) in generate_synthetic(&cfg).unwrap() {
            let mut buf = Vec::new();
            write_dataset_to(&ds, &mut buf).unwrap();
            let back = read_dataset_from(buf.as_slice()).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn round_trip_through_file_keeps_unlabeled() {
        let text = "sample_id,experiment_id,subject_id,label,role,f0\n\
                    a,e,s,1,source,0.1\n\
                    b,e,s,NA,target_test,1e-300\n";
        let ds = read_str(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
        assert_eq!(ds.labels()[1], Label::Unlabeled);
    }

    #[test]
    fn bad_label_names_the_line() {
        let text = "sample_id,experiment_id,subject_id,label,role,f0\n\
                    a,e,s,1,source,0.1\n\
                    b,e,s,2,source,0.2\n";
        match read_str(text) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_degenerate_and_malformed_files() {
        assert!(matches!(
            read_str("sample_id,experiment_id,subject_id,label,role\n"),
            Err(Error::Schema { line: 1, .. })
        ));
        assert!(matches!(read_str(""), Err(Error::Schema { line: 1, .. })));
        assert!(matches!(
            read_str("id,experiment_id,subject_id,label,role,f0\n"),
            Err(Error::Schema { line: 1, .. })
        ));
        let ragged = "sample_id,experiment_id,subject_id,label,role,f0,f1\na,e,s,1,source,0.1\n";
        assert!(matches!(read_str(ragged), Err(Error::Schema { line: 2, .. })));
        let text = "sample_id,experiment_id,subject_id,label,role,f0\na,e,s,1,source,abc\n";
        assert!(matches!(read_str(text), Err(Error::Schema { line: 2, .. })));
        let text = "sample_id,experiment_id,subject_id,label,role,f0\na,e,s,1,sink,0\n";
        assert!(matches!(read_str(text), Err(Error::Schema { line: 2, .. })));
        let text = "sample_id,experiment_id,subject_id,label,role,f0\na,e,s,NA,source,0\n";
        assert!(matches!(read_str(text), Err(Error::Schema { line: 2, .. })));
    }
}
