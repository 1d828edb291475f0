//! CSV reading and writing for feature tables.
//!
//! Layout: UTF-8, a header row with the 63 canonical column names in
//! schema order, one row per flow, plus a trailing `label` column when
//! labels are present. Real values are rendered with up to 9
//! significant digits (trailing zeros dropped, scientific notation
//! outside [1e-4, 1e9), like C's `%.9g`), which makes re-extraction
//! byte-identical.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::{CategoryLabel, Dataset, DatasetError, LabeledSample, SampleOrigin};
use crate::flowmeter::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};

/// Renders a real with up to `SIG` (9) significant digits.
pub fn format_real(x: f64) -> String {
    const SIG: usize = 9;
    if x == 0.0 {
        return "0".to_string();
    }
    if x < 0.0 {
        return format!("-{}", format_real(-x));
    }
    // {:.8e} rounds to 9 significant digits: "d.ddddddddeEXP".
    let sci = format!("{:.*e}", SIG - 1, x);
    let (mantissa, exp_str) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp_str.parse().expect("exponent");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), SIG);

    if exp < -4 || exp >= SIG as i32 {
        let trimmed = digits[1..].trim_end_matches('0');
        if trimmed.is_empty() {
            format!("{}e{}", &digits[..1], exp)
        } else {
            format!("{}.{}e{}", &digits[..1], trimmed, exp)
        }
    } else if exp >= 0 {
        let point = exp as usize + 1;
        let int_part = &digits[..point];
        let frac = digits[point..].trim_end_matches('0');
        if frac.is_empty() {
            int_part.to_string()
        } else {
            format!("{int_part}.{frac}")
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        let frac = digits.trim_end_matches('0');
        format!("0.{zeros}{frac}")
    }
}

fn csv_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Csv { path: path.display().to_string(), message: message.into() }
}

/// Writes feature vectors, optionally with one label per row.
pub fn write_features_csv(
    path: &Path,
    features: &[FeatureVector],
    labels: Option<&[CategoryLabel]>,
) -> Result<(), DatasetError> {
    if let Some(labels) = labels {
        assert_eq!(labels.len(), features.len(), "one label per row");
    }
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
        if labels.is_some() {
            header.push("label");
        }
        w.write_record(&header).map_err(|e| csv_err(path, e.to_string()))?;
        for (i, f) in features.iter().enumerate() {
            let mut row: Vec<String> = f.as_slice().iter().map(|v| format_real(*v)).collect();
            if let Some(labels) = labels {
                row.push(labels[i].name().to_string());
            }
            w.write_record(&row).map_err(|e| csv_err(path, e.to_string()))?;
        }
        w.flush().map_err(|e| csv_err(path, e.to_string()))?;
    }
    File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| csv_err(path, e.to_string()))
}

/// Writes a labeled dataset in the canonical 63-column schema.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    if ds.n_features != NUM_FEATURES {
        return Err(DatasetError::SchemaMismatch { got: ds.n_features, want: NUM_FEATURES });
    }
    let features: Vec<FeatureVector> = ds
        .samples
        .iter()
        .map(|s| {
            let mut arr = [0.0; NUM_FEATURES];
            arr.copy_from_slice(&s.features);
            FeatureVector(arr)
        })
        .collect();
    let labels: Vec<CategoryLabel> = ds.labels();
    write_features_csv(path, &features, Some(&labels))
}

/// Reads a labeled dataset; the header must be the canonical schema
/// followed by `label`.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| csv_err(path, e.to_string()))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());

    let header = reader.headers().map_err(|e| csv_err(path, e.to_string()))?.clone();
    let expected_len = NUM_FEATURES + 1;
    if header.len() != expected_len {
        return Err(csv_err(
            path,
            format!("expected {expected_len} columns, found {}", header.len()),
        ));
    }
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        if &header[i] != *name {
            return Err(csv_err(path, format!("column {i} is '{}', expected '{name}'", &header[i])));
        }
    }
    if &header[NUM_FEATURES] != "label" {
        return Err(csv_err(path, "last column must be 'label'"));
    }

    let capture = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut ds = Dataset::new(NUM_FEATURES);
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e.to_string()))?;
        if record.len() != expected_len {
            return Err(csv_err(path, format!("row {}: wrong field count", row_idx + 1)));
        }
        let mut features = Vec::with_capacity(NUM_FEATURES);
        for i in 0..NUM_FEATURES {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| csv_err(path, format!("row {}: bad number '{}'", row_idx + 1, &record[i])))?;
            features.push(v);
        }
        let label = CategoryLabel::parse(&record[NUM_FEATURES]).ok_or_else(|| {
            csv_err(path, format!("row {}: unknown label '{}'", row_idx + 1, &record[NUM_FEATURES]))
        })?;
        ds.samples.push(LabeledSample {
            features,
            label,
            origin: SampleOrigin { capture: capture.clone(), flow_index: row_idx },
        });
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_formatting_pins_the_grammar() {
        assert_eq!(format_real(0.0), "0");
        assert_eq!(format_real(2.0), "2");
        assert_eq!(format_real(100.0), "100");
        assert_eq!(format_real(0.1), "0.1");
        assert_eq!(format_real(1.0 / 3.0), "0.333333333");
        assert_eq!(format_real(-2.5), "-2.5");
        assert_eq!(format_real(123456789012.0), "1.23456789e11");
        assert_eq!(format_real(1e-7), "1e-7");
        assert_eq!(format_real(0.000123456789), "0.000123456789");
        assert_eq!(format_real(65535.0), "65535");
    }

    #[test]
    fn formatting_is_reparse_stable() {
        // Parsing a formatted value and formatting again is a fixpoint,
        // which keeps rewritten CSVs byte-identical.
        let mut rng = crate::rng::SplitMix64::new(0xF00D);
        for _ in 0..2000 {
            let x = (rng.next_f64() - 0.5) * 10f64.powi(rng.next_below(12) as i32 - 6);
            let s = format_real(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(format_real(y), s, "x={x}");
        }
    }

    #[test]
    fn dataset_round_trips_through_csv() {
        use crate::dataset::{label_flows, CategoryLabel};
        let vecs: Vec<FeatureVector> = (0..4)
            .map(|i| {
                let mut f = [0.25; NUM_FEATURES];
                f[0] = i as f64 + 0.125;
                FeatureVector(f)
            })
            .collect();
        let ds = label_flows(&vecs, CategoryLabel::StreamingDevices, "t.pcap");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset_csv(&path, &ds).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.samples[1].features[0], 1.125);
        assert_eq!(back.samples[1].label, CategoryLabel::StreamingDevices);
    }

    #[test]
    fn header_only_for_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_features_csv(&path, &[], None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("flow_duration,"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(DatasetError::Csv { .. })));
    }
}
