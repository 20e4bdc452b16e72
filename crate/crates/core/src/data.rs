//! Labeled feature vectors: the CSV file format and a synthetic generator.
//!
//! ```text
//! label,d=2,C=2
//! 1,0.5,-0.25
//! 0,1.0,3.5
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{QtlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub feature_dim: usize,
    pub class_count: usize,
    pub labels: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub provenance: String,
}

impl FeatureDataset {
    pub fn new(feature_dim: usize, class_count: usize, provenance: impl Into<String>) -> Self {
        Self {
            feature_dim,
            class_count,
            labels: Vec::new(),
            features: Vec::new(),
            provenance: provenance.into(),
        }
    }

    pub fn push(&mut self, label: usize, features: Vec<f64>) -> Result<()> {
        if label >= self.class_count {
            return Err(QtlError::Config(format!(
                "label {label} out of range for {} classes",
                self.class_count
            )));
        }
        if features.len() != self.feature_dim {
            return Err(QtlError::Dimension(format!(
                "sample has {} features, dataset expects {}",
                features.len(),
                self.feature_dim
            )));
        }
        self.labels.push(label);
        self.features.push(features);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples as `(features, label)` borrows.
    pub fn samples(&self) -> Vec<(&[f64], usize)> {
        self.features
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            feature_dim: self.feature_dim,
            class_count: self.class_count,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Serializes to the CSV text format. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = format!("label,d={},C={}\n", self.feature_dim, self.class_count);
        for (label, row) in self.labels.iter().zip(&self.features) {
            let _ = write!(out, "{label}");
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> QtlError {
    QtlError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn header_field(path: &str, field: Option<&str>, key: &str) -> Result<usize> {
    let field = field.ok_or_else(|| parse_err(path, 1, format!("header is missing '{key}=<n>'")))?;
    let value = field
        .trim()
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| parse_err(path, 1, format!("expected '{key}=<n>', found '{field}'")))?;
    value.parse().map_err(|_| {
        parse_err(
            path,
            1,
            format!("'{key}' value '{value}' is not a non-negative integer"),
        )
    })
}

/// Parses CSV text; `origin` names the source in error messages.
pub fn parse_features(text: &str, origin: &str) -> Result<FeatureDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(origin, 1, "empty file, expected header 'label,d=<dim>,C=<classes>'"))?;
    let mut fields = header.trim_end_matches('\r').split(',');
    if fields.next().map(str::trim) != Some("label") {
        return Err(parse_err(origin, 1, "header must start with 'label'"));
    }
    let d = header_field(origin, fields.next(), "d")?;
    let c = header_field(origin, fields.next(), "C")?;
    if fields.next().is_some() {
        return Err(parse_err(origin, 1, "unexpected extra header fields"));
    }
    if d == 0 {
        return Err(parse_err(origin, 1, "feature dimension must be positive"));
    }
    if c < 2 {
        return Err(parse_err(origin, 1, "class count must be at least 2"));
    }
    let mut ds = FeatureDataset::new(d, c, origin);
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let label_text = cells.next().unwrap_or_default().trim();
        let label: usize = label_text
            .parse()
            .map_err(|_| parse_err(origin, line_no, format!("invalid label '{label_text}'")))?;
        if label >= c {
            return Err(parse_err(origin, line_no, format!("label {label} >= class count {c}")));
        }
        let mut row = Vec::with_capacity(d);
        for cell in cells {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(origin, line_no, format!("invalid number '{}'", cell.trim())))?;
            if !v.is_finite() {
                return Err(parse_err(
                    origin,
                    line_no,
                    format!("non-finite value '{}'", cell.trim()),
                ));
            }
            row.push(v);
        }
        if row.len() != d {
            return Err(parse_err(
                origin,
                line_no,
                format!("expected {d} features, found {}", row.len()),
            ));
        }
        ds.labels.push(label);
        ds.features.push(row);
    }
    Ok(ds)
}

pub fn parse_feature_file(path: &Path) -> Result<FeatureDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_features(&text, &path.display().to_string())
}

/// Two unit-variance Gaussian clusters centred at `-(sep/2) u` (label 0)
/// and `+(sep/2) u` (label 1), `u` a seeded random unit vector. Samples
/// alternate between classes.
pub fn generate_synthetic(d: usize, n_per_class: usize, separation: f64, seed: u64) -> Result<FeatureDataset> {
    if d == 0 {
        return Err(QtlError::Config("feature dimension must be positive".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(QtlError::Config(format!("separation {separation} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);
    let mut ds = FeatureDataset::new(
        d,
        2,
        format!("synthetic d={d} n={n_per_class} sep={separation} seed={seed}"),
    );
    for _ in 0..n_per_class {
        for label in 0..2 {
            let sign = if label == 0 { -1.0 } else { 1.0 };
            let row = u
                .iter()
                .map(|ui| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    sign * 0.5 * separation * ui + noise
                })
                .collect();
            ds.labels.push(label);
            ds.features.push(row);
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let ds = parse_features("label,d=2,C=2\n1,0.5,-0.25\n", "t").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![1]);
        assert_eq!(ds.features[0], vec![0.5, -0.25]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("label,d=2,C=2\n1,0.5\n", 2),
            ("label,d=2,C=2\n0,1,2\n1,0.5,1,3\n", 3),
            ("label,d=2,C=2\n2,0.5,1\n", 2),
            ("label,d=2,C=2\n0,0.5,abc\n", 2),
            ("label,d=2\n0,0.5,1\n", 1),
            ("idx,d=2,C=2\n", 1),
            ("label,d=x,C=2\n", 1),
            ("", 1),
        ];
        for (text, expect) in cases {
            match parse_features(text, "t") {
                Err(QtlError::Parse { line, .. }) => assert_eq!(line, expect, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn crlf_and_blank_lines() {
        let ds = parse_features("label,d=1,C=2\r\n0,1.5\r\n\r\n1,-2\r\n", "t").unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
    }

    #[test]
    fn write_read_round_trip() {
        let ds = generate_synthetic(5, 7, 3.0, 11).unwrap();
        let back = parse_features(&ds.to_csv(), "t").unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.features, ds.features);
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = generate_synthetic(16, 50, 6.0, 42).unwrap();
        let b = generate_synthetic(16, 50, 6.0, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![50, 50]);
        let c = generate_synthetic(16, 50, 6.0, 43).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn synthetic_cluster_means() {
        // class means differ by sep * u, so their distance is close to sep
        let ds = generate_synthetic(4, 4000, 6.0, 1).unwrap();
        let mut means = [[0.0; 4]; 2];
        for (l, f) in ds.labels.iter().zip(&ds.features) {
            for j in 0..4 {
                means[*l][j] += f[j] / 4000.0;
            }
        }
        let dist: f64 = (0..4).map(|j| (means[1][j] - means[0][j]).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 6.0).abs() < 0.15, "{dist}");
    }

    #[test]
    fn synthetic_rejects_bad_input() {
        assert!(generate_synthetic(0, 5, 1.0, 0).is_err());
        assert!(generate_synthetic(3, 5, -1.0, 0).is_err());
    }
}
