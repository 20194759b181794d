use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::PointCloud;

/// Reads whitespace-separated `x y z f1..fn [label]` lines.
///
/// Blank lines are skipped; every other line must carry exactly
/// `3 + n (+1)` tokens.
pub fn read_xyz(path: impl AsRef<Path>, feature_dim: usize, has_label: bool) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, feature_dim, has_label)
}

pub fn parse_xyz(text: &str, feature_dim: usize, has_label: bool) -> Result<PointCloud> {
    let expected = 3 + feature_dim + usize::from(has_label);
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut labels = has_label.then(Vec::new);

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != expected {
            return Err(Error::TokenCount {
                line: lineno,
                expected,
                found: tokens.len(),
            });
        }
        let parse = |t: &str| -> Result<f64> {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("{t:?}: {e}"),
            })
        };
        coords.push([parse(tokens[0])?, parse(tokens[1])?, parse(tokens[2])?]);
        let row = tokens[3..3 + feature_dim]
            .iter()
            .map(|t| parse(t))
            .collect::<Result<Vec<_>>>()?;
        features.push(row);
        if let Some(labels) = labels.as_mut() {
            let t = tokens[expected - 1];
            let label = t.parse::<u32>().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("label {t:?}: {e}"),
            })?;
            labels.push(label);
        }
    }
    PointCloud::new(coords, features, labels)
}

/// Writes one line per point using shortest round-trip float formatting.
pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 16 * (4 + cloud.feature_dim()));
    for i in 0..cloud.len() {
        let c = cloud.coords()[i];
        let _ = write!(out, "{} {} {}", c[0], c[1], c[2]);
        for v in cloud.feature(i) {
            let _ = write!(out, " {v}");
        }
        if let Some(labels) = cloud.labels() {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    out
}

/// Writes coordinates only (`x y z` per line), for plotting point subsets.
pub fn write_coords(path: impl AsRef<Path>, coords: &[[f64; 3]]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for c in coords {
        let _ = writeln!(out, "{} {} {}", c[0], c[1], c[2]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_file() {
        let cloud = parse_xyz("0 0 0 1.5\n1 0 0 2.5", 1, false).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.feature(0).to_vec(), vec![1.5]);
        assert_eq!(cloud.feature(1).to_vec(), vec![2.5]);
        assert_eq!(cloud.coords()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn short_line_is_token_mismatch() {
        let err = parse_xyz("0 0", 0, false).unwrap_err();
        assert!(
            matches!(err, Error::TokenCount { line: 1, expected: 3, found: 2 }),
            "{err}"
        );
    }

    #[test]
    fn bad_token_reports_line() {
        let err = parse_xyz("0 0 0 1\n0 0 x 1\n", 1, false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn labels_parsed() {
        let cloud = parse_xyz("0 0 0 0.1 2\n1 1 1 0.2 0\n", 1, true).unwrap();
        assert_eq!(cloud.labels(), Some(&[2u32, 0][..]));
        assert!(parse_xyz("0 0 0 0.1 -2\n", 1, true).is_err());
    }
}
