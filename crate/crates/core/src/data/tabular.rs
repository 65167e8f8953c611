//! CSV ingestion: one sample per line, one column holding the label.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// How to find the label column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    /// Header name; requires a header line.
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Numbers are indices, `last` is the last column, anything else a name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) if s == "last" => LabelColumn::Last,
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Loads a CSV into a [`Dataset`]. A first line whose feature cells are not
/// all numeric is taken as the header. Labels that are all non-negative
/// integers are used as class indices directly; otherwise the distinct
/// label strings are sorted and numbered, and kept as class names.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec);
    }
    let first = rows
        .first()
        .ok_or_else(|| Error::format(path, "file contains no rows"))?;
    let width = first.len();
    if width < 2 {
        return Err(Error::format(
            path,
            "need at least one feature column and a label column",
        ));
    }

    let numeric_except = |rec: &csv::StringRecord, skip: usize| {
        rec.iter()
            .enumerate()
            .all(|(i, cell)| i == skip || cell.parse::<f64>().is_ok())
    };

    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::format(
                path,
                format!("label column {i} out of range for {width} columns"),
            ))
        }
        LabelColumn::Last => width - 1,
        LabelColumn::Name(name) => first
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("no column named {name:?}")))?,
    };
    let has_header =
        matches!(label_column, LabelColumn::Name(_)) || !numeric_except(first, label_idx);
    let data = if has_header { &rows[1..] } else { &rows[..] };
    if data.is_empty() {
        return Err(Error::Empty("CSV has a header but no samples"));
    }

    let n = data.len();
    let d = width - 1;
    let mut features = Matrix::zeros(d, n);
    let mut raw_labels = Vec::with_capacity(n);
    let line_offset = 1 + usize::from(has_header);
    for (j, rec) in data.iter().enumerate() {
        let line = j + line_offset;
        if rec.len() != width {
            return Err(Error::format(
                path,
                format!("line {line} has {} fields, expected {width}", rec.len()),
            ));
        }
        let mut r = 0;
        for (i, cell) in rec.iter().enumerate() {
            if i == label_idx {
                if cell.is_empty() {
                    return Err(Error::format(
                        path,
                        format!("line {line} has an empty label"),
                    ));
                }
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("line {line}, column {}: {cell:?} is not a number", i + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("line {line}, column {}: non-finite value", i + 1),
                ));
            }
            features[(r, j)] = v;
            r += 1;
        }
    }

    let (labels, num_classes, class_names) = encode_labels(&raw_labels, path)?;
    let mut ds = Dataset::new(features, labels, num_classes)?;
    ds.class_names = class_names;
    Ok(ds)
}

fn encode_labels(raw: &[String], path: &Path) -> Result<(Vec<usize>, usize, Option<Vec<String>>)> {
    let numeric: Option<Vec<usize>> = raw
        .iter()
        .map(|s| s.parse::<u32>().ok().map(|v| v as usize))
        .collect();
    if let Some(labels) = numeric {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        return Ok((labels, classes, None));
    }
    if raw
        .iter()
        .any(|s| s.parse::<f64>().is_ok() && s.parse::<u32>().is_err())
    {
        let bad = raw
            .iter()
            .find(|s| s.parse::<f64>().is_ok() && s.parse::<u32>().is_err())
            .unwrap();
        return Err(Error::format(
            path,
            format!("label {bad:?} is neither a class index nor a class name"),
        ));
    }
    let names: Vec<String> = raw
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = raw
        .iter()
        .map(|s| names.binary_search(s).expect("name collected above"))
        .collect();
    let classes = names.len();
    Ok((labels, classes, Some(names)))
}

/// Writes `f0..f{d-1},label` with a header line. Values are printed with
/// their shortest round-trip representation.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in 0..ds.dim() {
        out.push_str(&format!("f{i},"));
    }
    out.push_str("label\n");
    for j in 0..ds.len() {
        for v in ds.features.column(j).iter() {
            out.push_str(&format!("{v},"));
        }
        match &ds.class_names {
            Some(names) => out.push_str(&names[ds.labels[j]]),
            None => out.push_str(&ds.labels[j].to_string()),
        }
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn hand_fixture_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "1.0,2.0,0\n3.5,-4,1\n0,0.25,1\n");
        let ds = load_csv(&p, &LabelColumn::Last).unwrap();
        assert_eq!(
            ds.features,
            Matrix::from_row_slice(2, 3, &[1.0, 3.5, 0.0, 2.0, -4.0, 0.25])
        );
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn header_and_named_string_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "kind,x,y\ncat,1,2\ndog,3,4\ncat,5,6\n");
        let ds = load_csv(&p, &LabelColumn::Name("kind".into())).unwrap();
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(
            ds.class_names.as_deref(),
            Some(&["cat".to_string(), "dog".to_string()][..])
        );
        assert_eq!(
            ds.features,
            Matrix::from_row_slice(2, 3, &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0])
        );
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b,label\n");
        assert!(matches!(
            load_csv(&p, &LabelColumn::Last),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn ragged_and_non_numeric() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "1,2,0\n1,0\n");
        assert!(load_csv(&p, &LabelColumn::Last).is_err());
        let p = write(&dir, "1,2,0\n1,x,1\n");
        let err = load_csv(&p, &LabelColumn::Last).unwrap_err().to_string();
        assert!(err.contains("not a number"), "{err}");
    }

    #[test]
    fn unknown_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "1,2,0\n1,3,\n");
        assert!(load_csv(&p, &LabelColumn::Last).is_err());
        let p = write(&dir, "1,2,0\n1,3,1.5\n");
        assert!(load_csv(&p, &LabelColumn::Last).is_err());
        let p = write(&dir, "1,2,0\n");
        assert!(load_csv(&p, &LabelColumn::Name("nope".into())).is_err());
    }

    #[test]
    fn label_column_parsing() {
        assert_eq!("2".parse::<LabelColumn>().unwrap(), LabelColumn::Index(2));
        assert_eq!("last".parse::<LabelColumn>().unwrap(), LabelColumn::Last);
        assert_eq!(
            "y".parse::<LabelColumn>().unwrap(),
            LabelColumn::Name("y".into())
        );
    }
}
