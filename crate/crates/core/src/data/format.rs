//! FMAT feature files and LBLS label files.
//!
//! Both formats are little-endian with a fixed header:
//!
//! ```text
//! FMAT: "FMAT" | version u32 | rows u64 | cols u64 | dtype u32 | rows*cols scalars, row-major
//! LBLS: "LBLS" | version u32 | count u64 | classes u64 | count x u32 class index
//! ```
//!
//! dtype 1 is `f32`, 2 is `f64`. Values are widened to `f64` on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"FMAT";
pub const LABEL_MAGIC: [u8; 4] = *b"LBLS";
pub const FORMAT_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 28;
pub const LABEL_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureHeader {
    pub version: u32,
    pub rows: u64,
    pub cols: u64,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabelHeader {
    pub version: u32,
    pub count: u64,
    pub classes: u64,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, format!("truncated {what}"))
        } else {
            Error::io(path, e)
        }
    })
}

fn check_magic(found: [u8; 4], want: [u8; 4], path: &Path) -> Result<()> {
    if found == want {
        return Ok(());
    }
    Err(Error::format(
        path,
        format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(&want)
        ),
    ))
}

fn check_version(version: u32, path: &Path) -> Result<()> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ))
    }
}

fn ensure_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn parse_feature_header(buf: &[u8; FEATURE_HEADER_LEN], path: &Path) -> Result<FeatureHeader> {
    check_magic(buf[0..4].try_into().unwrap(), FEATURE_MAGIC, path)?;
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    check_version(version, path)?;
    let rows = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(buf[16..24].try_into().unwrap());
    let code = u32::from_le_bytes(buf[24..28].try_into().unwrap());
    let dtype = Dtype::from_code(code)
        .ok_or_else(|| Error::format(path, format!("unknown dtype code {code}")))?;
    Ok(FeatureHeader {
        version,
        rows,
        cols,
        dtype,
    })
}

pub fn read_feature_header(path: impl AsRef<Path>) -> Result<FeatureHeader> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut buf = [0u8; FEATURE_HEADER_LEN];
    read_exact_or(&mut r, &mut buf, path, "header")?;
    parse_feature_header(&buf, path)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut head = [0u8; FEATURE_HEADER_LEN];
    read_exact_or(&mut r, &mut head, path, "header")?;
    let header = parse_feature_header(&head, path)?;

    let rows = usize::try_from(header.rows)
        .map_err(|_| Error::format(path, "row count overflows usize"))?;
    let cols = usize::try_from(header.cols)
        .map_err(|_| Error::format(path, "column count overflows usize"))?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "rows*cols overflows"))?;
    let bytes = count
        .checked_mul(header.dtype.size())
        .ok_or_else(|| Error::format(path, "payload size overflows"))?;
    let mut payload = vec![0u8; bytes];
    read_exact_or(&mut r, &mut payload, path, "payload")?;
    ensure_eof(&mut r, path)?;

    let values: Vec<f64> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    drop(payload);
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!(
                "non-finite value at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            ),
        ));
    }
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

pub fn save_features(m: &Matrix, dtype: Dtype, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(&FEATURE_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&dtype.code().to_le_bytes()).map_err(io)?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            match dtype {
                Dtype::F32 => w.write_all(&(v as f32).to_le_bytes()),
                Dtype::F64 => w.write_all(&v.to_le_bytes()),
            }
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn parse_label_header(buf: &[u8; LABEL_HEADER_LEN], path: &Path) -> Result<LabelHeader> {
    check_magic(buf[0..4].try_into().unwrap(), LABEL_MAGIC, path)?;
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    check_version(version, path)?;
    Ok(LabelHeader {
        version,
        count: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
        classes: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
    })
}

pub fn read_label_header(path: impl AsRef<Path>) -> Result<LabelHeader> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut buf = [0u8; LABEL_HEADER_LEN];
    read_exact_or(&mut r, &mut buf, path, "header")?;
    parse_label_header(&buf, path)
}

/// Returns the class indices and the declared class count.
pub fn load_labels(path: impl AsRef<Path>) -> Result<(Vec<usize>, usize)> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut head = [0u8; LABEL_HEADER_LEN];
    read_exact_or(&mut r, &mut head, path, "header")?;
    let header = parse_label_header(&head, path)?;
    let count = usize::try_from(header.count)
        .map_err(|_| Error::format(path, "label count overflows usize"))?;
    let classes = usize::try_from(header.classes)
        .map_err(|_| Error::format(path, "class count overflows usize"))?;
    let mut payload = vec![
        0u8;
        count
            .checked_mul(4)
            .ok_or_else(|| Error::format(path, "payload size overflows"))?
    ];
    read_exact_or(&mut r, &mut payload, path, "payload")?;
    ensure_eof(&mut r, path)?;

    let labels = payload
        .chunks_exact(4)
        .enumerate()
        .map(|(i, b)| {
            let label = u32::from_le_bytes(b.try_into().unwrap()) as usize;
            if label < classes {
                Ok(label)
            } else {
                Err(Error::format(
                    path,
                    format!("label {label} at index {i} is not below class count {classes}"),
                ))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, classes))
}

pub fn save_labels(labels: &[usize], classes: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::param(
            "labels",
            format!("label {bad} is not below class count {classes}"),
        ));
    }
    if classes > u32::MAX as usize + 1 {
        return Err(Error::param("classes", "class indices must fit in u32"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&LABEL_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(labels.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(classes as u64).to_le_bytes()).map_err(io)?;
    for &l in labels {
        w.write_all(&(l as u32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Which of the two formats a file claims to be, judged by its magic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Features,
    Labels,
}

pub fn sniff(path: impl AsRef<Path>) -> Result<FileKind> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, path, "magic")?;
    match magic {
        FEATURE_MAGIC => Ok(FileKind::Features),
        LABEL_MAGIC => Ok(FileKind::Labels),
        other => Err(Error::format(
            path,
            format!("bad magic {:?}", String::from_utf8_lossy(&other)),
        )),
    }
}
