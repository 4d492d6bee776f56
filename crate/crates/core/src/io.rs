//! Tensor interchange files.
//!
//! CCAT layout, all little-endian:
//!
//! ```text
//! b"CCAT" | u32 version = 1 | u32 ndim | u64 dims[ndim] | f64 values (row-major)
//! ```
//!
//! Two-dimensional tensors can also be read from and written to headered CSV.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{matrix_from_rows, to_row_major, Matrix, MatrixStack};

pub const MAGIC: &[u8; 4] = b"CCAT";
pub const VERSION: u32 = 1;

/// A dense row-major tensor of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(data.len()) {
            return Err(Error::dim(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.nrows(), m.ncols()],
            data: to_row_major(m),
        }
    }

    pub fn from_stack(s: &MatrixStack) -> Self {
        let (r, c) = s.shape();
        let data = s.items().iter().flat_map(to_row_major).collect();
        Self {
            dims: vec![s.len(), r, c],
            data,
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => matrix_from_rows(r, c, &self.data),
            _ => Err(Error::dim(format!(
                "expected a 2-D tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// A 3-D tensor as a stack; a 2-D tensor as a stack of single-column samples.
    pub fn into_stack(self) -> Result<MatrixStack> {
        match self.dims[..] {
            [n, r, c] => MatrixStack::from_row_major(n, r, c, &self.data),
            [n, d] => MatrixStack::from_row_major(n, d, 1, &self.data),
            _ => Err(Error::dim(format!(
                "expected a 3-D tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.dims.len() + self.data.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(format_err(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let ndim = read_u32(&mut r, "ndim")? as usize;
        if ndim == 0 {
            return Err(format_err("tensor has no dimensions".into()));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = read_u64(&mut r, "dims")?;
            dims.push(
                usize::try_from(d).map_err(|_| format_err(format!("dimension {d} too large")))?,
            );
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err("dimension product overflows".into()))?;
        if r.len() != count * 8 {
            return Err(format_err(format!(
                "expected {} payload bytes for dims {dims:?}, found {}",
                count * 8,
                r.len()
            )));
        }
        let data = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { dims, data })
    }
}

fn format_err(msg: String) -> Error {
    Error::Parse {
        path: "<ccat>".into(),
        message: msg,
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| format_err(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8], what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    }
}

pub fn write_ccat(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&t.to_bytes())?;
    Ok(())
}

pub fn read_ccat(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    Tensor::from_bytes(&bytes).map_err(|e| with_path(e, path))
}

/// Reads a headered CSV of numbers. Every row must have as many fields as the header.
pub fn read_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text).map_err(|e| with_path(e, path))
}

pub fn parse_csv(text: &str) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let width = rdr
        .headers()
        .map_err(|e| format_err(format!("header: {e}")))?
        .len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        // Row 1 is the header.
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(format!("row {line}: {e}")))?;
        if rec.len() != width {
            return Err(format_err(format!(
                "row {line} has {} fields, header has {width}",
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                format_err(format!(
                    "row {line}, column {}: {field:?} is not a number",
                    j + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(format_err("no data rows".into()));
    }
    matrix_from_rows(rows, width, &data)
}

/// Header `c0,c1,...`; values printed with round-trip precision.
pub fn format_csv(m: &Matrix) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, format_csv(m))?;
    Ok(())
}

/// Reads a tensor from `.csv` (2-D) or CCAT (anything else).
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    if is_csv(path) {
        Ok(Tensor::from_matrix(&read_csv(path)?))
    } else {
        read_ccat(path)
    }
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    read_tensor(path)?
        .into_matrix()
        .map_err(|e| with_path(e, path))
}

pub fn read_stack(path: &Path) -> Result<MatrixStack> {
    read_tensor(path)?.into_stack()
}

pub fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Converts between CSV and CCAT based on the file extensions.
pub fn convert(input: &Path, output: &Path) -> Result<()> {
    let t = read_tensor(input)?;
    if is_csv(output) {
        if t.dims.len() != 2 {
            return Err(Error::dim(format!(
                "CSV output holds 2-D tensors only; input has dims {:?}",
                t.dims
            )));
        }
        write_csv(output, &t.into_matrix()?)
    } else {
        write_ccat(output, &t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_size() {
        let t = Tensor::from_matrix(&Matrix::from_element(1, 1, 2.5));
        let b = t.to_bytes();
        assert_eq!(b.len(), 4 + 4 + 4 + 2 * 8 + 8);
        assert_eq!(&b[..4], b"CCAT");
        assert_eq!(Tensor::from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn rejects_corrupt_headers() {
        let mut b = Tensor::from_matrix(&Matrix::zeros(2, 2)).to_bytes();
        assert!(Tensor::from_bytes(&b[..b.len() - 1]).is_err());
        b[4] = 2;
        assert!(Tensor::from_bytes(&b).is_err());
        assert!(Tensor::from_bytes(b"CCAX").is_err());
    }

    #[test]
    fn ragged_csv_names_row() {
        let err = parse_csv("a,b\n1,2\n3\n").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn csv_rejects_text() {
        assert!(parse_csv("a\nfoo\n").is_err());
        assert!(parse_csv("a,b\n").is_err());
    }

    #[test]
    fn stack_to_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.ccat");
        let s = MatrixStack::new(vec![Matrix::zeros(2, 2), Matrix::identity(2, 2)]).unwrap();
        write_ccat(&src, &Tensor::from_stack(&s)).unwrap();
        let err = convert(&src, &dir.path().join("s.csv")).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert_eq!(read_stack(&src).unwrap(), s);
    }

    proptest! {
        #[test]
        fn csv_ccat_roundtrip_is_lossless(
            rows in 1usize..6,
            cols in 1usize..5,
            seed in proptest::collection::vec(-1e12f64..1e12, 30),
        ) {
            let m = Matrix::from_fn(rows, cols, |i, j| seed[(i * cols + j) % 30] / 3.0);
            let dir = tempfile::tempdir().unwrap();
            let csv_path = dir.path().join("m.csv");
            let bin = dir.path().join("m.ccat");
            let back_csv = dir.path().join("back.csv");
            write_csv(&csv_path, &m).unwrap();
            convert(&csv_path, &bin).unwrap();
            convert(&bin, &back_csv).unwrap();
            let a = read_matrix(&bin).unwrap();
            let b = read_matrix(&back_csv).unwrap();
            prop_assert_eq!(&a, &m);
            prop_assert_eq!(&b, &m);
        }
    }
}
