//! Dense row-major matrices and their binary file layout.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EQMX"
//! 4       1     version (0x01)
//! 5       1     dtype (0x01 = f64, 0x02 = i64)
//! 6       2     zero padding
//! 8       8     rows (u64)
//! 16      8     cols (u64)
//! 24      8*n   payload, row-major, n = rows * cols
//! ```

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EQMX";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    I64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 0x01,
            DType::I64 => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(DType::F64),
            0x02 => Some(DType::I64),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F64 => f.write_str("f64"),
            DType::I64 => f.write_str("i64"),
        }
    }
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for f64 {}
    impl Sealed for i64 {}
}

/// Scalar types a [`Matrix`] can hold on disk.
pub trait Element: Copy + PartialEq + fmt::Debug + Default + sealed::Sealed {
    const DTYPE: DType;
    fn to_le_bytes8(self) -> [u8; 8];
    fn from_le_bytes8(bytes: [u8; 8]) -> Self;
    fn is_finite_value(self) -> bool;
    /// Bitwise equality; distinguishes -0.0 from 0.0.
    fn bit_eq(self, other: Self) -> bool;
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    fn to_le_bytes8(self) -> [u8; 8] {
        self.to_le_bytes()
    }
    fn from_le_bytes8(bytes: [u8; 8]) -> Self {
        f64::from_le_bytes(bytes)
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
    fn bit_eq(self, other: Self) -> bool {
        self.to_bits() == other.to_bits()
    }
}

impl Element for i64 {
    const DTYPE: DType = DType::I64;
    fn to_le_bytes8(self) -> [u8; 8] {
        self.to_le_bytes()
    }
    fn from_le_bytes8(bytes: [u8; 8]) -> Self {
        i64::from_le_bytes(bytes)
    }
    fn is_finite_value(self) -> bool {
        true
    }
    fn bit_eq(self, other: Self) -> bool {
        self == other
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        let expected = rows.checked_mul(cols).ok_or_else(|| {
            Error::validation("matrix", format!("{rows}x{cols} overflows usize"))
        })?;
        if data.len() != expected {
            return Err(Error::validation(
                "matrix",
                format!(
                    "data length {} does not match {rows}x{cols}",
                    data.len()
                ),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows. `cols` is needed so that an
    /// empty row list still has a well-defined shape.
    pub fn from_rows<R: AsRef<[T]>>(cols: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::validation(
                    "matrix",
                    format!("row {i} has {} entries, expected {cols}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn column(values: Vec<T>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows explicitly.
        let cols = self.cols;
        (0..self.rows).map(move |r| {
            if cols == 0 {
                &[][..]
            } else {
                &self.data[r * cols..(r + 1) * cols]
            }
        })
    }

    /// Bit-identical comparison (shape and every scalar's bit pattern).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bit_eq(*b))
    }

    /// First non-finite entry as (row, col), if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite_value())
            .map(|i| (i / self.cols, i % self.cols))
    }

    pub fn byte_len(&self) -> u64 {
        (HEADER_LEN + 8 * self.data.len()) as u64
    }
}

/// Either dtype, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyMatrix {
    F64(Matrix<f64>),
    I64(Matrix<i64>),
}

impl AnyMatrix {
    pub fn dtype(&self) -> DType {
        match self {
            AnyMatrix::F64(_) => DType::F64,
            AnyMatrix::I64(_) => DType::I64,
        }
    }
}

struct OffsetWriter<W> {
    inner: W,
    offset: u64,
}

impl<W: Write> OffsetWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::IoAt {
            offset: self.offset,
            source,
        })?;
        self.offset += bytes.len() as u64;
        Ok(())
    }
}

pub fn encode_header(dtype: DType, rows: u64, cols: u64) -> [u8; HEADER_LEN] {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&MAGIC);
    header[4] = VERSION;
    header[5] = dtype.code();
    header[8..16].copy_from_slice(&rows.to_le_bytes());
    header[16..24].copy_from_slice(&cols.to_le_bytes());
    header
}

/// Writes `m` and returns the number of bytes emitted.
pub fn write_matrix<T: Element, W: Write>(m: &Matrix<T>, sink: W) -> Result<u64> {
    const CHUNK: usize = 1024;
    let mut out = OffsetWriter {
        inner: sink,
        offset: 0,
    };
    out.put(&encode_header(T::DTYPE, m.rows as u64, m.cols as u64))?;
    let mut buf = Vec::with_capacity(CHUNK * 8);
    for chunk in m.data.chunks(CHUNK) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes8());
        }
        out.put(&buf)?;
    }
    out.inner.flush().map_err(|source| Error::IoAt {
        offset: out.offset,
        source,
    })?;
    Ok(out.offset)
}

pub fn encode_matrix<T: Element>(m: &Matrix<T>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(m.byte_len() as usize);
    write_matrix(m, &mut bytes).expect("writing to a Vec cannot fail");
    bytes
}

fn read_header<R: Read>(source: &mut R) -> Result<(DType, u64, u64)> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_up_to(source, &mut header)?;
    if got < 4 || header[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&header[..got.min(4)]),
            "EQMX"
        )));
    }
    if got < HEADER_LEN {
        return Err(Error::Truncation {
            expected: HEADER_LEN as u64,
            actual: got as u64,
        });
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let dtype = DType::from_code(header[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype byte {:#04x}", header[5])))?;
    if header[6] != 0 || header[7] != 0 {
        return Err(Error::Format("non-zero header padding".into()));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(header[16..24].try_into().unwrap());
    Ok((dtype, rows, cols))
}

fn read_up_to<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(Error::IoAt {
                    offset: filled as u64,
                    source,
                })
            }
        }
    }
    Ok(filled)
}

fn read_payload<T: Element, R: Read>(source: &mut R, rows: u64, cols: u64) -> Result<Matrix<T>> {
    let count = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::Format(format!("shape {rows}x{cols} overflows")))?;
    let expected = count * 8;
    let mut payload = Vec::new();
    source
        .take(expected)
        .read_to_end(&mut payload)
        .map_err(|source| Error::IoAt {
            offset: HEADER_LEN as u64 + payload.len() as u64,
            source,
        })?;
    if (payload.len() as u64) < expected {
        return Err(Error::Truncation {
            expected,
            actual: payload.len() as u64,
        });
    }
    let data: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::from_le_bytes8(c.try_into().unwrap()))
        .collect();
    let rows = usize::try_from(rows).map_err(|_| Error::Format("rows exceed usize".into()))?;
    let cols = usize::try_from(cols).map_err(|_| Error::Format("cols exceed usize".into()))?;
    let m = Matrix { rows, cols, data };
    if let Some((r, c)) = m.first_non_finite() {
        return Err(Error::validation(
            "matrix",
            format!("non-finite value at row {r}, col {c}"),
        ));
    }
    Ok(m)
}

/// Reads a matrix of either dtype.
pub fn read_any_matrix<R: Read>(mut source: R) -> Result<AnyMatrix> {
    let (dtype, rows, cols) = read_header(&mut source)?;
    Ok(match dtype {
        DType::F64 => AnyMatrix::F64(read_payload(&mut source, rows, cols)?),
        DType::I64 => AnyMatrix::I64(read_payload(&mut source, rows, cols)?),
    })
}

/// Reads a matrix whose on-disk dtype must be `T`.
pub fn read_matrix<T: Element, R: Read>(mut source: R) -> Result<Matrix<T>> {
    let (dtype, rows, cols) = read_header(&mut source)?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "dtype mismatch: file holds {dtype}, expected {}",
            T::DTYPE
        )));
    }
    read_payload(&mut source, rows, cols)
}
