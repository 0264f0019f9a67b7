//! Matrix file format.
//!
//! A 16-byte little-endian header followed by row-major elements:
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 4    | magic `CSDM`                        |
//! | 4      | 4    | element kind: 0 = u32, 1 = GF(2^8)  |
//! | 8      | 4    | rows                                |
//! | 12     | 4    | cols                                |
//!
//! u32 elements are 4 bytes little-endian; GF(2^8) elements one byte each.

use std::io::{Read, Write};

use super::matrix::{MatrixGf, MatrixU32};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSDM";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatrixFile {
    U32(MatrixU32),
    Gf8(MatrixGf),
}

pub fn write_matrix<W: Write>(m: &MatrixFile, mut out: W) -> Result<()> {
    let (kind, rows, cols, body) = match m {
        MatrixFile::U32(m) => (0u32, m.dim(), m.dim(), m.to_le_bytes()),
        MatrixFile::Gf8(m) => (1u32, m.rows(), m.cols(), m.as_slice().to_vec()),
    };
    out.write_all(MAGIC)?;
    out.write_all(&kind.to_le_bytes())?;
    out.write_all(&(rows as u32).to_le_bytes())?;
    out.write_all(&(cols as u32).to_le_bytes())?;
    out.write_all(&body)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut input: R) -> Result<MatrixFile> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::BadMatrixFile("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::BadMatrixFile("bad magic".into()));
    }
    let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (kind, rows, cols) = (word(4), word(8), word(12));
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    match kind {
        0 => {
            if rows != cols {
                return Err(Error::BadMatrixFile(format!(
                    "u32 matrices are square, got {rows}x{cols}"
                )));
            }
            MatrixU32::from_le_bytes(rows, &body)
                .map(MatrixFile::U32)
                .map_err(|e| Error::BadMatrixFile(e.to_string()))
        }
        1 => MatrixGf::new(rows, cols, body)
            .map(MatrixFile::Gf8)
            .map_err(|e| Error::BadMatrixFile(e.to_string())),
        k => Err(Error::BadMatrixFile(format!("unknown element kind {k}"))),
    }
}
