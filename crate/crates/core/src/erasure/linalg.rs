//! Gaussian elimination over GF(2^8).

use crate::error::{Error, Result};
use crate::kernels::gf::{gf_inv, mul_acc};
use crate::kernels::MatrixGf;

/// Inverse of a square matrix by Gauss-Jordan elimination.
pub fn invert(m: &MatrixGf) -> Result<MatrixGf> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cannot invert a {n}x{} matrix",
            m.cols()
        )));
    }
    let mut a = m.clone();
    let mut inv = MatrixGf::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| a.get(r, col) != 0)
            .ok_or(Error::SingularSubmatrix)?;
        if pivot != col {
            swap_rows(&mut a, pivot, col);
            swap_rows(&mut inv, pivot, col);
        }
        let scale = gf_inv(a.get(col, col))?;
        scale_row(&mut a, col, scale);
        scale_row(&mut inv, col, scale);
        for r in 0..n {
            let f = a.get(r, col);
            if r != col && f != 0 {
                let (src_a, src_i) = (a.row(col).to_vec(), inv.row(col).to_vec());
                mul_acc(a.row_mut(r), &src_a, f);
                mul_acc(inv.row_mut(r), &src_i, f);
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut MatrixGf, i: usize, j: usize) {
    let (ri, rj) = (m.row(i).to_vec(), m.row(j).to_vec());
    m.row_mut(i).copy_from_slice(&rj);
    m.row_mut(j).copy_from_slice(&ri);
}

fn scale_row(m: &mut MatrixGf, i: usize, c: u8) {
    let src = m.row(i).to_vec();
    m.row_mut(i).fill(0);
    mul_acc(m.row_mut(i), &src, c);
}

/// Incremental row-echelon basis used to pick independent rows.
#[derive(Clone, Debug)]
pub struct RowBasis {
    cols: usize,
    /// Reduced rows with their pivot column.
    rows: Vec<(usize, Vec<u8>)>,
}

impl RowBasis {
    pub fn new(cols: usize) -> Self {
        RowBasis {
            cols,
            rows: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Adds `row` if it is independent of the rows seen so far.
    pub fn insert(&mut self, row: &[u8]) -> bool {
        debug_assert_eq!(row.len(), self.cols);
        let mut v = row.to_vec();
        for (pivot, b) in &self.rows {
            let f = v[*pivot];
            if f != 0 {
                mul_acc(&mut v, b, f);
            }
        }
        match v.iter().position(|&x| x != 0) {
            Some(p) => {
                let s = gf_inv(v[p]).expect("nonzero pivot");
                let src = v.clone();
                v.fill(0);
                mul_acc(&mut v, &src, s);
                // Keep the basis fully reduced on the new pivot.
                for (_, b) in &mut self.rows {
                    let f = b[p];
                    if f != 0 {
                        mul_acc(b, &v, f);
                    }
                }
                self.rows.push((p, v));
                true
            }
            None => false,
        }
    }
}

pub fn rank(m: &MatrixGf) -> usize {
    let mut basis = RowBasis::new(m.cols());
    for i in 0..m.rows() {
        basis.insert(m.row(i));
    }
    basis.rank()
}
