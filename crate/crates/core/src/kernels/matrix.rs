use serde::{Deserialize, Serialize};

use super::gf::{gf_mul, mul_acc};
use crate::error::{Error, Result};

/// Square matrix of unsigned 32-bit integers, row-major. Arithmetic wraps
/// modulo 2^32.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixU32 {
    n: usize,
    data: Vec<u32>,
}

impl MatrixU32 {
    pub fn new(n: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} elements for a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(MatrixU32 { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        MatrixU32 {
            n,
            data: vec![0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.n + j]
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(n: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != n * n * 4 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {n}x{n} u32 matrix",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(MatrixU32 { n, data })
    }
}

fn check_square(a: &MatrixU32, b: &MatrixU32) -> Result<()> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch(format!(
            "{}x{0} times {}x{1}",
            a.n, b.n
        )));
    }
    Ok(())
}

/// Software kernel: the plain triple loop (row, inner, column order).
pub fn matmul_u32(a: &MatrixU32, b: &MatrixU32) -> Result<MatrixU32> {
    check_square(a, b)?;
    let n = a.n;
    let mut c = MatrixU32::zeros(n);
    if n == 0 {
        return Ok(c);
    }
    for (a_row, c_row) in a.data.chunks_exact(n).zip(c.data.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.data.chunks_exact(n)) {
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij = cij.wrapping_add(aik.wrapping_mul(bkj));
            }
        }
    }
    Ok(c)
}

/// Accumulator lanes of the hardware kernel's inner product.
pub const HW_LANES: usize = 16;

/// Hardware kernel structure: `B` is streamed in transposed (column-major)
/// order and each output element is reduced over [`HW_LANES`] parallel
/// accumulators, as the unrolled datapath does.
pub fn matmul_u32_hw(a: &MatrixU32, b: &MatrixU32) -> Result<MatrixU32> {
    check_square(a, b)?;
    let n = a.n;
    let mut bt = vec![0u32; n * n];
    for i in 0..n {
        for j in 0..n {
            bt[j * n + i] = b.data[i * n + j];
        }
    }
    let mut c = MatrixU32::zeros(n);
    if n == 0 {
        return Ok(c);
    }
    for (a_row, c_row) in a.data.chunks_exact(n).zip(c.data.chunks_exact_mut(n)) {
        for (cij, bt_col) in c_row.iter_mut().zip(bt.chunks_exact(n)) {
            let mut acc = [0u32; HW_LANES];
            let mut ac = a_row.chunks_exact(HW_LANES);
            let mut bc = bt_col.chunks_exact(HW_LANES);
            for (x, y) in (&mut ac).zip(&mut bc) {
                for l in 0..HW_LANES {
                    acc[l] = acc[l].wrapping_add(x[l].wrapping_mul(y[l]));
                }
            }
            let mut sum = acc.iter().fold(0u32, |s, &v| s.wrapping_add(v));
            for (&x, &y) in ac.remainder().iter().zip(bc.remainder()) {
                sum = sum.wrapping_add(x.wrapping_mul(y));
            }
            *cij = sum;
        }
    }
    Ok(c)
}

/// Matrix over GF(2^8), row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixGf {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl MatrixGf {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(MatrixGf { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixGf {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    /// Stacks equally sized rows.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(MatrixGf {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [u8] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// New matrix made of the given rows of `self`, in order.
    pub fn select_rows(&self, idx: &[usize]) -> MatrixGf {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        MatrixGf {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

fn check_inner(a: &MatrixGf, b: &MatrixGf) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// Software kernel: each output row accumulates scaled rows of `b`.
pub fn gf_matmul(a: &MatrixGf, b: &MatrixGf) -> Result<MatrixGf> {
    check_inner(a, b)?;
    let mut c = MatrixGf::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            mul_acc(c_row, b.row(k), aik);
        }
    }
    Ok(c)
}

/// Hardware kernel structure: one XOR-reduced inner product per output
/// element over a transposed `b`.
pub fn gf_matmul_hw(a: &MatrixGf, b: &MatrixGf) -> Result<MatrixGf> {
    check_inner(a, b)?;
    let (k, n) = (b.rows, b.cols);
    let mut bt = vec![0u8; k * n];
    for r in 0..k {
        for j in 0..n {
            bt[j * k + r] = b.data[r * n + j];
        }
    }
    let mut c = MatrixGf::zeros(a.rows, n);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..n {
            let col = &bt[j * k..(j + 1) * k];
            c.data[i * n + j] = a_row
                .iter()
                .zip(col)
                .fold(0u8, |s, (&x, &y)| s ^ gf_mul(x, y));
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_u32(n: usize, rng: &mut ChaCha8Rng) -> MatrixU32 {
        MatrixU32::new(n, (0..n * n).map(|_| rng.gen()).collect()).unwrap()
    }

    /// Element-by-element definition, kept independent of both kernels.
    fn oracle_u32(a: &MatrixU32, b: &MatrixU32) -> MatrixU32 {
        let n = a.dim();
        let mut data = vec![0u32; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0u64;
                for k in 0..n {
                    s = s.wrapping_add(a.get(i, k) as u64 * b.get(k, j) as u64);
                }
                data[i * n + j] = s as u32;
            }
        }
        MatrixU32::new(n, data).unwrap()
    }

    #[test]
    fn two_by_two_product() {
        let a = MatrixU32::new(2, vec![1, 2, 3, 4]).unwrap();
        let b = MatrixU32::new(2, vec![5, 6, 7, 8]).unwrap();
        let want = MatrixU32::new(2, vec![19, 22, 43, 50]).unwrap();
        assert_eq!(matmul_u32(&a, &b).unwrap(), want);
        assert_eq!(matmul_u32_hw(&a, &b).unwrap(), want);
    }

    #[test]
    fn products_wrap_modulo_2_pow_32() {
        let a = MatrixU32::new(1, vec![1 << 31]).unwrap();
        let b = MatrixU32::new(1, vec![2]).unwrap();
        assert_eq!(matmul_u32(&a, &b).unwrap().as_slice(), &[0]);
        assert_eq!(matmul_u32_hw(&a, &b).unwrap().as_slice(), &[0]);
    }

    #[test]
    fn identity_and_oracle_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_u32(8, &mut rng);
        assert_eq!(matmul_u32(&a, &MatrixU32::identity(8)).unwrap(), a);
        for n in [1, 3, 8, 17, 33] {
            let a = random_u32(n, &mut rng);
            let b = random_u32(n, &mut rng);
            let want = oracle_u32(&a, &b);
            assert_eq!(matmul_u32(&a, &b).unwrap(), want, "n={n}");
            assert_eq!(matmul_u32_hw(&a, &b).unwrap(), want, "n={n}");
        }
    }

    #[test]
    fn associativity_at_n8() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (a, b, c) = (
                random_u32(8, &mut rng),
                random_u32(8, &mut rng),
                random_u32(8, &mut rng),
            );
            let left = matmul_u32(&matmul_u32(&a, &b).unwrap(), &c).unwrap();
            let right = matmul_u32(&a, &matmul_u32(&b, &c).unwrap()).unwrap();
            assert_eq!(left, right);
        }
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        assert!(matmul_u32(&MatrixU32::zeros(2), &MatrixU32::zeros(3)).is_err());
        assert!(gf_matmul(&MatrixGf::zeros(2, 3), &MatrixGf::zeros(2, 3)).is_err());
    }

    #[test]
    fn gf_two_by_two_against_elementwise_definition() {
        let a = MatrixGf::new(2, 2, vec![0x02, 0x80, 0x03, 0xFF]).unwrap();
        let b = MatrixGf::new(2, 2, vec![0x02, 0x01, 0x1D, 0x07]).unwrap();
        let want: Vec<u8> = (0..2)
            .flat_map(|i| {
                let (a, b) = (&a, &b);
                (0..2).map(move |j| {
                    gf_mul(a.get(i, 0), b.get(0, j)) ^ gf_mul(a.get(i, 1), b.get(1, j))
                })
            })
            .collect();
        assert_eq!(gf_matmul(&a, &b).unwrap().as_slice(), &want[..]);
        assert_eq!(gf_matmul_hw(&a, &b).unwrap().as_slice(), &want[..]);
    }

    #[test]
    fn gf_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = MatrixGf::new(4, 6, (0..24).map(|_| rng.gen()).collect()).unwrap();
        assert_eq!(gf_matmul(&MatrixGf::identity(4), &a).unwrap(), a);
        assert_eq!(gf_matmul(&a, &MatrixGf::identity(6)).unwrap(), a);
        assert_eq!(
            gf_matmul(&a, &MatrixGf::zeros(6, 5)).unwrap(),
            MatrixGf::zeros(4, 5)
        );
    }
}
