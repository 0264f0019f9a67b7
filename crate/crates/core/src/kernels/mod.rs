//! Compute kernels: wrapping u32 matrix product and GF(2^8) matrix product.
//!
//! Each kernel has a software function (the host reference) and a
//! hardware-structured function that must agree with it bit for bit. The
//! hardware variant is what [`crate::api::Csd::launch_kernel`] executes; its
//! duration comes from the timing model under a [`KernelConfig`].

mod config;
pub mod format;
pub mod gf;
mod matrix;

use std::sync::Arc;

pub use config::KernelConfig;
pub use gf::{gf_add, gf_div, gf_inv, gf_mul};
pub use matrix::{
    gf_matmul, gf_matmul_hw, matmul_u32, matmul_u32_hw, MatrixGf, MatrixU32, HW_LANES,
};

use crate::api::Csd;
use crate::device::KernelMode;
use crate::error::{Error, Result};

pub const MATMUL_U32: &str = "matmul_u32";
pub const GF_MATMUL: &str = "gf_matmul";

/// Problem shape `(m x k) * (k x n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl Shape {
    pub fn square(n: usize) -> Self {
        Shape { m: n, k: n, n }
    }
}

/// A launchable kernel.
pub trait Kernel: Send + Sync {
    fn name(&self) -> &str;

    /// Expected input buffer sizes and output size in bytes.
    fn signature(&self, shape: &Shape) -> Result<(Vec<u64>, u64)>;

    /// Square dimension with equivalent work, used to look up the timing
    /// model.
    fn work_dim(&self, shape: &Shape) -> usize;

    fn execute(&self, shape: &Shape, inputs: &[&[u8]], mode: KernelMode) -> Result<Vec<u8>>;
}

pub struct MatmulU32Kernel;

impl Kernel for MatmulU32Kernel {
    fn name(&self) -> &str {
        MATMUL_U32
    }

    fn signature(&self, shape: &Shape) -> Result<(Vec<u64>, u64)> {
        if shape.m != shape.k || shape.k != shape.n {
            return Err(Error::BufferShapeMismatch(format!(
                "{MATMUL_U32} takes square operands"
            )));
        }
        let bytes = crate::device::matrix_bytes(shape.n);
        Ok((vec![bytes, bytes], bytes))
    }

    fn work_dim(&self, shape: &Shape) -> usize {
        shape.n
    }

    fn execute(&self, shape: &Shape, inputs: &[&[u8]], mode: KernelMode) -> Result<Vec<u8>> {
        let a = MatrixU32::from_le_bytes(shape.n, inputs[0])?;
        let b = MatrixU32::from_le_bytes(shape.n, inputs[1])?;
        let c = match mode {
            KernelMode::Hardware => matmul_u32_hw(&a, &b)?,
            KernelMode::Software => matmul_u32(&a, &b)?,
        };
        Ok(c.to_le_bytes())
    }
}

pub struct GfMatmulKernel;

impl Kernel for GfMatmulKernel {
    fn name(&self) -> &str {
        GF_MATMUL
    }

    fn signature(&self, shape: &Shape) -> Result<(Vec<u64>, u64)> {
        let Shape { m, k, n } = *shape;
        Ok((vec![(m * k) as u64, (k * n) as u64], (m * n) as u64))
    }

    fn work_dim(&self, shape: &Shape) -> usize {
        ((shape.m * shape.k * shape.n) as f64)
            .cbrt()
            .round()
            .max(1.0) as usize
    }

    fn execute(&self, shape: &Shape, inputs: &[&[u8]], mode: KernelMode) -> Result<Vec<u8>> {
        let a = MatrixGf::new(shape.m, shape.k, inputs[0].to_vec())?;
        let b = MatrixGf::new(shape.k, shape.n, inputs[1].to_vec())?;
        let c = match mode {
            KernelMode::Hardware => gf_matmul_hw(&a, &b)?,
            KernelMode::Software => gf_matmul(&a, &b)?,
        };
        Ok(c.into_vec())
    }
}

/// Makes both matrix kernels launchable on `csd`.
pub fn register_kernels(csd: &Csd) {
    csd.register_kernel(Arc::new(MatmulU32Kernel));
    csd.register_kernel(Arc::new(GfMatmulKernel));
}
