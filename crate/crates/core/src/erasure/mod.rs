//! Systematic erasure codes over GF(2^8): Reed-Solomon RS(k, m) and
//! locally repairable codes LRC(k, l, g).
//!
//! Both are defined by a generator matrix whose top `k x k` block is the
//! identity. RS parities are Cauchy rows, so every `k`-subset of rows is
//! invertible. LRC adds `l` XOR rows (one per local group of `k / l` data
//! blocks) and `g` Cauchy global rows. Encoding and decoding are GF(2^8)
//! matrix products.
//!
//! Block indices follow generator row order: data `0..k`, then local
//! parities (LRC only), then global parities.

pub mod linalg;
pub mod stripe;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::gf::{gf_add, gf_inv, gf_mul, mul_acc};
use crate::kernels::{gf_matmul, MatrixGf};
use linalg::{invert, RowBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsConfig {
    pub k: usize,
    pub m: usize,
    pub block_bytes: usize,
}

impl RsConfig {
    pub fn new(k: usize, m: usize, block_bytes: usize) -> Result<Self> {
        if k == 0 || m == 0 || k + m > 255 || block_bytes == 0 {
            return Err(Error::InvalidGeometry(format!(
                "RS({k},{m}) needs k >= 1, m >= 1, k + m <= 255 and non-empty blocks"
            )));
        }
        Ok(RsConfig { k, m, block_bytes })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LrcConfig {
    pub k: usize,
    pub l: usize,
    pub g: usize,
    pub block_bytes: usize,
}

impl LrcConfig {
    pub fn new(k: usize, l: usize, g: usize, block_bytes: usize) -> Result<Self> {
        if k == 0 || l == 0 || !k.is_multiple_of(l) || k + l + g > 255 || block_bytes == 0 {
            return Err(Error::InvalidGeometry(format!(
                "LRC({k},{l},{g}) needs l | k, l >= 1, k + l + g <= 255 and non-empty blocks"
            )));
        }
        Ok(LrcConfig {
            k,
            l,
            g,
            block_bytes,
        })
    }

    /// Data blocks per local group.
    pub fn group_size(&self) -> usize {
        self.k / self.l
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeConfig {
    Rs(RsConfig),
    Lrc(LrcConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    Data,
    LocalParity,
    GlobalParity,
}

/// Outcome of repairing one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub recovered_block: usize,
    /// Reads actually issued through the reader.
    pub blocks_read: usize,
    pub bytes_read: u64,
}

/// Source of stripe blocks during repair or decode. `Ok(None)` marks a block
/// as unavailable; no read is issued for it.
pub trait ShardReader {
    fn read_shard(&mut self, index: usize) -> Result<Option<Vec<u8>>>;
}

impl<F: FnMut(usize) -> Result<Option<Vec<u8>>>> ShardReader for F {
    fn read_shard(&mut self, index: usize) -> Result<Option<Vec<u8>>> {
        self(index)
    }
}

/// Counts issued reads on behalf of a repair.
struct Counted<'a> {
    inner: &'a mut dyn ShardReader,
    blocks: usize,
    bytes: u64,
}

impl Counted<'_> {
    fn read(&mut self, index: usize) -> Result<Option<Vec<u8>>> {
        let r = self.inner.read_shard(index)?;
        if let Some(b) = &r {
            self.blocks += 1;
            self.bytes += b.len() as u64;
        }
        Ok(r)
    }

    fn report(&self, recovered_block: usize) -> RepairReport {
        RepairReport {
            recovered_block,
            blocks_read: self.blocks,
            bytes_read: self.bytes,
        }
    }
}

/// `count x k` Cauchy matrix with `x_i = k + i` and `y_j = j`. Since all
/// x and y values are distinct, every entry `1 / (x_i + y_j)` is defined
/// and every square submatrix is nonsingular.
pub fn cauchy_rows(k: usize, count: usize) -> MatrixGf {
    let mut m = MatrixGf::zeros(count, k);
    for i in 0..count {
        for j in 0..k {
            let x = (k + i) as u8;
            let y = j as u8;
            m.set(
                i,
                j,
                gf_inv(gf_add(x, y)).expect("x and y sets are disjoint"),
            );
        }
    }
    m
}

/// An erasure code with its systematic generator matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErasureCode {
    config: CodeConfig,
    generator: MatrixGf,
}

impl ErasureCode {
    pub fn rs(cfg: RsConfig) -> Self {
        let cauchy = cauchy_rows(cfg.k, cfg.m);
        let mut data = MatrixGf::identity(cfg.k).into_vec();
        data.extend_from_slice(cauchy.as_slice());
        let generator = MatrixGf::new(cfg.k + cfg.m, cfg.k, data).unwrap();
        ErasureCode {
            config: CodeConfig::Rs(cfg),
            generator,
        }
    }

    pub fn lrc(cfg: LrcConfig) -> Self {
        let (k, r) = (cfg.k, cfg.group_size());
        let mut data = MatrixGf::identity(k).into_vec();
        for group in 0..cfg.l {
            data.extend((0..k).map(|j| u8::from(j / r == group)));
        }
        data.extend_from_slice(cauchy_rows(k, cfg.g).as_slice());
        let generator = MatrixGf::new(k + cfg.l + cfg.g, k, data).unwrap();
        ErasureCode {
            config: CodeConfig::Lrc(cfg),
            generator,
        }
    }

    pub fn from_config(config: CodeConfig) -> Self {
        match config {
            CodeConfig::Rs(c) => Self::rs(c),
            CodeConfig::Lrc(c) => Self::lrc(c),
        }
    }

    pub fn config(&self) -> CodeConfig {
        self.config
    }

    pub fn generator(&self) -> &MatrixGf {
        &self.generator
    }

    pub fn k(&self) -> usize {
        self.generator.cols()
    }

    /// Blocks per stripe.
    pub fn total(&self) -> usize {
        self.generator.rows()
    }

    pub fn block_bytes(&self) -> usize {
        match self.config {
            CodeConfig::Rs(c) => c.block_bytes,
            CodeConfig::Lrc(c) => c.block_bytes,
        }
    }

    pub fn role(&self, index: usize) -> BlockRole {
        let k = self.k();
        match self.config {
            _ if index < k => BlockRole::Data,
            CodeConfig::Lrc(c) if index < k + c.l => BlockRole::LocalParity,
            _ => BlockRole::GlobalParity,
        }
    }

    /// Generator rows below the identity block.
    pub fn parity_rows(&self) -> MatrixGf {
        let idx: Vec<usize> = (self.k()..self.total()).collect();
        self.generator.select_rows(&idx)
    }

    fn check_data<B: AsRef<[u8]>>(&self, data: &[B]) -> Result<()> {
        if data.len() != self.k() {
            return Err(Error::InvalidGeometry(format!(
                "{} data blocks, code takes {}",
                data.len(),
                self.k()
            )));
        }
        let want = self.block_bytes();
        for (index, b) in data.iter().enumerate() {
            if b.as_ref().len() != want {
                return Err(Error::BlockSizeMismatch {
                    index,
                    len: b.as_ref().len(),
                    expected: want,
                });
            }
        }
        Ok(())
    }

    /// Parity blocks in index order (`total - k` of them).
    pub fn encode<B: AsRef<[u8]>>(&self, data: &[B]) -> Result<Vec<Vec<u8>>> {
        self.check_data(data)?;
        let d = MatrixGf::from_rows(data)?;
        let p = gf_matmul(&self.parity_rows(), &d)?;
        Ok((0..p.rows()).map(|i| p.row(i).to_vec()).collect())
    }

    /// Data blocks followed by parities.
    pub fn encode_stripe<B: AsRef<[u8]>>(&self, data: &[B]) -> Result<Vec<Vec<u8>>> {
        let mut stripe: Vec<Vec<u8>> = data.iter().map(|b| b.as_ref().to_vec()).collect();
        stripe.extend(self.encode(data)?);
        Ok(stripe)
    }

    /// Recovers the data blocks from surviving `(index, block)` pairs.
    ///
    /// Survivors are taken in index order until `k` independent generator
    /// rows are found. For RS any `k` distinct survivors suffice; for LRC the
    /// pattern must leave rank `k`.
    pub fn decode(&self, survivors: &[(usize, Vec<u8>)]) -> Result<Vec<Vec<u8>>> {
        let k = self.k();
        let mut sorted: Vec<&(usize, Vec<u8>)> = survivors.iter().collect();
        sorted.sort_by_key(|s| s.0);
        sorted.dedup_by_key(|s| s.0);
        for (index, b) in &sorted {
            if *index >= self.total() {
                return Err(Error::InvalidGeometry(format!(
                    "block index {index} outside stripe"
                )));
            }
            if b.len() != self.block_bytes() {
                return Err(Error::BlockSizeMismatch {
                    index: *index,
                    len: b.len(),
                    expected: self.block_bytes(),
                });
            }
        }
        if sorted.len() < k {
            return Err(Error::TooFewSurvivors {
                available: sorted.len(),
                needed: k,
            });
        }
        let mut basis = RowBasis::new(k);
        let mut chosen = Vec::with_capacity(k);
        for s in &sorted {
            if basis.insert(self.generator.row(s.0)) {
                chosen.push(*s);
                if chosen.len() == k {
                    break;
                }
            }
        }
        if chosen.len() < k {
            return Err(Error::UnrecoverablePattern {
                rank: chosen.len(),
                needed: k,
            });
        }
        if chosen.iter().enumerate().all(|(i, s)| s.0 == i) {
            return Ok(chosen.into_iter().map(|s| s.1.clone()).collect());
        }
        let idx: Vec<usize> = chosen.iter().map(|s| s.0).collect();
        let inv = invert(&self.generator.select_rows(&idx))?;
        let blocks: Vec<&[u8]> = chosen.iter().map(|s| s.1.as_slice()).collect();
        let out = gf_matmul(&inv, &MatrixGf::from_rows(&blocks)?)?;
        Ok((0..k).map(|i| out.row(i).to_vec()).collect())
    }

    /// Full decode through a reader: reads blocks in index order until `k`
    /// independent rows are in hand, then reconstructs `lost` from the data.
    pub fn repair_by_decode(
        &self,
        lost: usize,
        reader: &mut dyn ShardReader,
    ) -> Result<(Vec<u8>, RepairReport)> {
        self.check_index(lost)?;
        let k = self.k();
        let mut counted = Counted {
            inner: reader,
            blocks: 0,
            bytes: 0,
        };
        let mut basis = RowBasis::new(k);
        let mut survivors = Vec::with_capacity(k);
        for index in (0..self.total()).filter(|&i| i != lost) {
            if basis.rank() == k {
                break;
            }
            if !basis.clone().insert(self.generator.row(index)) {
                continue;
            }
            if let Some(b) = counted.read(index)? {
                basis.insert(self.generator.row(index));
                survivors.push((index, b));
            }
        }
        if basis.rank() < k {
            return Err(Error::UnrecoverablePattern {
                rank: basis.rank(),
                needed: k,
            });
        }
        let data = self.decode(&survivors)?;
        let block = self.reencode_row(lost, &data);
        Ok((block, counted.report(lost)))
    }

    /// Generator row `index` applied to the data blocks.
    fn reencode_row(&self, index: usize, data: &[Vec<u8>]) -> Vec<u8> {
        let mut out = vec![0u8; self.block_bytes()];
        for (&c, d) in self.generator.row(index).iter().zip(data) {
            mul_acc(&mut out, d, c);
        }
        out
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.total() {
            return Err(Error::InvalidGeometry(format!(
                "block index {index} outside stripe of {}",
                self.total()
            )));
        }
        Ok(())
    }

    /// Repairs one lost block of an LRC stripe from its local group: the
    /// group's other members plus its local parity. A lost global parity is
    /// re-encoded from the `k` data blocks. For RS codes this is
    /// [`Self::repair_by_decode`].
    pub fn repair_single(
        &self,
        lost: usize,
        reader: &mut dyn ShardReader,
    ) -> Result<(Vec<u8>, RepairReport)> {
        self.check_index(lost)?;
        let cfg = match self.config {
            CodeConfig::Rs(_) => return self.repair_by_decode(lost, reader),
            CodeConfig::Lrc(c) => c,
        };
        let (k, r) = (cfg.k, cfg.group_size());
        let sources: Vec<usize> = match self.role(lost) {
            BlockRole::Data => {
                let group = lost / r;
                (group * r..(group + 1) * r)
                    .filter(|&i| i != lost)
                    .chain([k + group])
                    .collect()
            }
            BlockRole::LocalParity => {
                let group = lost - k;
                (group * r..(group + 1) * r).collect()
            }
            BlockRole::GlobalParity => (0..k).collect(),
        };
        let mut counted = Counted {
            inner: reader,
            blocks: 0,
            bytes: 0,
        };
        let mut blocks = Vec::with_capacity(sources.len());
        for &i in &sources {
            match counted.read(i)? {
                Some(b) if b.len() == cfg.block_bytes => blocks.push(b),
                Some(b) => {
                    return Err(Error::BlockSizeMismatch {
                        index: i,
                        len: b.len(),
                        expected: cfg.block_bytes,
                    })
                }
                None => return Err(Error::NotSingleErasure),
            }
        }
        let block = if self.role(lost) == BlockRole::GlobalParity {
            self.reencode_row(lost, &blocks)
        } else {
            let mut acc = vec![0u8; cfg.block_bytes];
            for b in &blocks {
                acc.iter_mut().zip(b).for_each(|(a, x)| *a ^= x);
            }
            acc
        };
        Ok((block, counted.report(lost)))
    }
}

/// RS parity blocks for `data`.
pub fn rs_encode<B: AsRef<[u8]>>(cfg: RsConfig, data: &[B]) -> Result<Vec<Vec<u8>>> {
    ErasureCode::rs(cfg).encode(data)
}

pub fn rs_decode(cfg: RsConfig, available: &[(usize, Vec<u8>)]) -> Result<Vec<Vec<u8>>> {
    ErasureCode::rs(cfg).decode(available)
}

/// Parity blocks of an LRC stripe, split by kind.
pub type LrcParities = (Vec<Vec<u8>>, Vec<Vec<u8>>);

/// `(local parities, global parities)` for `data`.
pub fn lrc_encode<B: AsRef<[u8]>>(cfg: LrcConfig, data: &[B]) -> Result<LrcParities> {
    let mut parities = ErasureCode::lrc(cfg).encode(data)?;
    let global = parities.split_off(cfg.l);
    Ok((parities, global))
}

pub fn lrc_repair_single(
    cfg: LrcConfig,
    lost: usize,
    reader: &mut dyn ShardReader,
) -> Result<(Vec<u8>, RepairReport)> {
    ErasureCode::lrc(cfg).repair_single(lost, reader)
}

pub fn lrc_decode_global(cfg: LrcConfig, survivors: &[(usize, Vec<u8>)]) -> Result<Vec<Vec<u8>>> {
    ErasureCode::lrc(cfg).decode(survivors)
}

/// Scalar helper for tests and tools: `sum_j row[j] * data[j][byte]`.
pub fn row_combination(row: &[u8], data: &[Vec<u8>], byte: usize) -> u8 {
    row.iter()
        .zip(data)
        .fold(0u8, |s, (&c, d)| s ^ gf_mul(c, d[byte]))
}
