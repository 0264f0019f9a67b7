//! Stripes laid out on the simulated flash.
//!
//! Each block of a stripe occupies a contiguous LBA extent; extents follow
//! each other in block-index order from a base LBA. Parities are computed on
//! the device: the data extent is loaded peer-to-peer into device DRAM, the
//! `gf_matmul` kernel multiplies it by the parity rows, and the result is
//! stored back peer-to-peer. A JSON manifest records the layout.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlockRole, CodeConfig, ErasureCode, ShardReader};
use crate::api::{Csd, HostBuffer, Source};
use crate::device::PathKind;
use crate::error::{Error, Result};
use crate::kernels::{register_kernels, KernelConfig, Shape, GF_MATMUL};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockExtent {
    pub index: usize,
    pub role: BlockRole,
    pub lba_start: u64,
    pub lba_count: u64,
}

impl BlockExtent {
    pub fn lbas(&self) -> Range<u64> {
        self.lba_start..self.lba_start + self.lba_count
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripeManifest {
    pub stripe_id: u64,
    pub code: CodeConfig,
    /// Length of the payload before zero padding to `k` blocks.
    pub data_len: u64,
    pub blocks: Vec<BlockExtent>,
}

impl StripeManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Device-backed view of one stripe. Reads issued for repair go through
/// the host read path and are counted.
pub struct StripeStore {
    csd: Csd,
    code: ErasureCode,
    manifest: StripeManifest,
    unavailable: BTreeSet<usize>,
    reads_issued: usize,
}

impl StripeStore {
    /// Splits `payload` into `k` zero-padded data blocks, writes them from
    /// the host, encodes the parities on the device and returns the store.
    pub fn write(
        csd: &Csd,
        stripe_id: u64,
        code: ErasureCode,
        base_lba: u64,
        payload: &[u8],
    ) -> Result<Self> {
        let bs = csd.block_size();
        let bb = code.block_bytes();
        if !bb.is_multiple_of(bs) {
            return Err(Error::InvalidGeometry(format!(
                "block_bytes {bb} is not a multiple of the {bs}-byte LBA"
            )));
        }
        let k = code.k();
        if payload.len() > k * bb {
            return Err(Error::InvalidGeometry(format!(
                "{} bytes do not fit in {k} blocks of {bb}",
                payload.len()
            )));
        }
        let per = (bb / bs) as u64;
        let blocks = (0..code.total())
            .map(|index| BlockExtent {
                index,
                role: code.role(index),
                lba_start: base_lba + index as u64 * per,
                lba_count: per,
            })
            .collect::<Vec<_>>();
        let manifest = StripeManifest {
            stripe_id,
            code: code.config(),
            data_len: payload.len() as u64,
            blocks,
        };

        let mut data = payload.to_vec();
        data.resize(k * bb, 0);
        let data_lbas = base_lba..base_lba + k as u64 * per;
        csd.store_to_flash(
            Source::Host(&HostBuffer::new(data)),
            data_lbas.clone(),
            PathKind::HostMediated,
        )?;

        register_kernels(csd);
        let parity_count = code.total() - k;
        let coeffs = csd.alloc_device_buffer((parity_count * k) as u64, false)?;
        let dbuf = csd.alloc_device_buffer((k * bb) as u64, true)?;
        let pbuf = csd.alloc_device_buffer((parity_count * bb) as u64, true)?;
        let run = || -> Result<()> {
            csd.write_device_buffer(&coeffs, &HostBuffer::new(code.parity_rows().into_vec()))?;
            csd.load_from_flash(data_lbas.clone(), &dbuf, PathKind::PeerToPeer)?;
            let shape = Shape {
                m: parity_count,
                k,
                n: bb,
            };
            csd.launch_kernel(
                GF_MATMUL,
                &KernelConfig::default(),
                shape,
                &[&coeffs, &dbuf],
                &pbuf,
            )?;
            let parity_lbas = data_lbas.end..data_lbas.end + parity_count as u64 * per;
            csd.store_to_flash(Source::Device(&pbuf), parity_lbas, PathKind::PeerToPeer)?;
            Ok(())
        };
        let res = run();
        for b in [coeffs, dbuf, pbuf] {
            csd.free_device_buffer(&b)?;
        }
        res?;
        Ok(StripeStore {
            csd: csd.clone(),
            code,
            manifest,
            unavailable: BTreeSet::new(),
            reads_issued: 0,
        })
    }

    /// Attaches to a stripe already on `csd`.
    pub fn open(csd: &Csd, manifest: StripeManifest) -> Self {
        StripeStore {
            csd: csd.clone(),
            code: ErasureCode::from_config(manifest.code),
            manifest,
            unavailable: BTreeSet::new(),
            reads_issued: 0,
        }
    }

    pub fn manifest(&self) -> &StripeManifest {
        &self.manifest
    }

    pub fn code(&self) -> &ErasureCode {
        &self.code
    }

    /// Treats block `index` as lost from now on.
    pub fn mark_lost(&mut self, index: usize) {
        self.unavailable.insert(index);
    }

    pub fn reads_issued(&self) -> usize {
        self.reads_issued
    }

    pub fn reset_read_count(&mut self) {
        self.reads_issued = 0;
    }

    /// Rewrites block `index` from the host, e.g. after a repair.
    pub fn rewrite(&mut self, index: usize, block: &[u8]) -> Result<()> {
        let ext = self.extent(index)?.clone();
        self.csd.store_to_flash(
            Source::Host(&HostBuffer::new(block.to_vec())),
            ext.lbas(),
            PathKind::HostMediated,
        )?;
        self.unavailable.remove(&index);
        Ok(())
    }

    fn extent(&self, index: usize) -> Result<&BlockExtent> {
        self.manifest
            .blocks
            .get(index)
            .ok_or_else(|| Error::InvalidGeometry(format!("block index {index} outside stripe")))
    }

    /// Reads every available block and decodes the original payload.
    pub fn read_payload(&mut self) -> Result<Vec<u8>> {
        let mut survivors = Vec::new();
        for index in 0..self.code.total() {
            if let Some(b) = self.read_shard(index)? {
                survivors.push((index, b));
            }
        }
        let data = self.code.decode(&survivors)?;
        let mut out: Vec<u8> = data.concat();
        out.truncate(self.manifest.data_len as usize);
        Ok(out)
    }
}

impl ShardReader for StripeStore {
    fn read_shard(&mut self, index: usize) -> Result<Option<Vec<u8>>> {
        if self.unavailable.contains(&index) {
            return Ok(None);
        }
        let lbas = self.extent(index)?.lbas();
        let (buf, _) = self.csd.load_to_host(lbas)?;
        self.reads_issued += 1;
        Ok(Some(buf.into_vec()))
    }
}
