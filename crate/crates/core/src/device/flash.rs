use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::time::SimTime;

pub const DEFAULT_BLOCK_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredBlock {
    pub payload: Vec<u8>,
    /// Device-wide write sequence number of this content.
    pub epoch: u64,
    /// Start time of the command that wrote it.
    pub written_at: SimTime,
}

/// Block-addressable persistent store. LBAs that were never written read
/// back as zeros.
#[derive(Clone, Debug)]
pub struct FlashNamespace {
    block_size: usize,
    num_blocks: u64,
    store: BTreeMap<u64, StoredBlock>,
}

impl FlashNamespace {
    pub fn new(block_size: usize, num_blocks: u64) -> Result<Self> {
        if block_size == 0 || num_blocks == 0 {
            return Err(Error::InvalidConfig(
                "block size and block count must be positive".into(),
            ));
        }
        Ok(FlashNamespace {
            block_size,
            num_blocks,
            store: BTreeMap::new(),
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> u64 {
        self.num_blocks
    }

    pub fn check_range(&self, lbas: &Range<u64>) -> Result<()> {
        if lbas.start > lbas.end || lbas.end > self.num_blocks {
            return Err(Error::RangeOutOfBounds {
                start: lbas.start,
                end: lbas.end,
                num_blocks: self.num_blocks,
            });
        }
        Ok(())
    }

    pub fn get(&self, lba: u64) -> Option<&StoredBlock> {
        self.store.get(&lba)
    }

    /// Copies the current content of `lba` into `dest` (zeros if unwritten).
    pub fn read_into(&self, lba: u64, dest: &mut [u8]) {
        match self.store.get(&lba) {
            Some(b) => dest.copy_from_slice(&b.payload),
            None => dest.fill(0),
        }
    }

    pub(crate) fn put(&mut self, lba: u64, payload: Vec<u8>, epoch: u64, written_at: SimTime) {
        debug_assert_eq!(payload.len(), self.block_size);
        debug_assert!(lba < self.num_blocks);
        debug_assert!(self.store.get(&lba).is_none_or(|b| b.epoch < epoch));
        self.store.insert(
            lba,
            StoredBlock {
                payload,
                epoch,
                written_at,
            },
        );
    }

    /// Written blocks in LBA order.
    pub fn populated(&self) -> impl Iterator<Item = (u64, &StoredBlock)> {
        self.store.iter().map(|(&lba, b)| (lba, b))
    }

    pub fn populated_count(&self) -> usize {
        self.store.len()
    }

    /// One past the highest written LBA.
    pub fn extent(&self) -> u64 {
        self.store.keys().next_back().map_or(0, |&lba| lba + 1)
    }
}
