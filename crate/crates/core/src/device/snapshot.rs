//! Flat binary image of the flash store.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `CSDG`                            |
//! | 4      | 4    | format version (1)                      |
//! | 8      | 4    | block size                              |
//! | 12     | 4    | reserved, zero                          |
//! | 16     | 8    | namespace size in blocks                |
//! | 24     | 8    | image blocks that follow the header     |
//! | 32     | 32   | reserved, zero                          |
//!
//! The body holds blocks `0..image_blocks` back to back. Only the prefix up
//! to the highest written LBA is stored; all-zero blocks load as unwritten.

use std::io::{Read, Write};

use super::flash::FlashNamespace;
use crate::error::{Error, Result};
use crate::time::SimTime;

pub const MAGIC: &[u8; 4] = b"CSDG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

pub fn dump<W: Write>(flash: &FlashNamespace, mut out: W) -> Result<()> {
    let bs = flash.block_size();
    let extent = flash.extent();
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(bs as u32).to_le_bytes());
    header[16..24].copy_from_slice(&flash.num_blocks().to_le_bytes());
    header[24..32].copy_from_slice(&extent.to_le_bytes());
    out.write_all(&header)?;
    let zeros = vec![0u8; bs];
    let mut blocks = flash.populated().peekable();
    for lba in 0..extent {
        match blocks.next_if(|&(l, _)| l == lba) {
            Some((_, b)) => out.write_all(&b.payload)?,
            None => out.write_all(&zeros)?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<FlashNamespace> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::BadSnapshot("truncated header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::BadSnapshot("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(Error::BadSnapshot(format!(
            "unsupported version {}",
            u32_at(4)
        )));
    }
    let bs = u32_at(8) as usize;
    let num_blocks = u64_at(16);
    let image_blocks = u64_at(24);
    if image_blocks > num_blocks {
        return Err(Error::BadSnapshot("image larger than namespace".into()));
    }
    let mut flash =
        FlashNamespace::new(bs, num_blocks).map_err(|e| Error::BadSnapshot(e.to_string()))?;
    let mut epoch = 0;
    for lba in 0..image_blocks {
        let mut block = vec![0u8; bs];
        input
            .read_exact(&mut block)
            .map_err(|_| Error::BadSnapshot(format!("image ends before block {lba}")))?;
        if block.iter().any(|&b| b != 0) {
            epoch += 1;
            flash.put(lba, block, epoch, SimTime::ZERO);
        }
    }
    Ok(flash)
}
