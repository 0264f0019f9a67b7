//! The simulated device: flash namespace, device DRAM, the two data paths
//! and the simulated clock.
//!
//! A [`Device`] is a single logical timeline. Every command advances the
//! clock by its modeled duration before the next one starts; the
//! [`crate::api::Csd`] handle serializes concurrent callers onto it.

mod config;
mod dram;
mod flash;
pub mod hooks;
pub mod snapshot;
mod timing;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::DeviceConfig;
pub use dram::DeviceDram;
pub use flash::{FlashNamespace, StoredBlock, DEFAULT_BLOCK_SIZE};
pub use hooks::{
    HookChain, HookContext, HookStage, IoHook, ReadResponse, ReadVerdict, WriteRequest,
    WriteVerdict,
};
pub use timing::{matrix_bytes, KernelMode, PathKind, TimingModel, TransferPath};

use crate::error::{Error, Result};
use crate::time::{SimClock, SimTime};

/// Bytes moved, tagged by route.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub p2p_bytes: u64,
    pub host_bytes: u64,
    /// On-device copies (shadow retention and restore).
    pub intra_device_bytes: u64,
    /// Blocks read from flash by commands.
    pub flash_block_reads: u64,
    /// Blocks that reached flash.
    pub flash_block_writes: u64,
}

/// Device state that interceptors may observe or bill against.
pub struct DeviceCore {
    pub(crate) flash: FlashNamespace,
    pub(crate) clock: SimClock,
    pub(crate) timing: TimingModel,
    rng: ChaCha8Rng,
    pub(crate) traffic: Traffic,
    next_epoch: u64,
}

impl DeviceCore {
    fn jittered(&mut self, nominal: SimTime) -> SimTime {
        let j = self.timing.jitter_fraction;
        if j == 0.0 {
            return nominal;
        }
        let factor = 1.0 + j * (2.0 * self.rng.gen::<f64>() - 1.0);
        SimTime((nominal.as_picos() as f64 * factor).round() as u64)
    }

    /// Advances the clock by one (jittered) transfer and returns its duration.
    pub(crate) fn bill_transfer(&mut self, bytes: u64, kind: PathKind) -> SimTime {
        let d = self.jittered(self.timing.transfer_time(bytes, kind));
        match kind {
            PathKind::PeerToPeer => self.traffic.p2p_bytes += bytes,
            PathKind::HostMediated => self.traffic.host_bytes += bytes,
        }
        self.clock.advance(d);
        d
    }

    pub(crate) fn charge_intra_device(&mut self, bytes: u64) -> SimTime {
        let d = self.jittered(self.timing.transfer_time(bytes, PathKind::PeerToPeer));
        self.traffic.intra_device_bytes += bytes;
        self.clock.advance(d);
        d
    }

    fn next_epoch(&mut self) -> u64 {
        self.next_epoch += 1;
        self.next_epoch
    }
}

pub struct Device {
    core: DeviceCore,
    dram: DeviceDram,
    hooks: HookChain,
}

impl Device {
    pub fn new(cfg: &DeviceConfig) -> Result<Self> {
        let timing = cfg.timing_model();
        timing.validate()?;
        Ok(Self::from_parts(
            FlashNamespace::new(cfg.block_size, cfg.num_blocks)?,
            DeviceDram::new(cfg.dram_capacity),
            timing,
            cfg.seed,
        ))
    }

    pub fn from_parts(
        flash: FlashNamespace,
        dram: DeviceDram,
        timing: TimingModel,
        jitter_seed: u64,
    ) -> Self {
        let next_epoch = flash.populated().map(|(_, b)| b.epoch).max().unwrap_or(0);
        Device {
            core: DeviceCore {
                flash,
                clock: SimClock::default(),
                timing,
                rng: ChaCha8Rng::seed_from_u64(jitter_seed),
                traffic: Traffic::default(),
                next_epoch,
            },
            dram,
            hooks: HookChain::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.core.clock.now()
    }

    pub fn flash(&self) -> &FlashNamespace {
        &self.core.flash
    }

    pub fn timing(&self) -> &TimingModel {
        &self.core.timing
    }

    pub fn timing_mut(&mut self) -> &mut TimingModel {
        &mut self.core.timing
    }

    pub fn dram(&self) -> &DeviceDram {
        &self.dram
    }

    pub fn dram_mut(&mut self) -> &mut DeviceDram {
        &mut self.dram
    }

    pub fn hooks_mut(&mut self) -> &mut HookChain {
        &mut self.hooks
    }

    pub fn traffic(&self) -> Traffic {
        self.core.traffic
    }

    pub fn block_size(&self) -> usize {
        self.core.flash.block_size()
    }

    /// Advances the clock by `by` (kernel execution, host think time).
    pub fn advance(&mut self, by: SimTime) {
        self.core.clock.advance(by);
    }

    pub fn advance_to(&mut self, t: SimTime) {
        self.core.clock.advance_to(t);
    }

    /// Bills a transfer that does not touch flash (host <-> device DRAM).
    pub fn bill_transfer(&mut self, bytes: u64, kind: PathKind) -> SimTime {
        self.core.bill_transfer(bytes, kind)
    }

    /// Reads `lbas` into `dest` in LBA order, passing each block through the
    /// post-read chain. Flash is never mutated.
    pub fn flash_read(
        &mut self,
        lbas: Range<u64>,
        kind: PathKind,
        dest: &mut [u8],
    ) -> Result<SimTime> {
        let flash = &self.core.flash;
        flash.check_range(&lbas)?;
        let bs = flash.block_size();
        let needed = (lbas.end - lbas.start) as usize * bs;
        if dest.len() < needed {
            return Err(Error::DestinationTooSmall {
                needed,
                available: dest.len(),
            });
        }
        if lbas.is_empty() {
            return Ok(SimTime::ZERO);
        }
        let start = self.now();
        let mut first_err = None;
        for (lba, chunk) in lbas.clone().zip(dest[..needed].chunks_exact_mut(bs)) {
            self.core.flash.read_into(lba, chunk);
            if let Err(e) = self.hooks.run_read(&mut self.core, lba, chunk, kind) {
                first_err.get_or_insert(e);
            }
        }
        self.core.traffic.flash_block_reads += lbas.end - lbas.start;
        self.core.bill_transfer(needed as u64, kind);
        match first_err {
            Some(e) => Err(e),
            None => Ok(self.now() - start),
        }
    }

    /// Writes `data` to `lbas`. The pre-write chain sees every block before
    /// any of them lands; a rejected block fails the command with nothing
    /// written.
    pub fn flash_write(
        &mut self,
        lbas: Range<u64>,
        data: &[u8],
        kind: PathKind,
    ) -> Result<SimTime> {
        let flash = &self.core.flash;
        flash.check_range(&lbas)?;
        let bs = flash.block_size();
        let blocks = lbas.end - lbas.start;
        if data.len() != blocks as usize * bs {
            return Err(Error::MisalignedLength {
                len: data.len(),
                blocks,
                block_size: bs,
            });
        }
        if blocks == 0 {
            return Ok(SimTime::ZERO);
        }
        let start = self.now();
        let mut landed = Vec::with_capacity(blocks as usize);
        for (lba, chunk) in lbas.zip(data.chunks_exact(bs)) {
            if let Some(p) = self
                .hooks
                .run_write(&mut self.core, lba, chunk.to_vec(), kind)?
            {
                landed.push((lba, p));
            }
        }
        self.core.bill_transfer(data.len() as u64, kind);
        self.core.traffic.flash_block_writes += landed.len() as u64;
        // A block becomes live when its command completes.
        let done = self.now();
        for (lba, p) in landed {
            let epoch = self.core.next_epoch();
            self.core.flash.put(lba, p, epoch, done);
        }
        Ok(self.now() - start)
    }

    /// Bills an on-device copy of `bytes` and returns its duration.
    pub fn charge_intra_device(&mut self, bytes: u64) -> SimTime {
        self.core.charge_intra_device(bytes)
    }

    /// Intra-device block copy used by recovery: bypasses the interceptor
    /// chain and never crosses the host.
    pub fn restore_block(&mut self, lba: u64, payload: Vec<u8>) -> Result<SimTime> {
        self.core.flash.check_range(&(lba..lba + 1))?;
        let bs = self.block_size();
        if payload.len() != bs {
            return Err(Error::MisalignedLength {
                len: payload.len(),
                blocks: 1,
                block_size: bs,
            });
        }
        let d = self.core.charge_intra_device(bs as u64);
        let epoch = self.core.next_epoch();
        let done = self.now();
        self.core.flash.put(lba, payload, epoch, done);
        Ok(d)
    }

    pub fn into_flash(self) -> FlashNamespace {
        self.core.flash
    }
}
