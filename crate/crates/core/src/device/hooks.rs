//! I/O interception points on the device timeline.
//!
//! Every block written to flash first passes the pre-write chain, and every
//! block read from flash passes the post-read chain before it reaches its
//! destination. Hooks run in ascending priority; equal priorities keep
//! registration order.

use serde::{Deserialize, Serialize};

use super::flash::StoredBlock;
use super::timing::PathKind;
use super::DeviceCore;
use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookStage {
    PreWrite,
    PostRead,
}

#[derive(Debug)]
pub struct WriteRequest<'a> {
    pub lba: u64,
    /// Payload as left by the hooks that ran before this one.
    pub payload: &'a [u8],
    pub path: PathKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WriteVerdict {
    Pass,
    Mutate(Vec<u8>),
    /// Acknowledge the write but leave flash untouched.
    Drop,
    /// Fail the whole command with [`Error::DeviceFrozen`].
    Reject,
}

#[derive(Debug)]
pub struct ReadResponse<'a> {
    pub lba: u64,
    pub payload: &'a [u8],
    pub path: PathKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReadVerdict {
    Pass,
    Mutate(Vec<u8>),
    Fail(u16),
}

/// View of the device handed to a hook while it runs.
pub struct HookContext<'a> {
    pub(super) core: &'a mut DeviceCore,
}

impl HookContext<'_> {
    pub fn now(&self) -> SimTime {
        self.core.clock.now()
    }

    pub fn block_size(&self) -> usize {
        self.core.flash.block_size()
    }

    /// Current flash content of `lba`, if it was ever written.
    pub fn stored(&self, lba: u64) -> Option<&StoredBlock> {
        self.core.flash.get(lba)
    }

    /// Stalls the device timeline.
    pub fn delay(&mut self, by: SimTime) {
        self.core.clock.advance(by);
    }

    /// Bills an on-device copy of `bytes` over the peer-to-peer path and
    /// returns its duration. Counted as intra-device traffic.
    pub fn charge_intra_device(&mut self, bytes: u64) -> SimTime {
        self.core.charge_intra_device(bytes)
    }
}

/// An interceptor. Both methods default to pass-through; a hook only sees
/// the stage it was registered for.
pub trait IoHook: Send {
    fn on_write(&mut self, _req: &WriteRequest<'_>, _cx: &mut HookContext<'_>) -> WriteVerdict {
        WriteVerdict::Pass
    }

    fn on_read(&mut self, _resp: &ReadResponse<'_>, _cx: &mut HookContext<'_>) -> ReadVerdict {
        ReadVerdict::Pass
    }
}

struct Registered {
    id: u64,
    stage: HookStage,
    priority: i32,
    hook: Box<dyn IoHook>,
}

#[derive(Default)]
pub struct HookChain {
    hooks: Vec<Registered>,
    next_id: u64,
}

impl HookChain {
    pub fn register(&mut self, stage: HookStage, priority: i32, hook: Box<dyn IoHook>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let at = self.hooks.partition_point(|h| h.priority <= priority);
        self.hooks.insert(
            at,
            Registered {
                id,
                stage,
                priority,
                hook,
            },
        );
        id
    }

    pub fn unregister(&mut self, id: u64) -> Result<()> {
        let pos = self
            .hooks
            .iter()
            .position(|h| h.id == id)
            .ok_or(Error::UnknownHookId(id))?;
        self.hooks.remove(pos);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.hooks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }

    /// Runs the pre-write chain; `None` means the write was dropped.
    pub(super) fn run_write(
        &mut self,
        core: &mut DeviceCore,
        lba: u64,
        mut payload: Vec<u8>,
        path: PathKind,
    ) -> Result<Option<Vec<u8>>> {
        for h in self
            .hooks
            .iter_mut()
            .filter(|h| h.stage == HookStage::PreWrite)
        {
            let req = WriteRequest {
                lba,
                payload: &payload,
                path,
            };
            match h.hook.on_write(&req, &mut HookContext { core }) {
                WriteVerdict::Pass => {}
                WriteVerdict::Mutate(p) => {
                    debug_assert_eq!(p.len(), payload.len());
                    payload = p;
                }
                WriteVerdict::Drop => return Ok(None),
                WriteVerdict::Reject => return Err(Error::DeviceFrozen { lba }),
            }
        }
        Ok(Some(payload))
    }

    pub(super) fn run_read(
        &mut self,
        core: &mut DeviceCore,
        lba: u64,
        payload: &mut [u8],
        path: PathKind,
    ) -> Result<()> {
        for h in self
            .hooks
            .iter_mut()
            .filter(|h| h.stage == HookStage::PostRead)
        {
            let resp = ReadResponse { lba, payload, path };
            match h.hook.on_read(&resp, &mut HookContext { core }) {
                ReadVerdict::Pass => {}
                ReadVerdict::Mutate(p) => payload.copy_from_slice(&p),
                ReadVerdict::Fail(code) => return Err(Error::ReadFault { lba, code }),
            }
        }
        Ok(())
    }
}
