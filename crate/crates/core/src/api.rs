//! The CSDGuard library surface.
//!
//! [`Csd`] is a cloneable handle to one simulated device. Every call is a
//! command on the device's serialized queue: it takes the device lock,
//! applies its effects, advances the simulated clock and returns a
//! [`CompletionEvent`] with the command's timestamps. Profiling is always
//! on; failed commands are also recorded in the event log.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use serde::Serialize;

use crate::device::{Device, DeviceConfig, HookStage, IoHook, KernelMode, PathKind, Traffic};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelConfig, Shape};
use crate::time::SimTime;

/// Handle to a live allocation in device DRAM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DeviceBuffer {
    id: u64,
    size: u64,
    offset: u64,
    p2p_mapped: bool,
}

impl DeviceBuffer {
    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn size(&self) -> u64 {
        self.size
    }
    /// Byte offset of the region in device DRAM.
    pub fn offset(&self) -> u64 {
        self.offset
    }
    /// Whether flash can move data straight into this buffer.
    pub fn p2p_mapped(&self) -> bool {
        self.p2p_mapped
    }
}

/// Host memory staging buffer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HostBuffer {
    contents: Vec<u8>,
}

impl HostBuffer {
    pub fn new(contents: Vec<u8>) -> Self {
        HostBuffer { contents }
    }
    pub fn zeroed(size: usize) -> Self {
        HostBuffer {
            contents: vec![0; size],
        }
    }
    pub fn size(&self) -> u64 {
        self.contents.len() as u64
    }
    pub fn as_slice(&self) -> &[u8] {
        &self.contents
    }
    pub fn into_vec(self) -> Vec<u8> {
        self.contents
    }
}

impl From<Vec<u8>> for HostBuffer {
    fn from(v: Vec<u8>) -> Self {
        HostBuffer::new(v)
    }
}

/// Where a flash store takes its data from.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Device(&'a DeviceBuffer),
    Host(&'a HostBuffer),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    FlashLoad,
    FlashStore,
    HostRead,
    HostToDevice,
    DeviceToHost,
    Kernel(String),
    HostKernel(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Ok,
    Failed(String),
}

/// Profiling record of one command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CompletionEvent {
    pub kind: CommandKind,
    pub submit_ts: SimTime,
    pub start_ts: SimTime,
    pub end_ts: SimTime,
    pub status: EventStatus,
    /// Clock advances making up the command, e.g. the two hops of a
    /// host-mediated transfer into a device buffer.
    pub segments: Vec<SimTime>,
}

impl CompletionEvent {
    pub fn duration(&self) -> SimTime {
        self.end_ts - self.start_ts
    }
}

/// `b.end_ts - a.start_ts`, the interval covering both commands. Fails if
/// `b` started before `a`.
pub fn elapsed_between(a: &CompletionEvent, b: &CompletionEvent) -> Result<SimTime> {
    if b.start_ts < a.start_ts {
        return Err(Error::NegativeInterval);
    }
    Ok(b.end_ts - a.start_ts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InterceptorRegistration {
    pub hook_id: u64,
    pub stage: HookStage,
    pub priority: i32,
}

/// How a host-side kernel run is billed to the timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HostBilling {
    /// Software anchor table of the timing model.
    Simulated,
    /// Measured wall-clock time of the run.
    WallClock,
}

struct Slot {
    buf: DeviceBuffer,
    data: Vec<u8>,
}

struct State {
    device: Device,
    buffers: BTreeMap<u64, Slot>,
    next_buffer_id: u64,
    kernels: HashMap<String, Arc<dyn Kernel>>,
    events: Vec<CompletionEvent>,
}

impl State {
    fn slot(&self, buf: &DeviceBuffer) -> Result<&Slot> {
        self.buffers.get(&buf.id).ok_or(Error::UseAfterFree(buf.id))
    }

    fn slot_mut(&mut self, buf: &DeviceBuffer) -> Result<&mut Slot> {
        self.buffers
            .get_mut(&buf.id)
            .ok_or(Error::UseAfterFree(buf.id))
    }

    fn kernel(&self, name: &str) -> Result<Arc<dyn Kernel>> {
        self.kernels
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownKernel(name.to_string()))
    }

    /// Runs `f` as one command and records its event.
    fn command<T>(
        &mut self,
        kind: CommandKind,
        f: impl FnOnce(&mut State, &mut Vec<SimTime>) -> Result<T>,
    ) -> Result<(T, CompletionEvent)> {
        let start = self.device.now();
        let mut segments = Vec::new();
        let res = f(self, &mut segments);
        let ev = CompletionEvent {
            kind,
            submit_ts: start,
            start_ts: start,
            end_ts: self.device.now(),
            status: match &res {
                Ok(_) => EventStatus::Ok,
                Err(e) => EventStatus::Failed(e.to_string()),
            },
            segments,
        };
        self.events.push(ev.clone());
        res.map(|v| (v, ev))
    }
}

fn range_bytes(lbas: &Range<u64>, block_size: usize) -> u64 {
    lbas.end.saturating_sub(lbas.start) * block_size as u64
}

/// Shareable handle to one simulated computational storage device.
#[derive(Clone)]
pub struct Csd {
    inner: Arc<Mutex<State>>,
}

impl Csd {
    pub fn new(cfg: &DeviceConfig) -> Result<Self> {
        Ok(Self::from_device(Device::new(cfg)?))
    }

    pub fn from_device(device: Device) -> Self {
        Csd {
            inner: Arc::new(Mutex::new(State {
                device,
                buffers: BTreeMap::new(),
                next_buffer_id: 1,
                kernels: HashMap::new(),
                events: Vec::new(),
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Direct access to the device model, outside the command queue.
    pub fn with_device<T>(&self, f: impl FnOnce(&mut Device) -> T) -> T {
        f(&mut self.lock().device)
    }

    pub fn now(&self) -> SimTime {
        self.lock().device.now()
    }

    /// Idles the device until `t` (host think time between commands).
    pub fn advance_to(&self, t: SimTime) {
        self.lock().device.advance_to(t);
    }

    pub fn block_size(&self) -> usize {
        self.lock().device.block_size()
    }

    pub fn traffic(&self) -> Traffic {
        self.lock().device.traffic()
    }

    pub fn events(&self) -> Vec<CompletionEvent> {
        self.lock().events.clone()
    }

    pub fn clear_events(&self) {
        self.lock().events.clear();
    }

    /// Out-of-band view of one flash block (zeros if never written). Does
    /// not run interceptors or touch the clock.
    pub fn inspect_block(&self, lba: u64) -> Vec<u8> {
        let st = self.lock();
        let flash = st.device.flash();
        let mut out = vec![0u8; flash.block_size()];
        flash.read_into(lba, &mut out);
        out
    }

    // ---- buffers ----

    pub fn alloc_device_buffer(&self, size: u64, p2p_mapped: bool) -> Result<DeviceBuffer> {
        if size == 0 {
            return Err(Error::BufferShapeMismatch(
                "zero-sized device buffer".into(),
            ));
        }
        let mut st = self.lock();
        let id = st.next_buffer_id;
        let offset = st.device.dram_mut().alloc(id, size)?;
        st.next_buffer_id += 1;
        let buf = DeviceBuffer {
            id,
            size,
            offset,
            p2p_mapped,
        };
        st.buffers.insert(
            id,
            Slot {
                buf,
                data: vec![0; size as usize],
            },
        );
        Ok(buf)
    }

    pub fn free_device_buffer(&self, buf: &DeviceBuffer) -> Result<()> {
        let mut st = self.lock();
        let slot = st
            .buffers
            .remove(&buf.id)
            .ok_or(Error::UseAfterFree(buf.id))?;
        st.device.dram_mut().free(slot.buf.offset, buf.id)
    }

    pub fn live_buffers(&self) -> Vec<DeviceBuffer> {
        self.lock().buffers.values().map(|s| s.buf).collect()
    }

    /// Host to device copy over the host link.
    pub fn write_device_buffer(
        &self,
        buf: &DeviceBuffer,
        src: &HostBuffer,
    ) -> Result<CompletionEvent> {
        let mut st = self.lock();
        st.command(CommandKind::HostToDevice, |st, seg| {
            let slot = st.slot_mut(buf)?;
            if src.size() > slot.buf.size {
                return Err(Error::DestinationTooSmall {
                    needed: src.contents.len(),
                    available: slot.buf.size as usize,
                });
            }
            slot.data[..src.contents.len()].copy_from_slice(&src.contents);
            seg.push(st.device.bill_transfer(src.size(), PathKind::HostMediated));
            Ok(())
        })
        .map(|(_, ev)| ev)
    }

    /// Device to host copy over the host link.
    pub fn read_device_buffer(&self, buf: &DeviceBuffer) -> Result<(HostBuffer, CompletionEvent)> {
        let mut st = self.lock();
        st.command(CommandKind::DeviceToHost, |st, seg| {
            let data = st.slot(buf)?.data.clone();
            seg.push(
                st.device
                    .bill_transfer(data.len() as u64, PathKind::HostMediated),
            );
            Ok(HostBuffer::new(data))
        })
    }

    // ---- flash I/O ----

    /// Loads `lbas` from flash into `dest`. Peer-to-peer requires a
    /// p2p-mapped buffer; host-mediated bounces through host memory and is
    /// billed as two hops.
    pub fn load_from_flash(
        &self,
        lbas: Range<u64>,
        dest: &DeviceBuffer,
        path: PathKind,
    ) -> Result<CompletionEvent> {
        let mut st = self.lock();
        st.command(CommandKind::FlashLoad, |st, seg| {
            let slot = st.slot(dest)?;
            if path == PathKind::PeerToPeer && !slot.buf.p2p_mapped {
                return Err(Error::PathNotPermitted(
                    "peer-to-peer load into a buffer that is not p2p-mapped",
                ));
            }
            let bytes = range_bytes(&lbas, st.device.block_size());
            if bytes > slot.buf.size {
                return Err(Error::DestinationTooSmall {
                    needed: bytes as usize,
                    available: slot.buf.size as usize,
                });
            }
            let mut staging = vec![0u8; bytes as usize];
            seg.push(st.device.flash_read(lbas, path, &mut staging)?);
            if path == PathKind::HostMediated && bytes > 0 {
                seg.push(st.device.bill_transfer(bytes, PathKind::HostMediated));
            }
            st.slot_mut(dest)?.data[..bytes as usize].copy_from_slice(&staging);
            Ok(())
        })
        .map(|(_, ev)| ev)
    }

    /// Reads `lbas` into host memory over the host path.
    pub fn load_to_host(&self, lbas: Range<u64>) -> Result<(HostBuffer, CompletionEvent)> {
        let mut st = self.lock();
        st.command(CommandKind::HostRead, |st, seg| {
            let bytes = range_bytes(&lbas, st.device.block_size());
            let mut out = vec![0u8; bytes as usize];
            seg.push(
                st.device
                    .flash_read(lbas, PathKind::HostMediated, &mut out)?,
            );
            Ok(HostBuffer::new(out))
        })
    }

    /// Stores the first `|lbas| * block_size` bytes of `src` to flash.
    pub fn store_to_flash(
        &self,
        src: Source<'_>,
        lbas: Range<u64>,
        path: PathKind,
    ) -> Result<CompletionEvent> {
        let mut st = self.lock();
        st.command(CommandKind::FlashStore, |st, seg| {
            let bs = st.device.block_size();
            let bytes = range_bytes(&lbas, bs);
            let (data, from_device) = match src {
                Source::Device(buf) => {
                    let slot = st.slot(buf)?;
                    if path == PathKind::PeerToPeer && !slot.buf.p2p_mapped {
                        return Err(Error::PathNotPermitted(
                            "peer-to-peer store from a buffer that is not p2p-mapped",
                        ));
                    }
                    (&slot.data, true)
                }
                Source::Host(h) => {
                    if path == PathKind::PeerToPeer {
                        return Err(Error::PathNotPermitted(
                            "host memory cannot take the peer-to-peer path",
                        ));
                    }
                    (&h.contents, false)
                }
            };
            if (data.len() as u64) < bytes {
                return Err(Error::MisalignedLength {
                    len: data.len(),
                    blocks: lbas.end - lbas.start,
                    block_size: bs,
                });
            }
            let data = data[..bytes as usize].to_vec();
            if from_device && path == PathKind::HostMediated && bytes > 0 {
                seg.push(st.device.bill_transfer(bytes, PathKind::HostMediated));
            }
            seg.push(st.device.flash_write(lbas, &data, path)?);
            Ok(())
        })
        .map(|(_, ev)| ev)
    }

    /// Rewrites one block from an on-device copy, bypassing interceptors.
    pub fn restore_block(&self, lba: u64, payload: Vec<u8>) -> Result<SimTime> {
        self.lock().device.restore_block(lba, payload)
    }

    /// Bills a transfer of `bytes` without moving data. Transfers are
    /// data-independent in the timing model, so benchmark repetitions use
    /// this after one functional run.
    pub fn profile_transfer(
        &self,
        bytes: u64,
        path: PathKind,
        kind: CommandKind,
    ) -> CompletionEvent {
        let mut st = self.lock();
        st.command(kind, |st, seg| {
            seg.push(st.device.bill_transfer(bytes, path));
            Ok(())
        })
        .expect("billing cannot fail")
        .1
    }

    // ---- kernels ----

    pub fn register_kernel(&self, kernel: Arc<dyn Kernel>) {
        self.lock()
            .kernels
            .insert(kernel.name().to_string(), kernel);
    }

    /// Runs a registered kernel on device buffers. Buffers may be larger
    /// than the operands; the kernel uses their prefixes. The event lasts the
    /// hardware kernel time.
    pub fn launch_kernel(
        &self,
        name: &str,
        cfg: &KernelConfig,
        shape: Shape,
        inputs: &[&DeviceBuffer],
        output: &DeviceBuffer,
    ) -> Result<CompletionEvent> {
        let mut st = self.lock();
        st.command(CommandKind::Kernel(name.to_string()), |st, seg| {
            let kernel = st.kernel(name)?;
            cfg.validate()?;
            let (in_sizes, out_size) = kernel.signature(&shape)?;
            if inputs.len() != in_sizes.len() {
                return Err(Error::BufferShapeMismatch(format!(
                    "{name} takes {} inputs",
                    in_sizes.len()
                )));
            }
            for (i, (buf, &want)) in inputs.iter().zip(&in_sizes).enumerate() {
                if st.slot(buf)?.buf.size < want {
                    return Err(Error::BufferShapeMismatch(format!(
                        "input {i} is {} bytes, needs {want}",
                        buf.size
                    )));
                }
            }
            if st.slot(output)?.buf.size < out_size {
                return Err(Error::BufferShapeMismatch(format!(
                    "output is {} bytes, needs {out_size}",
                    output.size
                )));
            }
            let cost = st.device.timing().kernel_time(
                kernel.work_dim(&shape),
                KernelMode::Hardware,
                cfg,
            )?;
            let result = {
                let views: Vec<&[u8]> = inputs
                    .iter()
                    .zip(&in_sizes)
                    .map(|(b, &n)| &st.buffers[&b.id].data[..n as usize])
                    .collect();
                kernel.execute(&shape, &views, KernelMode::Hardware)?
            };
            st.slot_mut(output)?.data[..result.len()].copy_from_slice(&result);
            st.device.advance(cost);
            seg.push(cost);
            Ok(())
        })
        .map(|(_, ev)| ev)
    }

    /// Runs the software variant of a kernel on host buffers.
    pub fn run_host_kernel(
        &self,
        name: &str,
        shape: Shape,
        inputs: &[&HostBuffer],
        billing: HostBilling,
    ) -> Result<(HostBuffer, CompletionEvent)> {
        let mut st = self.lock();
        st.command(CommandKind::HostKernel(name.to_string()), |st, seg| {
            let kernel = st.kernel(name)?;
            let (in_sizes, _) = kernel.signature(&shape)?;
            if inputs.len() != in_sizes.len()
                || inputs.iter().zip(&in_sizes).any(|(b, &s)| b.size() < s)
            {
                return Err(Error::BufferShapeMismatch(format!(
                    "host inputs do not match {name}"
                )));
            }
            let views: Vec<&[u8]> = inputs
                .iter()
                .zip(&in_sizes)
                .map(|(b, &n)| &b.as_slice()[..n as usize])
                .collect();
            let started = Instant::now();
            let out = kernel.execute(&shape, &views, KernelMode::Software)?;
            let cost = match billing {
                HostBilling::WallClock => SimTime::from_secs_f64(started.elapsed().as_secs_f64()),
                HostBilling::Simulated => st.device.timing().kernel_time(
                    kernel.work_dim(&shape),
                    KernelMode::Software,
                    &KernelConfig::default(),
                )?,
            };
            st.device.advance(cost);
            seg.push(cost);
            Ok(HostBuffer::new(out))
        })
    }

    /// Bills one kernel run without executing it. Kernels are pure, so a
    /// repeated launch on unchanged inputs reproduces the previous output.
    pub fn profile_kernel(
        &self,
        name: &str,
        cfg: &KernelConfig,
        shape: Shape,
        mode: KernelMode,
    ) -> Result<CompletionEvent> {
        let mut st = self.lock();
        let kind = match mode {
            KernelMode::Hardware => CommandKind::Kernel(name.to_string()),
            KernelMode::Software => CommandKind::HostKernel(name.to_string()),
        };
        st.command(kind, |st, seg| {
            let kernel = st.kernel(name)?;
            kernel.signature(&shape)?;
            let cost = st
                .device
                .timing()
                .kernel_time(kernel.work_dim(&shape), mode, cfg)?;
            st.device.advance(cost);
            seg.push(cost);
            Ok(())
        })
        .map(|(_, ev)| ev)
    }

    // ---- interception ----

    pub fn register_interceptor(
        &self,
        stage: HookStage,
        priority: i32,
        hook: Box<dyn IoHook>,
    ) -> InterceptorRegistration {
        let hook_id = self
            .lock()
            .device
            .hooks_mut()
            .register(stage, priority, hook);
        InterceptorRegistration {
            hook_id,
            stage,
            priority,
        }
    }

    pub fn unregister_interceptor(&self, hook_id: u64) -> Result<()> {
        self.lock().device.hooks_mut().unregister(hook_id)
    }
}
