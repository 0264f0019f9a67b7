//! Ransomware detection and recovery.
//!
//! A [`RansomGuard`] sits in the device's interceptor chain. Every block
//! access feeds an [`IoMonitor`]; every overwrite of a live block first
//! copies the old content into a [`ShadowStore`] over the on-device path,
//! so retention never touches host traffic. [`RansomGuard::recover_to`]
//! rolls overwritten blocks back to their content at a chosen instant.

mod monitor;
mod shadow;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

pub use monitor::{
    shannon_entropy, DetectionVerdict, IoFeatureWindow, IoMonitor, IoObservation, MonitorConfig,
    ThreatLevel,
};
pub use shadow::{ShadowEntry, ShadowStore};

use crate::api::{Csd, InterceptorRegistration};
use crate::device::{
    HookContext, HookStage, IoHook, ReadResponse, ReadVerdict, WriteRequest, WriteVerdict,
};
use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Reject writes with [`Error::DeviceFrozen`].
    Block,
    /// Accept writes but retain every pre-image.
    RetainAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    pub monitor: MonitorConfig,
    pub shadow_budget: u64,
    /// Retain pre-images on every overwrite, not only while frozen.
    pub retain_by_default: bool,
    pub freeze_policy: Option<FreezePolicy>,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            monitor: MonitorConfig::default(),
            shadow_budget: 256 << 20,
            retain_by_default: true,
            freeze_policy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    #[serde(rename = "target_ps")]
    pub target: SimTime,
    pub blocks_restored: u64,
    pub bytes_moved: u64,
    #[serde(rename = "elapsed_ps")]
    pub elapsed: SimTime,
    pub restored_lbas: Vec<u64>,
    /// Overwritten after the target with no retained content from before it.
    pub unrecoverable: Vec<u64>,
    /// Restored, but to an older version because the exact one was evicted.
    pub stale: Vec<u64>,
}

impl RecoveryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct GuardState {
    monitor: IoMonitor,
    shadow: ShadowStore,
    verdicts: Vec<DetectionVerdict>,
    retain_by_default: bool,
    policy: Option<FreezePolicy>,
    frozen: bool,
    /// Write times of every pre-image seen per LBA, retained or not.
    history: HashMap<u64, BTreeSet<SimTime>>,
    retention_time: SimTime,
}

impl GuardState {
    fn retaining(&self) -> bool {
        self.retain_by_default || (self.frozen && self.policy == Some(FreezePolicy::RetainAll))
    }

    fn record(&mut self, obs: IoObservation) {
        if let Some(v) = self.monitor.observe(obs) {
            if v.level == ThreatLevel::Ransomware && self.policy.is_some() {
                self.frozen = true;
            }
            self.verdicts.push(v);
        }
    }
}

struct GuardHook(Arc<Mutex<GuardState>>);

impl IoHook for GuardHook {
    fn on_write(&mut self, req: &WriteRequest<'_>, cx: &mut HookContext<'_>) -> WriteVerdict {
        let mut g = self.0.lock().unwrap();
        if g.frozen && g.policy == Some(FreezePolicy::Block) {
            return WriteVerdict::Reject;
        }
        let old = cx
            .stored(req.lba)
            .map(|b| (b.epoch, b.written_at, b.payload.clone()));
        let live = old.is_some();
        if let Some((epoch, written_at, payload)) = old {
            g.history.entry(req.lba).or_default().insert(written_at);
            if g.retaining() {
                let retained_at = cx.now();
                let d = cx.charge_intra_device(payload.len() as u64);
                g.retention_time += d;
                // The budget holds at least one block, checked at install.
                let _ = g.shadow.insert(
                    req.lba,
                    epoch,
                    ShadowEntry {
                        payload,
                        written_at,
                        retained_at,
                    },
                );
            }
        }
        g.record(IoObservation::write(req.lba, req.payload, live));
        WriteVerdict::Pass
    }

    fn on_read(&mut self, resp: &ReadResponse<'_>, _cx: &mut HookContext<'_>) -> ReadVerdict {
        self.0.lock().unwrap().record(IoObservation::read(resp.lba));
        ReadVerdict::Pass
    }
}

/// Detection and recovery service attached to one device.
pub struct RansomGuard {
    state: Arc<Mutex<GuardState>>,
    registrations: [InterceptorRegistration; 2],
}

impl RansomGuard {
    pub fn install(csd: &Csd, config: GuardConfig, priority: i32) -> Result<Self> {
        let bs = csd.block_size();
        if config.shadow_budget < bs as u64 {
            return Err(Error::ShadowBudgetExceeded(bs));
        }
        if config.monitor.window == 0 {
            return Err(Error::InvalidConfig(
                "monitor window must be non-zero".into(),
            ));
        }
        let state = Arc::new(Mutex::new(GuardState {
            monitor: IoMonitor::new(config.monitor),
            shadow: ShadowStore::new(config.shadow_budget),
            verdicts: Vec::new(),
            retain_by_default: config.retain_by_default,
            policy: config.freeze_policy,
            frozen: false,
            history: HashMap::new(),
            retention_time: SimTime::ZERO,
        }));
        let w = csd.register_interceptor(
            HookStage::PreWrite,
            priority,
            Box::new(GuardHook(state.clone())),
        );
        let r = csd.register_interceptor(
            HookStage::PostRead,
            priority,
            Box::new(GuardHook(state.clone())),
        );
        Ok(RansomGuard {
            state,
            registrations: [w, r],
        })
    }

    fn lock(&self) -> MutexGuard<'_, GuardState> {
        self.state.lock().unwrap()
    }

    pub fn registrations(&self) -> &[InterceptorRegistration] {
        &self.registrations
    }

    pub fn verdicts(&self) -> Vec<DetectionVerdict> {
        self.lock().verdicts.clone()
    }

    /// Sets the response to a ransomware verdict. `None` disables freezing
    /// and lifts an active freeze.
    pub fn freeze_on_verdict(&self, policy: Option<FreezePolicy>) {
        let mut g = self.lock();
        g.policy = policy;
        if policy.is_none() {
            g.frozen = false;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.lock().frozen
    }

    /// Operator release: writes pass again until the next verdict.
    pub fn release(&self) {
        self.lock().frozen = false;
    }

    pub fn shadow_entries(&self) -> usize {
        self.lock().shadow.len()
    }

    pub fn shadow_bytes(&self) -> u64 {
        self.lock().shadow.used()
    }

    pub fn evictions(&self) -> u64 {
        self.lock().shadow.evictions()
    }

    /// Total device time spent copying pre-images.
    pub fn retention_time(&self) -> SimTime {
        self.lock().retention_time
    }

    /// Newest retained pre-image of `lba`, if any.
    pub fn latest_preimage(&self, lba: u64) -> Option<ShadowEntry> {
        self.lock()
            .shadow
            .versions(lba)
            .next_back()
            .map(|(_, e)| e.clone())
    }

    /// Copies the live content of `lba` into the shadow store now and
    /// returns the copy's duration. Unwritten blocks cost nothing.
    pub fn retain_preimage(&self, csd: &Csd, lba: u64) -> Result<SimTime> {
        let copied = csd.with_device(|d| {
            let b = d.flash().get(lba)?.clone();
            let at = d.now();
            Some((b, at, d.charge_intra_device(d.block_size() as u64)))
        });
        let Some((b, retained_at, elapsed)) = copied else {
            return Ok(SimTime::ZERO);
        };
        let mut g = self.lock();
        g.history.entry(lba).or_default().insert(b.written_at);
        g.retention_time += elapsed;
        g.shadow.insert(
            lba,
            b.epoch,
            ShadowEntry {
                payload: b.payload,
                written_at: b.written_at,
                retained_at,
            },
        )?;
        Ok(elapsed)
    }

    /// Rolls every block written after `t` back to the newest retained
    /// content written at or before `t`. Blocks first written after `t` are
    /// left alone.
    pub fn recover_to(&self, csd: &Csd, t: SimTime) -> Result<RecoveryReport> {
        let changed: Vec<u64> = csd.with_device(|d| {
            d.flash()
                .populated()
                .filter(|(_, b)| b.written_at > t)
                .map(|(l, _)| l)
                .collect()
        });
        let mut plan = Vec::new();
        let mut unrecoverable = Vec::new();
        let mut stale = Vec::new();
        {
            let g = self.lock();
            for lba in changed {
                let Some(live_at_t) = g.history.get(&lba).and_then(|h| h.range(..=t).next_back())
                else {
                    continue;
                };
                match g.shadow.newest_at_or_before(lba, t) {
                    Some(e) => {
                        if e.written_at != *live_at_t {
                            stale.push(lba);
                        }
                        plan.push((lba, e.payload.clone()));
                    }
                    None => unrecoverable.push(lba),
                }
            }
        }
        if plan.is_empty() && unrecoverable.is_empty() {
            return Err(Error::NothingToRecover);
        }
        let mut elapsed = SimTime::ZERO;
        let mut bytes_moved = 0;
        let mut restored_lbas = Vec::with_capacity(plan.len());
        for (lba, payload) in plan {
            bytes_moved += payload.len() as u64;
            elapsed += csd.restore_block(lba, payload)?;
            restored_lbas.push(lba);
        }
        Ok(RecoveryReport {
            target: t,
            blocks_restored: restored_lbas.len() as u64,
            bytes_moved,
            elapsed,
            restored_lbas,
            unrecoverable,
            stale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api::{HostBuffer, Source};
    use crate::device::{DeviceConfig, PathKind};

    const BS: usize = 4096;

    fn csd() -> Csd {
        Csd::new(&DeviceConfig {
            jitter_fraction: 0.0,
            num_blocks: 4096,
            ..DeviceConfig::default()
        })
        .unwrap()
    }

    fn write(c: &Csd, lba: u64, fill: u8) -> Result<()> {
        c.store_to_flash(
            Source::Host(&HostBuffer::new(vec![fill; BS])),
            lba..lba + 1,
            PathKind::HostMediated,
        )
        .map(|_| ())
    }

    #[test]
    fn retain_then_overwrite_keeps_original() {
        let c = csd();
        let g = RansomGuard::install(&c, GuardConfig::default(), 0).unwrap();
        write(&c, 3, 0xAA).unwrap();
        write(&c, 3, 0xBB).unwrap();
        assert_eq!(g.latest_preimage(3).unwrap().payload, vec![0xAA; BS]);
        assert_eq!(c.inspect_block(3), vec![0xBB; BS]);
    }

    #[test]
    fn retention_costs_one_p2p_block_and_no_host_bytes() {
        let c = csd();
        write(&c, 0, 1).unwrap();
        let g = RansomGuard::install(&c, GuardConfig::default(), 0).unwrap();
        let host_before = c.traffic().host_bytes;
        let d = g.retain_preimage(&c, 0).unwrap();
        let expected = c.with_device(|d| d.timing().transfer_time(BS as u64, PathKind::PeerToPeer));
        assert_eq!(d, expected);
        assert_eq!(c.traffic().host_bytes, host_before);
        assert_eq!(c.traffic().intra_device_bytes, BS as u64);
    }

    #[test]
    fn recovery_to_after_last_write_has_nothing_to_do() {
        let c = csd();
        let g = RansomGuard::install(&c, GuardConfig::default(), 0).unwrap();
        write(&c, 1, 1).unwrap();
        write(&c, 1, 2).unwrap();
        assert!(matches!(
            g.recover_to(&c, c.now()),
            Err(Error::NothingToRecover)
        ));
    }

    #[test]
    fn recovery_rolls_back_and_reports_evictions() {
        let c = csd();
        let g = RansomGuard::install(
            &c,
            GuardConfig {
                shadow_budget: 90 * BS as u64,
                ..GuardConfig::default()
            },
            0,
        )
        .unwrap();
        for lba in 0..100 {
            write(&c, lba, lba as u8).unwrap();
        }
        let t = c.now();
        c.advance_to(t + SimTime::from_micros(1));
        for lba in 0..100 {
            write(&c, lba, 0xEE).unwrap();
        }
        let host_before = c.traffic().host_bytes;
        let r = g.recover_to(&c, t).unwrap();
        assert_eq!(r.blocks_restored, 90);
        assert_eq!(r.unrecoverable, (0..10).collect::<Vec<_>>());
        assert_eq!(r.bytes_moved, 90 * BS as u64);
        assert_eq!(c.traffic().host_bytes, host_before);
        for lba in 10..100 {
            assert_eq!(c.inspect_block(lba), vec![lba as u8; BS]);
        }
    }

    #[test]
    fn block_policy_rejects_until_release() {
        let c = csd();
        let cfg = GuardConfig {
            monitor: MonitorConfig {
                window: 4,
                ..MonitorConfig::default()
            },
            freeze_policy: Some(FreezePolicy::Block),
            ..GuardConfig::default()
        };
        let noise: Vec<u8> = (0..BS).map(|i| (i * 7 + i / 256) as u8).collect();
        for lba in 0..2 {
            write(&c, lba, 0).unwrap();
        }
        let g = RansomGuard::install(&c, cfg, 0).unwrap();
        for lba in 0..2 {
            c.load_to_host(lba..lba + 1).unwrap();
            c.store_to_flash(
                Source::Host(&HostBuffer::new(noise.clone())),
                lba..lba + 1,
                PathKind::HostMediated,
            )
            .unwrap();
        }
        assert_eq!(g.verdicts().last().unwrap().level, ThreatLevel::Ransomware);
        assert!(g.is_frozen());
        assert!(matches!(
            write(&c, 9, 1),
            Err(Error::DeviceFrozen { lba: 9 })
        ));
        g.release();
        write(&c, 9, 1).unwrap();
    }

    #[test]
    fn retain_all_policy_retains_while_frozen() {
        let c = csd();
        let cfg = GuardConfig {
            monitor: MonitorConfig {
                window: 2,
                ransomware_threshold: 0.0,
                ..MonitorConfig::default()
            },
            retain_by_default: false,
            freeze_policy: Some(FreezePolicy::RetainAll),
            ..GuardConfig::default()
        };
        let g = RansomGuard::install(&c, cfg, 0).unwrap();
        write(&c, 0, 1).unwrap();
        write(&c, 0, 2).unwrap();
        assert!(g.is_frozen());
        assert_eq!(g.shadow_entries(), 0);
        for i in 0..3 {
            write(&c, 0, 3 + i).unwrap();
            assert_eq!(g.shadow_entries(), i as usize + 1);
        }
    }
}
