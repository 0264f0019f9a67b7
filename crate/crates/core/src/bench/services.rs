//! Trace-driven runs of the fault-injection and ransomware services.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::{replay, IoTraceRecord, ReplayOutcome};
use crate::api::Csd;
use crate::device::DeviceConfig;
use crate::error::Result;
use crate::fault::{
    checksum_scan, digest, install_rules, BlockDigest, FaultPlan, InjectionLog, IoOp,
};
use crate::ransom::{DetectionVerdict, GuardConfig, RansomGuard, RecoveryReport};
use crate::time::SimTime;

/// Digests the trace's writes would leave on flash without interference.
pub fn expected_digests(
    records: &[IoTraceRecord],
    block_size: usize,
) -> Result<BTreeMap<u64, BlockDigest>> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.op == IoOp::Write) {
        let p = r.payload(block_size)?;
        for (i, block) in p.chunks_exact(block_size).enumerate() {
            out.insert(r.lba + i as u64, digest(block));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiReport {
    pub log: InjectionLog,
    /// LBAs whose content differs from the fault-free replay.
    pub corrupted: Vec<u64>,
    pub replay: ReplayOutcome,
}

/// Replays `workload` on a fresh device with `plan` installed.
pub fn fi_run(
    device: &DeviceConfig,
    plan: &FaultPlan,
    workload: &[IoTraceRecord],
) -> Result<FiReport> {
    let csd = Csd::new(device)?;
    let handle = install_rules(&csd, plan, 0)?;
    let outcome = replay(&csd, workload)?;
    let expected = expected_digests(workload, csd.block_size())?;
    Ok(FiReport {
        log: handle.log(),
        corrupted: checksum_scan(&csd, &expected),
        replay: outcome,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdrReport {
    pub verdicts: Vec<DetectionVerdict>,
    pub recovery: Option<RecoveryReport>,
    pub replay: ReplayOutcome,
}

/// Replays `trace` under a ransomware guard, optionally rolling back to
/// `recover_to` afterwards. Returns the device for inspection.
pub fn rdr_replay(
    device: &DeviceConfig,
    guard: GuardConfig,
    trace: &[IoTraceRecord],
    recover_to: Option<SimTime>,
) -> Result<(RdrReport, Csd)> {
    let csd = Csd::new(device)?;
    let g = RansomGuard::install(&csd, guard, 0)?;
    let outcome = replay(&csd, trace)?;
    let recovery = recover_to.map(|t| g.recover_to(&csd, t)).transpose()?;
    Ok((
        RdrReport {
            verdicts: g.verdicts(),
            recovery,
            replay: outcome,
        },
        csd,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::trace::{attack_trace, benign_trace};
    use crate::fault::{FaultAction, FaultRule, LbaMatch, Occurrence, OpMatch, Trigger};
    use crate::ransom::ThreatLevel;

    fn cfg() -> DeviceConfig {
        DeviceConfig {
            num_blocks: 4096,
            ..DeviceConfig::default()
        }
    }

    #[test]
    fn empty_plan_gives_empty_log() {
        let r = fi_run(
            &cfg(),
            &FaultPlan::default(),
            &benign_trace(20, 0, 4096, 1000),
        )
        .unwrap();
        assert!(r.log.is_empty());
        assert!(r.corrupted.is_empty());
    }

    #[test]
    fn zero_block_on_lba_7_is_reported() {
        let plan = FaultPlan {
            seed: 1,
            rules: vec![FaultRule {
                rule_id: 1,
                trigger: Trigger {
                    lbas: LbaMatch::Set([7].into()),
                    op: OpMatch::Write,
                    occurrence: Occurrence::Every,
                },
                action: FaultAction::ZeroBlock,
                enabled: true,
            }],
        };
        let r = fi_run(&cfg(), &plan, &benign_trace(20, 0, 4096, 1000)).unwrap();
        assert_eq!(r.corrupted, vec![7]);
        assert_eq!(r.log.len(), 1);
    }

    #[test]
    fn attack_is_flagged_and_rolled_back() {
        let (trace, onset) = attack_trace(64, 4096, 100_000, 5);
        let t = SimTime::from_nanos(trace[onset as usize].time_ns);
        let (report, csd) = rdr_replay(&cfg(), GuardConfig::default(), &trace, Some(t)).unwrap();
        assert!(report
            .verdicts
            .iter()
            .any(|v| v.level == ThreatLevel::Ransomware));
        assert_eq!(report.recovery.unwrap().blocks_restored, 64);
        let expected = expected_digests(&trace[..onset as usize], 4096).unwrap();
        assert!(checksum_scan(&csd, &expected).is_empty());
    }
}
