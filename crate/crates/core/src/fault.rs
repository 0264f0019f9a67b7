//! Rule-driven fault injection at the device I/O boundary.
//!
//! A [`FaultPlan`] is installed as one pre-write and one post-read
//! interceptor. Each rule matches accesses by LBA and direction, counts its
//! own matching accesses, and fires according to its occurrence policy.
//! Every applied action is appended to the [`InjectionLog`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::api::{Csd, InterceptorRegistration};
use crate::device::{
    HookContext, HookStage, IoHook, ReadResponse, ReadVerdict, WriteRequest, WriteVerdict,
};
use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbaMatch {
    Any,
    /// Half-open `start..end`.
    Range {
        start: u64,
        end: u64,
    },
    Set(BTreeSet<u64>),
}

impl LbaMatch {
    pub fn contains(&self, lba: u64) -> bool {
        match self {
            LbaMatch::Any => true,
            LbaMatch::Range { start, end } => (*start..*end).contains(&lba),
            LbaMatch::Set(s) => s.contains(&lba),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoOp {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpMatch {
    Read,
    Write,
    Both,
}

impl OpMatch {
    fn matches(self, op: IoOp) -> bool {
        matches!(
            (self, op),
            (OpMatch::Both, _) | (OpMatch::Read, IoOp::Read) | (OpMatch::Write, IoOp::Write)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occurrence {
    Every,
    /// Only the n-th matching access (1-based).
    Nth(u64),
    /// Every matching access after the first n.
    After(u64),
    Probability(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    BitFlip {
        byte_offset: usize,
        bit: u8,
    },
    ZeroBlock,
    DropWrite,
    /// Torn write: the new prefix lands, the old suffix stays.
    ShornWrite {
        prefix_fraction: f64,
    },
    ReadError {
        code: u16,
    },
    Delay {
        ns: u64,
    },
}

impl FaultAction {
    fn allowed_on(&self, op: IoOp) -> bool {
        match self {
            FaultAction::DropWrite | FaultAction::ShornWrite { .. } => op == IoOp::Write,
            FaultAction::ReadError { .. } => op == IoOp::Read,
            _ => true,
        }
    }

    /// Whether the action can change what ends up on flash.
    pub fn mutates_media(&self) -> bool {
        !matches!(
            self,
            FaultAction::Delay { .. } | FaultAction::ReadError { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub lbas: LbaMatch,
    pub op: OpMatch,
    pub occurrence: Occurrence,
}

fn enabled_default() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultRule {
    pub rule_id: u64,
    pub trigger: Trigger,
    pub action: FaultAction,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

impl FaultRule {
    pub fn validate(&self, block_size: usize) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidRule {
                rule_id: self.rule_id,
                reason,
            })
        };
        match self.action {
            FaultAction::BitFlip { byte_offset, bit } => {
                if byte_offset >= block_size {
                    return bad(format!(
                        "byte_offset {byte_offset} >= block size {block_size}"
                    ));
                }
                if bit > 7 {
                    return bad(format!("bit {bit} > 7"));
                }
            }
            FaultAction::ShornWrite { prefix_fraction: f } if !(f > 0.0 && f < 1.0) => {
                return bad(format!("prefix_fraction {f} outside (0, 1)"));
            }
            _ => {}
        }
        match self.trigger.occurrence {
            Occurrence::Nth(0) => return bad("nth occurrence is 1-based".into()),
            Occurrence::Probability(p) if !(0.0..=1.0).contains(&p) => {
                return bad(format!("probability {p} outside [0, 1]"));
            }
            _ => {}
        }
        if let LbaMatch::Range { start, end } = self.trigger.lbas {
            if start >= end {
                return bad("empty LBA range".into());
            }
        }
        let ops: &[IoOp] = match self.trigger.op {
            OpMatch::Read => &[IoOp::Read],
            OpMatch::Write => &[IoOp::Write],
            OpMatch::Both => &[IoOp::Read, IoOp::Write],
        };
        if let Some(op) = ops.iter().find(|&&op| !self.action.allowed_on(op)) {
            return bad(format!("{:?} cannot apply to {op:?} accesses", self.action));
        }
        Ok(())
    }
}

/// Fault-plan file: `{"seed": <u64>, "rules": [<FaultRule>, ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub seed: u64,
    pub rules: Vec<FaultRule>,
}

impl FaultPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self, block_size: usize) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.rules {
            r.validate(block_size)?;
            if !ids.insert(r.rule_id) {
                return Err(Error::InvalidRule {
                    rule_id: r.rule_id,
                    reason: "duplicate rule_id".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    /// Device time in picoseconds.
    #[serde(rename = "sim_time_ps")]
    pub sim_time: SimTime,
    pub rule_id: u64,
    pub lba: u64,
    pub op: IoOp,
    pub action: FaultAction,
}

/// Append-only record of applied actions, in device timeline order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionLog {
    pub records: Vec<InjectionRecord>,
}

impl InjectionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

struct RuleState {
    rule: FaultRule,
    seen: u64,
    rng: ChaCha8Rng,
}

struct Engine {
    rules: Vec<RuleState>,
    log: InjectionLog,
}

impl Engine {
    fn new(plan: &FaultPlan) -> Self {
        let rules = plan
            .rules
            .iter()
            .map(|rule| RuleState {
                rule: rule.clone(),
                seen: 0,
                rng: ChaCha8Rng::seed_from_u64(
                    plan.seed ^ rule.rule_id.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ),
            })
            .collect();
        Engine {
            rules,
            log: InjectionLog::default(),
        }
    }

    /// Advances counters of every rule matching the access and returns the
    /// indices of those that fire.
    fn firing(&mut self, lba: u64, op: IoOp) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, st) in self.rules.iter_mut().enumerate() {
            let t = &st.rule.trigger;
            if !st.rule.enabled || !t.op.matches(op) || !t.lbas.contains(lba) {
                continue;
            }
            st.seen += 1;
            let fire = match t.occurrence {
                Occurrence::Every => true,
                Occurrence::Nth(n) => st.seen == n,
                Occurrence::After(n) => st.seen > n,
                Occurrence::Probability(p) => st.rng.gen::<f64>() < p,
            };
            if fire {
                out.push(i);
            }
        }
        out
    }

    fn record(&mut self, cx: &HookContext<'_>, i: usize, lba: u64, op: IoOp) {
        let r = &self.rules[i].rule;
        self.log.records.push(InjectionRecord {
            sim_time: cx.now(),
            rule_id: r.rule_id,
            lba,
            op,
            action: r.action,
        });
    }

    fn on_write(&mut self, req: &WriteRequest<'_>, cx: &mut HookContext<'_>) -> WriteVerdict {
        let firing = self.firing(req.lba, IoOp::Write);
        if firing.is_empty() {
            return WriteVerdict::Pass;
        }
        let mut payload = req.payload.to_vec();
        for i in firing {
            self.record(cx, i, req.lba, IoOp::Write);
            match self.rules[i].rule.action {
                FaultAction::BitFlip { byte_offset, bit } => payload[byte_offset] ^= 1 << bit,
                FaultAction::ZeroBlock => payload.fill(0),
                FaultAction::DropWrite => return WriteVerdict::Drop,
                FaultAction::ShornWrite { prefix_fraction } => {
                    let keep = ((prefix_fraction * payload.len() as f64).ceil() as usize)
                        .min(payload.len());
                    match cx.stored(req.lba) {
                        Some(old) => payload[keep..].copy_from_slice(&old.payload[keep..]),
                        None => payload[keep..].fill(0),
                    }
                }
                FaultAction::Delay { ns } => cx.delay(SimTime::from_nanos(ns)),
                FaultAction::ReadError { .. } => unreachable!("rejected by validation"),
            }
        }
        WriteVerdict::Mutate(payload)
    }

    fn on_read(&mut self, resp: &ReadResponse<'_>, cx: &mut HookContext<'_>) -> ReadVerdict {
        let firing = self.firing(resp.lba, IoOp::Read);
        if firing.is_empty() {
            return ReadVerdict::Pass;
        }
        let mut payload = resp.payload.to_vec();
        for i in firing {
            self.record(cx, i, resp.lba, IoOp::Read);
            match self.rules[i].rule.action {
                FaultAction::BitFlip { byte_offset, bit } => payload[byte_offset] ^= 1 << bit,
                FaultAction::ZeroBlock => payload.fill(0),
                FaultAction::ReadError { code } => return ReadVerdict::Fail(code),
                FaultAction::Delay { ns } => cx.delay(SimTime::from_nanos(ns)),
                FaultAction::DropWrite | FaultAction::ShornWrite { .. } => {
                    unreachable!("rejected by validation")
                }
            }
        }
        ReadVerdict::Mutate(payload)
    }
}

struct EngineHook(Arc<Mutex<Engine>>);

impl IoHook for EngineHook {
    fn on_write(&mut self, req: &WriteRequest<'_>, cx: &mut HookContext<'_>) -> WriteVerdict {
        self.0.lock().unwrap().on_write(req, cx)
    }

    fn on_read(&mut self, resp: &ReadResponse<'_>, cx: &mut HookContext<'_>) -> ReadVerdict {
        self.0.lock().unwrap().on_read(resp, cx)
    }
}

/// An installed fault plan.
pub struct FaultPlanHandle {
    engine: Arc<Mutex<Engine>>,
    registrations: [InterceptorRegistration; 2],
}

impl FaultPlanHandle {
    pub fn log(&self) -> InjectionLog {
        self.engine.lock().unwrap().log.clone()
    }

    pub fn registrations(&self) -> &[InterceptorRegistration] {
        &self.registrations
    }

    pub fn uninstall(self, csd: &Csd) -> Result<InjectionLog> {
        for r in &self.registrations {
            csd.unregister_interceptor(r.hook_id)?;
        }
        Ok(self.log())
    }
}

/// Validates `plan` and hooks it into `csd` at `priority`.
pub fn install_rules(csd: &Csd, plan: &FaultPlan, priority: i32) -> Result<FaultPlanHandle> {
    plan.validate(csd.block_size())?;
    let engine = Arc::new(Mutex::new(Engine::new(plan)));
    let w = csd.register_interceptor(
        HookStage::PreWrite,
        priority,
        Box::new(EngineHook(engine.clone())),
    );
    let r = csd.register_interceptor(
        HookStage::PostRead,
        priority,
        Box::new(EngineHook(engine.clone())),
    );
    Ok(FaultPlanHandle {
        engine,
        registrations: [w, r],
    })
}

pub type BlockDigest = [u8; 32];

pub fn digest(block: &[u8]) -> BlockDigest {
    Sha256::digest(block).into()
}

/// Content digests of every written block, read out of band.
pub fn record_digests(csd: &Csd) -> BTreeMap<u64, BlockDigest> {
    csd.with_device(|d| {
        d.flash()
            .populated()
            .map(|(lba, b)| (lba, digest(&b.payload)))
            .collect()
    })
}

/// LBAs whose flash content no longer matches `expected`. LBAs missing from
/// `expected` are compared against a zero block.
pub fn checksum_scan(csd: &Csd, expected: &BTreeMap<u64, BlockDigest>) -> Vec<u64> {
    let current = record_digests(csd);
    let zero = digest(&vec![0u8; csd.block_size()]);
    let lbas: BTreeSet<u64> = expected.keys().chain(current.keys()).copied().collect();
    lbas.into_iter()
        .filter(|lba| expected.get(lba).unwrap_or(&zero) != current.get(lba).unwrap_or(&zero))
        .collect()
}
