//! Write-pattern monitoring over tumbling windows of I/O requests.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::fault::IoOp;

/// Shannon entropy of `data` in bits per byte. Empty input has entropy 0.
pub fn shannon_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.clamp(0.0, 8.0)
}

/// One observed block access.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IoObservation {
    pub op: IoOp,
    pub lba: u64,
    /// Entropy of the written payload; ignored for reads.
    pub entropy: f64,
    /// Whether a write replaces content that was already live.
    pub overwrites_live: bool,
}

impl IoObservation {
    pub fn read(lba: u64) -> Self {
        IoObservation {
            op: IoOp::Read,
            lba,
            entropy: 0.0,
            overwrites_live: false,
        }
    }

    pub fn write(lba: u64, payload: &[u8], overwrites_live: bool) -> Self {
        IoObservation {
            op: IoOp::Write,
            lba,
            entropy: shannon_entropy(payload),
            overwrites_live,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoFeatureWindow {
    pub window_len: usize,
    pub reads: usize,
    pub writes: usize,
    /// Mean entropy of written payloads, bits per byte.
    pub mean_write_entropy: f64,
    /// Overwrites of live LBAs over writes.
    pub overwrite_ratio: f64,
    /// Writes whose LBA was read at most one window earlier with no write in
    /// between.
    pub read_then_overwrite_count: usize,
    pub distinct_lba_span: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatLevel {
    Benign,
    Suspicious,
    Ransomware,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub window_index: u64,
    /// Number of requests observed when the window closed.
    pub requests_seen: u64,
    pub level: ThreatLevel,
    pub score: f64,
    pub features: IoFeatureWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub window: usize,
    pub entropy_weight: f64,
    pub overwrite_weight: f64,
    pub read_then_overwrite_weight: f64,
    pub suspicious_threshold: f64,
    pub ransomware_threshold: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            window: 64,
            entropy_weight: 0.5,
            overwrite_weight: 0.3,
            read_then_overwrite_weight: 0.2,
            suspicious_threshold: 0.5,
            ransomware_threshold: 0.7,
        }
    }
}

impl MonitorConfig {
    pub fn score(&self, f: &IoFeatureWindow) -> f64 {
        let s = self.entropy_weight * f.mean_write_entropy / 8.0
            + self.overwrite_weight * f.overwrite_ratio
            + self.read_then_overwrite_weight * f.read_then_overwrite_count as f64
                / f.window_len as f64;
        s.clamp(0.0, 1.0)
    }

    pub fn level(&self, score: f64) -> ThreatLevel {
        if score >= self.ransomware_threshold {
            ThreatLevel::Ransomware
        } else if score >= self.suspicious_threshold {
            ThreatLevel::Suspicious
        } else {
            ThreatLevel::Benign
        }
    }
}

/// Emits one verdict per `window` observed requests.
#[derive(Clone, Debug)]
pub struct IoMonitor {
    config: MonitorConfig,
    /// Current window: each access plus its read-then-overwrite flag.
    current: Vec<(IoObservation, bool)>,
    /// LBA to request index of its latest read not yet followed by a write.
    pending_reads: HashMap<u64, u64>,
    seen: u64,
    windows: u64,
}

impl IoMonitor {
    pub fn new(config: MonitorConfig) -> Self {
        assert!(config.window > 0, "monitor window must be non-zero");
        IoMonitor {
            current: Vec::with_capacity(config.window),
            config,
            pending_reads: HashMap::new(),
            seen: 0,
            windows: 0,
        }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn requests_seen(&self) -> u64 {
        self.seen
    }

    /// Records one access; returns a verdict when it completes a window.
    pub fn observe(&mut self, obs: IoObservation) -> Option<DetectionVerdict> {
        let idx = self.seen;
        self.seen += 1;
        let rto = match obs.op {
            IoOp::Read => {
                self.pending_reads.insert(obs.lba, idx);
                false
            }
            IoOp::Write => {
                matches!(self.pending_reads.remove(&obs.lba), Some(r) if idx - r <= self.config.window as u64)
            }
        };
        self.current.push((obs, rto));
        if self.current.len() < self.config.window {
            return None;
        }
        let features = window_features(&self.current);
        self.current.clear();
        let w = self.config.window as u64;
        self.pending_reads.retain(|_, r| idx - *r < w);
        let score = self.config.score(&features);
        let verdict = DetectionVerdict {
            window_index: self.windows,
            requests_seen: self.seen,
            level: self.config.level(score),
            score,
            features,
        };
        self.windows += 1;
        Some(verdict)
    }
}

fn window_features(window: &[(IoObservation, bool)]) -> IoFeatureWindow {
    let writes: Vec<&(IoObservation, bool)> =
        window.iter().filter(|(o, _)| o.op == IoOp::Write).collect();
    let n_w = writes.len();
    let (mean_write_entropy, overwrite_ratio) = if n_w == 0 {
        (0.0, 0.0)
    } else {
        let h: f64 = writes.iter().map(|(o, _)| o.entropy).sum();
        let ow = writes.iter().filter(|(o, _)| o.overwrites_live).count();
        (h / n_w as f64, ow as f64 / n_w as f64)
    };
    IoFeatureWindow {
        window_len: window.len(),
        reads: window.len() - n_w,
        writes: n_w,
        mean_write_entropy,
        overwrite_ratio,
        read_then_overwrite_count: writes.iter().filter(|(_, rto)| *rto).count(),
        distinct_lba_span: window
            .iter()
            .map(|(o, _)| o.lba)
            .collect::<BTreeSet<_>>()
            .len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_extremes() {
        assert_eq!(shannon_entropy(&[7u8; 4096]), 0.0);
        let all: Vec<u8> = (0..=255).collect();
        assert!((shannon_entropy(&all) - 8.0).abs() < 1e-12);
        assert!((shannon_entropy(&[0, 1, 0, 1]) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut b = vec![0u8; 4096];
            rng.fill_bytes(&mut b);
            assert!(shannon_entropy(&b) >= 7.8);
        }
    }

    #[test]
    fn zero_writes_to_fresh_lbas_are_benign() {
        let mut m = IoMonitor::new(MonitorConfig::default());
        let zero = [0u8; 4096];
        let verdicts: Vec<_> = (0..64)
            .filter_map(|lba| m.observe(IoObservation::write(lba, &zero, false)))
            .collect();
        assert_eq!(verdicts.len(), 1);
        assert_eq!(verdicts[0].score, 0.0);
        assert_eq!(verdicts[0].level, ThreatLevel::Benign);
        assert_eq!(verdicts[0].features.distinct_lba_span, 64);
    }

    #[test]
    fn read_then_random_overwrite_scores_as_ransomware() {
        let mut m = IoMonitor::new(MonitorConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut out = Vec::new();
        for lba in 0..32 {
            let mut b = vec![0u8; 4096];
            rng.fill_bytes(&mut b);
            out.extend(m.observe(IoObservation::read(lba)));
            out.extend(m.observe(IoObservation::write(lba, &b, true)));
        }
        let v = &out[0];
        assert_eq!(v.features.read_then_overwrite_count, 32);
        assert_eq!(v.features.overwrite_ratio, 1.0);
        let expect = 0.5 * v.features.mean_write_entropy / 8.0 + 0.3 + 0.2 * 0.5;
        assert!((v.score - expect).abs() < 1e-12);
        assert_eq!(v.level, ThreatLevel::Ransomware);
    }

    #[test]
    fn stale_reads_do_not_count() {
        let mut m = IoMonitor::new(MonitorConfig {
            window: 4,
            ..MonitorConfig::default()
        });
        m.observe(IoObservation::read(1));
        for lba in 10..13 {
            m.observe(IoObservation::read(lba));
        }
        for lba in 20..23 {
            m.observe(IoObservation::read(lba));
        }
        let v = m.observe(IoObservation::write(1, &[0; 8], true)).unwrap();
        assert_eq!(v.features.read_then_overwrite_count, 0);
    }

    #[test]
    fn levels_follow_thresholds() {
        let c = MonitorConfig::default();
        assert_eq!(c.level(0.49), ThreatLevel::Benign);
        assert_eq!(c.level(0.5), ThreatLevel::Suspicious);
        assert_eq!(c.level(0.7), ThreatLevel::Ransomware);
        let mut last = ThreatLevel::Benign;
        for i in 0..=100 {
            let l = c.level(i as f64 / 100.0);
            assert!(l >= last);
            last = l;
        }
    }
}
