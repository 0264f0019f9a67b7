//! Transfer and kernel cost model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::time::SimTime;

/// Which route a flash transfer takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Flash to device DRAM without touching host memory.
    PeerToPeer,
    /// Flash to host memory (and on to the device, when the target is a
    /// device buffer) through the host's I/O stack.
    HostMediated,
}

/// Linear cost model of one data path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPath {
    pub kind: PathKind,
    /// Bytes per second.
    pub bandwidth: f64,
    pub fixed_overhead: SimTime,
    /// Extra bounce-buffer copy cost on the host, in bytes per second.
    /// Ignored for peer-to-peer transfers.
    pub host_copy_bandwidth: Option<f64>,
}

impl TransferPath {
    pub fn new(kind: PathKind, bandwidth: f64, fixed_overhead: SimTime) -> Self {
        TransferPath {
            kind,
            bandwidth,
            fixed_overhead,
            host_copy_bandwidth: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |bw: f64, what: &str| {
            if bw.is_nan() || bw <= 0.0 || picos_per_byte(bw) == 0 {
                Err(Error::InvalidConfig(format!(
                    "{what} {bw} B/s must be positive and at most 2e12 B/s"
                )))
            } else {
                Ok(())
            }
        };
        check(self.bandwidth, "bandwidth")?;
        if let Some(bw) = self.host_copy_bandwidth {
            check(bw, "host copy bandwidth")?;
        }
        Ok(())
    }

    /// Per-byte cost in whole picoseconds.
    pub fn picos_per_byte(&self) -> u64 {
        picos_per_byte(self.bandwidth)
    }

    /// Nominal (jitter-free) duration of moving `bytes` over this path.
    pub fn transfer_time(&self, bytes: u64) -> SimTime {
        let mut ps = self.fixed_overhead.as_picos() + bytes * self.picos_per_byte();
        if self.kind == PathKind::HostMediated {
            if let Some(bw) = self.host_copy_bandwidth {
                ps += bytes * picos_per_byte(bw);
            }
        }
        SimTime(ps)
    }
}

fn picos_per_byte(bandwidth: f64) -> u64 {
    (1e12 / bandwidth).round() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Hardware,
    Software,
}

/// Calibrated timing model of the device.
///
/// Kernel durations interpolate an anchor table linearly in `n^3` (the
/// work of a square matrix product). Below the first anchor the segment
/// slope is clamped so the curve stays positive; above the last anchor the
/// final segment is extended. Hardware durations are further scaled by
/// `(unroll_reference / unroll_factor)^unroll_exponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub p2p: TransferPath,
    pub host: TransferPath,
    /// `(matrix dim, seconds)`, sorted by dim.
    pub hw_kernel_anchors: Vec<(usize, f64)>,
    pub sw_kernel_anchors: Vec<(usize, f64)>,
    pub unroll_reference: u32,
    pub unroll_exponent: f64,
    /// Multiplicative transfer jitter, uniform in `[1 - j, 1 + j]`.
    pub jitter_fraction: f64,
    /// Largest square dimension the hardware kernel accepts.
    pub max_hardware_dim: usize,
}

/// Bytes held by an `n x n` matrix of 32-bit elements.
pub fn matrix_bytes(n: usize) -> u64 {
    (n as u64) * (n as u64) * 4
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            p2p: TransferPath::new(PathKind::PeerToPeer, 3e9, SimTime::from_micros(30)),
            host: TransferPath::new(PathKind::HostMediated, 3e9, SimTime::from_micros(30)),
            hw_kernel_anchors: vec![(384, 0.018), (1536, 2.054)],
            sw_kernel_anchors: vec![(384, 0.062), (1536, 2.876)],
            unroll_reference: 256,
            unroll_exponent: 0.8,
            jitter_fraction: 0.01,
            max_hardware_dim: 1536,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<()> {
        if self.p2p.kind != PathKind::PeerToPeer || self.host.kind != PathKind::HostMediated {
            return Err(Error::InvalidConfig(
                "transfer path kinds are swapped".into(),
            ));
        }
        self.p2p.validate()?;
        self.host.validate()?;
        for (name, anchors) in [
            ("hardware", &self.hw_kernel_anchors),
            ("software", &self.sw_kernel_anchors),
        ] {
            if anchors.len() < 2 {
                return Err(Error::InvalidConfig(format!(
                    "{name} anchors need at least two entries"
                )));
            }
            if anchors
                .iter()
                .any(|&(n, t)| n == 0 || t.is_nan() || t <= 0.0)
            {
                return Err(Error::InvalidConfig(format!(
                    "{name} anchors must be positive"
                )));
            }
            if anchors
                .windows(2)
                .any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1)
            {
                return Err(Error::InvalidConfig(format!(
                    "{name} anchors must be strictly increasing in size and time"
                )));
            }
        }
        if self.unroll_reference == 0 || !(self.unroll_exponent > 0.0 && self.unroll_exponent < 1.0)
        {
            return Err(Error::InvalidConfig(
                "unroll exponent must lie in (0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(Error::InvalidConfig(
                "jitter fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn path(&self, kind: PathKind) -> &TransferPath {
        match kind {
            PathKind::PeerToPeer => &self.p2p,
            PathKind::HostMediated => &self.host,
        }
    }

    pub fn transfer_time(&self, bytes: u64, kind: PathKind) -> SimTime {
        self.path(kind).transfer_time(bytes)
    }

    /// Kernel duration in seconds, before rounding onto the clock.
    pub fn kernel_seconds(&self, n: usize, mode: KernelMode, cfg: &KernelConfig) -> Result<f64> {
        if n == 0 {
            return Err(Error::DimensionMismatch(
                "matrix dimension must be at least 1".into(),
            ));
        }
        let anchors = match mode {
            KernelMode::Hardware => {
                if n > self.max_hardware_dim {
                    return Err(Error::UnsupportedSize {
                        n,
                        max: self.max_hardware_dim,
                    });
                }
                &self.hw_kernel_anchors
            }
            KernelMode::Software => &self.sw_kernel_anchors,
        };
        let base = interpolate_cubic(anchors, n);
        Ok(match mode {
            KernelMode::Hardware => base * self.unroll_scale(cfg.unroll_factor),
            KernelMode::Software => base,
        })
    }

    pub fn kernel_time(&self, n: usize, mode: KernelMode, cfg: &KernelConfig) -> Result<SimTime> {
        let secs = self.kernel_seconds(n, mode, cfg)?;
        Ok(SimTime::from_secs_f64(secs).max(SimTime(1)))
    }

    /// Duration multiplier for a hardware kernel synthesized with `unroll`
    /// parallel loop bodies.
    pub fn unroll_scale(&self, unroll: u32) -> f64 {
        (self.unroll_reference as f64 / unroll as f64).powf(self.unroll_exponent)
    }
}

fn interpolate_cubic(anchors: &[(usize, f64)], n: usize) -> f64 {
    let work = |n: usize| (n as f64).powi(3);
    let x = work(n);
    let seg = anchors
        .windows(2)
        .position(|w| n <= w[1].0)
        .unwrap_or(anchors.len() - 2);
    let (n0, t0) = anchors[seg];
    let (n1, t1) = anchors[seg + 1];
    let (x0, x1) = (work(n0), work(n1));
    let mut slope = (t1 - t0) / (x1 - x0);
    if x < x0 {
        // Keep the line through (x0, t0) above the origin.
        slope = slope.min(t0 / x0);
    }
    t0 + slope * (x - x0)
}
