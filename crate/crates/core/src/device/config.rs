use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flash::DEFAULT_BLOCK_SIZE;
use super::timing::{PathKind, TimingModel, TransferPath};
use crate::error::{Error, Result};
use crate::time::SimTime;

/// Device configuration file: flat `key = value` pairs (TOML syntax).
///
/// ```text
/// block_size = 4096
/// num_blocks = 262144
/// dram_capacity = 4294967296
/// seed = 0
/// jitter_fraction = 0.01
/// p2p_bandwidth = 3.0e9
/// p2p_overhead_ns = 30000
/// host_bandwidth = 3.0e9
/// host_overhead_ns = 30000
/// host_copy_bandwidth = 0.0      # 0 disables the bounce-copy penalty
/// hw_anchors = [[384, 0.018], [1536, 2.054]]
/// sw_anchors = [[384, 0.062], [1536, 2.876]]
/// unroll_reference = 256
/// unroll_exponent = 0.8
/// max_hw_dim = 1536
/// ```
///
/// Every key is optional; missing keys take the defaults shown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub block_size: usize,
    pub num_blocks: u64,
    pub dram_capacity: u64,
    pub seed: u64,
    pub jitter_fraction: f64,
    pub p2p_bandwidth: f64,
    pub p2p_overhead_ns: u64,
    pub host_bandwidth: f64,
    pub host_overhead_ns: u64,
    pub host_copy_bandwidth: f64,
    pub hw_anchors: Vec<(usize, f64)>,
    pub sw_anchors: Vec<(usize, f64)>,
    pub unroll_reference: u32,
    pub unroll_exponent: f64,
    pub max_hw_dim: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let t = TimingModel::default();
        DeviceConfig {
            block_size: DEFAULT_BLOCK_SIZE,
            // 1 GiB namespace; the store is sparse.
            num_blocks: 1 << 18,
            dram_capacity: 4 << 30,
            seed: 0,
            jitter_fraction: t.jitter_fraction,
            p2p_bandwidth: t.p2p.bandwidth,
            p2p_overhead_ns: t.p2p.fixed_overhead.as_picos() / 1000,
            host_bandwidth: t.host.bandwidth,
            host_overhead_ns: t.host.fixed_overhead.as_picos() / 1000,
            host_copy_bandwidth: 0.0,
            hw_anchors: t.hw_kernel_anchors,
            sw_anchors: t.sw_kernel_anchors,
            unroll_reference: t.unroll_reference,
            unroll_exponent: t.unroll_exponent,
            max_hw_dim: t.max_hardware_dim,
        }
    }
}

impl DeviceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn timing_model(&self) -> TimingModel {
        let mut host = TransferPath::new(
            PathKind::HostMediated,
            self.host_bandwidth,
            SimTime::from_nanos(self.host_overhead_ns),
        );
        if self.host_copy_bandwidth > 0.0 {
            host.host_copy_bandwidth = Some(self.host_copy_bandwidth);
        }
        TimingModel {
            p2p: TransferPath::new(
                PathKind::PeerToPeer,
                self.p2p_bandwidth,
                SimTime::from_nanos(self.p2p_overhead_ns),
            ),
            host,
            hw_kernel_anchors: self.hw_anchors.clone(),
            sw_kernel_anchors: self.sw_anchors.clone(),
            unroll_reference: self.unroll_reference,
            unroll_exponent: self.unroll_exponent,
            jitter_fraction: self.jitter_fraction,
            max_hardware_dim: self.max_hw_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = DeviceConfig::parse(
            "seed = 9\nmax_hw_dim = 2048\nsw_anchors = [[100, 0.5], [200, 4.0]]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.max_hw_dim, 2048);
        assert_eq!(cfg.sw_anchors, vec![(100, 0.5), (200, 4.0)]);
        assert_eq!(cfg.block_size, 4096);
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = DeviceConfig::default();
        assert_eq!(DeviceConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(DeviceConfig::parse("blocksize = 4096").is_err());
    }
}
