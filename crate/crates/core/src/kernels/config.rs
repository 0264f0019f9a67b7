use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directive-style tuning knobs of the synthesized kernel. They feed the
/// timing model only; results never depend on them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Replicated loop bodies (`UNROLL`).
    pub unroll_factor: u32,
    /// Memory banks per partitioned array (`ARRAY_PARTITION`).
    pub partition_factor: u32,
    /// Bytes per beat of the memory interface (`INTERFACE`).
    pub interface_width: u32,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            unroll_factor: 256,
            partition_factor: 16,
            interface_width: 64,
        }
    }
}

impl KernelConfig {
    /// 32-bit elements delivered per interface beat.
    pub fn interface_lanes(&self) -> u32 {
        (self.interface_width / 4).max(1)
    }

    /// Checks that all factors are powers of two and that the unrolled
    /// loop can be fed: `unroll <= partition * lanes`.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("unroll_factor", self.unroll_factor),
            ("partition_factor", self.partition_factor),
            ("interface_width", self.interface_width),
        ] {
            if !v.is_power_of_two() {
                return Err(Error::InvalidKernelConfig(format!(
                    "{name} = {v} is not a power of two"
                )));
            }
        }
        let bound = self.partition_factor as u64 * self.interface_lanes() as u64;
        if self.unroll_factor as u64 > bound {
            return Err(Error::InvalidKernelConfig(format!(
                "unroll_factor {} exceeds partition_factor x lanes = {bound}",
                self.unroll_factor
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        KernelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_non_powers_and_unfed_unroll() {
        let c = KernelConfig {
            unroll_factor: 3,
            ..KernelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = KernelConfig {
            unroll_factor: 512,
            partition_factor: 16,
            interface_width: 64,
        };
        assert!(c.validate().is_err());
    }
}
