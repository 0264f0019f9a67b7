use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Region bookkeeping for device DRAM. Allocation is first-fit over an
/// address-ordered list; region contents live with the buffer that owns
/// them.
#[derive(Clone, Debug)]
pub struct DeviceDram {
    capacity: u64,
    /// offset -> (buffer id, length)
    regions: BTreeMap<u64, (u64, u64)>,
}

impl DeviceDram {
    pub fn new(capacity: u64) -> Self {
        DeviceDram {
            capacity,
            regions: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn allocated(&self) -> u64 {
        self.regions.values().map(|&(_, len)| len).sum()
    }

    pub fn alloc(&mut self, id: u64, len: u64) -> Result<u64> {
        let mut cursor = 0u64;
        for (&offset, &(_, rlen)) in &self.regions {
            if offset - cursor >= len {
                break;
            }
            cursor = offset + rlen;
        }
        if cursor
            .checked_add(len)
            .is_none_or(|end| end > self.capacity)
        {
            return Err(Error::OutOfDeviceMemory {
                requested: len,
                free: self.capacity - self.allocated(),
            });
        }
        self.regions.insert(cursor, (id, len));
        Ok(cursor)
    }

    pub fn free(&mut self, offset: u64, id: u64) -> Result<()> {
        match self.regions.get(&offset) {
            Some(&(owner, _)) if owner == id => {
                self.regions.remove(&offset);
                Ok(())
            }
            _ => Err(Error::UseAfterFree(id)),
        }
    }

    /// `(offset, length)` of every live region in address order.
    pub fn regions(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.regions.iter().map(|(&o, &(_, l))| (o, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_fit_reuses_the_lowest_hole() {
        let mut d = DeviceDram::new(100);
        assert_eq!(d.alloc(1, 30).unwrap(), 0);
        assert_eq!(d.alloc(2, 30).unwrap(), 30);
        assert_eq!(d.alloc(3, 30).unwrap(), 60);
        d.free(30, 2).unwrap();
        assert_eq!(d.alloc(4, 20).unwrap(), 30);
        assert_eq!(d.alloc(5, 10).unwrap(), 50);
        assert!(matches!(
            d.alloc(6, 11),
            Err(Error::OutOfDeviceMemory {
                requested: 11,
                free: 10
            })
        ));
        assert_eq!(d.alloc(7, 10).unwrap(), 90);
    }

    #[test]
    fn free_checks_ownership() {
        let mut d = DeviceDram::new(10);
        d.alloc(1, 5).unwrap();
        assert!(matches!(d.free(0, 2), Err(Error::UseAfterFree(2))));
        d.free(0, 1).unwrap();
        assert!(matches!(d.free(0, 1), Err(Error::UseAfterFree(1))));
    }
}
