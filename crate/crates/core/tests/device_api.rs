use proptest::prelude::*;

use csdguard::api::{elapsed_between, EventStatus, Source};
use csdguard::device::{DeviceConfig, KernelMode, PathKind, TimingModel};
use csdguard::kernels::KernelConfig;
use csdguard::{Csd, Error, HostBuffer, SimTime};

fn quiet(num_blocks: u64) -> DeviceConfig {
    DeviceConfig {
        jitter_fraction: 0.0,
        num_blocks,
        ..DeviceConfig::default()
    }
}

proptest! {
    #[test]
    fn transfer_time_is_monotone_and_affine(a in 0u64..1 << 34, b in 0u64..1 << 34, bw in 1e8f64..1e11) {
        let mut t = TimingModel::default();
        t.p2p.bandwidth = bw;
        t.host.bandwidth = bw;
        for kind in [PathKind::PeerToPeer, PathKind::HostMediated] {
            let f = |x| t.transfer_time(x, kind).as_picos();
            prop_assert!(a > b || f(a) <= f(b));
            // f(a) + f(b) = f(a + b) + f(0) for an affine map.
            prop_assert_eq!(f(a) + f(b), f(a + b) + f(0));
        }
    }

    #[test]
    fn kernel_time_grows_with_dimension(n in 1usize..1536) {
        let t = TimingModel::default();
        let cfg = KernelConfig::default();
        for mode in [KernelMode::Hardware, KernelMode::Software] {
            let a = t.kernel_time(n, mode, &cfg).unwrap();
            let b = t.kernel_time(n + 1, mode, &cfg).unwrap();
            prop_assert!(a <= b && a > SimTime::ZERO);
        }
    }

    #[test]
    fn live_buffers_never_overlap(ops in prop::collection::vec((any::<bool>(), 1u64..5000, any::<prop::sample::Index>()), 1..60)) {
        let cfg = DeviceConfig { dram_capacity: 64 << 10, ..quiet(64) };
        let csd = Csd::new(&cfg).unwrap();
        let mut live = Vec::new();
        for (alloc, size, pick) in ops {
            if alloc || live.is_empty() {
                match csd.alloc_device_buffer(size, true) {
                    Ok(b) => live.push(b),
                    Err(Error::OutOfDeviceMemory { .. }) => {}
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            } else {
                let b = live.swap_remove(pick.index(live.len()));
                csd.free_device_buffer(&b).unwrap();
                prop_assert!(matches!(csd.free_device_buffer(&b), Err(Error::UseAfterFree(_))));
            }
            let mut spans: Vec<(u64, u64)> = live.iter().map(|b| (b.offset(), b.offset() + b.size())).collect();
            spans.sort();
            prop_assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
            prop_assert!(spans.last().is_none_or(|s| s.1 <= 64 << 10));
        }
    }

    #[test]
    fn flash_round_trips_through_either_path(data in prop::collection::vec(any::<u8>(), 1..3 * 4096), lba in 0u64..60) {
        let csd = Csd::new(&quiet(64)).unwrap();
        let blocks = data.len().div_ceil(4096) as u64;
        let mut padded = data.clone();
        padded.resize(blocks as usize * 4096, 0);
        csd.store_to_flash(Source::Host(&HostBuffer::new(padded.clone())), lba..lba + blocks, PathKind::HostMediated).unwrap();
        for path in [PathKind::PeerToPeer, PathKind::HostMediated] {
            let buf = csd.alloc_device_buffer(blocks * 4096, true).unwrap();
            csd.load_from_flash(lba..lba + blocks, &buf, path).unwrap();
            prop_assert_eq!(csd.read_device_buffer(&buf).unwrap().0.into_vec(), padded.clone());
            csd.free_device_buffer(&buf).unwrap();
        }
    }
}

#[test]
fn events_are_serialized_and_failures_recorded() {
    let csd = Csd::new(&quiet(16)).unwrap();
    let a = csd
        .store_to_flash(
            Source::Host(&HostBuffer::zeroed(4096)),
            0..1,
            PathKind::HostMediated,
        )
        .unwrap();
    let err = csd.load_to_host(15..17).unwrap_err();
    assert!(matches!(err, Error::RangeOutOfBounds { .. }));
    let (_, b) = csd.load_to_host(0..1).unwrap();
    let events = csd.events();
    assert_eq!(events.len(), 3);
    assert!(matches!(events[1].status, EventStatus::Failed(_)));
    assert!(events.windows(2).all(|w| w[0].end_ts <= w[1].start_ts));
    assert_eq!(elapsed_between(&a, &b).unwrap(), b.end_ts - a.start_ts);
    assert!(matches!(
        elapsed_between(&b, &a),
        Err(Error::NegativeInterval)
    ));
}

#[test]
fn p2p_requires_mapped_buffers() {
    let csd = Csd::new(&quiet(16)).unwrap();
    let unmapped = csd.alloc_device_buffer(4096, false).unwrap();
    assert!(matches!(
        csd.load_from_flash(0..1, &unmapped, PathKind::PeerToPeer),
        Err(Error::PathNotPermitted(_))
    ));
    assert!(matches!(
        csd.store_to_flash(
            Source::Host(&HostBuffer::zeroed(4096)),
            0..1,
            PathKind::PeerToPeer
        ),
        Err(Error::PathNotPermitted(_))
    ));
    csd.load_from_flash(0..1, &unmapped, PathKind::HostMediated)
        .unwrap();
}

#[test]
fn host_mediated_device_load_costs_two_hops() {
    let csd = Csd::new(&quiet(16)).unwrap();
    let hop = csd.with_device(|d| d.timing().transfer_time(4096, PathKind::HostMediated));
    let p2p = csd.with_device(|d| d.timing().transfer_time(4096, PathKind::PeerToPeer));
    let buf = csd.alloc_device_buffer(4096, true).unwrap();
    let host = csd
        .load_from_flash(0..1, &buf, PathKind::HostMediated)
        .unwrap();
    let direct = csd
        .load_from_flash(0..1, &buf, PathKind::PeerToPeer)
        .unwrap();
    assert_eq!(host.duration(), hop + hop);
    assert_eq!(direct.duration(), p2p);
    assert_eq!(host.segments.len(), 2);
}
