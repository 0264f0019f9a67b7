//! Dual-path matrix-multiplication benchmark.
//!
//! For each dimension two random `u32` matrices are written to flash, then
//! multiplied along two routes:
//!
//! * `csd_p2p`: peer-to-peer load into device DRAM, hardware kernel,
//!   peer-to-peer store of the product.
//! * `cpu_host`: read into host memory, software kernel, host write of the
//!   product.
//!
//! The first repetition of every phase moves real data; later repetitions
//! only bill time. Transfer and simulated kernel costs do not depend on the
//! bytes involved, so this yields the same timeline as moving the data each
//! time while keeping large dimensions cheap to run.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::api::{CommandKind, CompletionEvent, Csd, HostBilling, HostBuffer, Source};
use crate::device::{matrix_bytes, DeviceConfig, KernelMode, PathKind};
use crate::error::{Error, Result};
use crate::kernels::{register_kernels, KernelConfig, MatrixU32, Shape, MATMUL_U32};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// Both kernels billed by the timing model.
    Simulated,
    /// The software kernel is billed by host wall-clock time and runs on
    /// every repetition.
    LiveSoftware,
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulated" => Ok(BenchMode::Simulated),
            "live-software" => Ok(BenchMode::LiveSoftware),
            _ => Err(Error::InvalidConfig(format!("unknown bench mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchPlan {
    pub dims: Vec<usize>,
    pub transfer_reps: usize,
    pub kernel_reps: usize,
    pub mode: BenchMode,
    /// Seeds both matrix generation and transfer jitter.
    pub seed: u64,
    pub kernel: KernelConfig,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            dims: vec![384, 1024, 1536],
            transfer_reps: 2000,
            kernel_reps: 50,
            mode: BenchMode::Simulated,
            seed: 0,
            kernel: KernelConfig::default(),
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "dims must be non-empty and positive".into(),
            ));
        }
        if self.transfer_reps == 0 || self.kernel_reps == 0 {
            return Err(Error::InvalidConfig(
                "repetition counts must be at least 1".into(),
            ));
        }
        self.kernel.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPath {
    CsdP2p,
    CpuHost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Write,
    Read,
    Kernel,
    EndToEnd,
}

impl BenchPath {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchPath::CsdP2p => "csd_p2p",
            BenchPath::CpuHost => "cpu_host",
        }
    }
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Write => "write",
            Phase::Read => "read",
            Phase::Kernel => "kernel",
            Phase::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for BenchPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchPath {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [BenchPath::CsdP2p, BenchPath::CpuHost]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown path {s:?}"))
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Phase::Write, Phase::Read, Phase::Kernel, Phase::EndToEnd]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown phase {s:?}"))
    }
}

/// Summary of one phase, in nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl PhaseStats {
    pub fn from_samples(samples: &[SimTime]) -> Self {
        assert!(!samples.is_empty(), "stats need at least one sample");
        // Exact integer moments so identical samples give a zero spread.
        let n = samples.len() as u128;
        let ps = samples.iter().map(|s| s.as_picos() as u128);
        let sum: u128 = ps.clone().sum();
        let sum_sq: u128 = ps.map(|x| x * x).sum();
        let var_ps = (n * sum_sq - sum * sum) as f64 / (n * n) as f64;
        let min = samples.iter().min().unwrap().as_nanos_f64();
        let max = samples.iter().max().unwrap().as_nanos_f64();
        let mean = sum as f64 / n as f64 / 1e3;
        PhaseStats {
            mean: mean.clamp(min, max),
            min,
            max,
            stddev: var_ps.sqrt() / 1e3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    Measured(PhaseStats),
    UnsupportedSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dim: usize,
    pub bytes: u64,
    pub path: BenchPath,
    pub phase: Phase,
    pub reps: usize,
    pub outcome: RowOutcome,
}

impl BenchRow {
    pub fn stats(&self) -> Option<&PhaseStats> {
        match &self.outcome {
            RowOutcome::Measured(s) => Some(s),
            RowOutcome::UnsupportedSize => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimCheck {
    pub dim: usize,
    /// Whether both routes produced the same product; `None` when the
    /// hardware route could not run.
    pub outputs_equal: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub checks: Vec<DimCheck>,
}

impl BenchResult {
    pub fn row(&self, dim: usize, path: BenchPath, phase: Phase) -> Option<&BenchRow> {
        find_row(&self.rows, dim, path, phase)
    }

    /// Software kernel mean over hardware kernel mean, per measured dim.
    pub fn kernel_speedups(&self) -> Vec<(usize, f64)> {
        dims_of(&self.rows)
            .into_iter()
            .filter_map(|d| {
                let hw = self.row(d, BenchPath::CsdP2p, Phase::Kernel)?.stats()?.mean;
                let sw = self
                    .row(d, BenchPath::CpuHost, Phase::Kernel)?
                    .stats()?
                    .mean;
                Some((d, sw / hw))
            })
            .collect()
    }
}

fn find_row(rows: &[BenchRow], dim: usize, path: BenchPath, phase: Phase) -> Option<&BenchRow> {
    rows.iter()
        .find(|r| r.dim == dim && r.path == path && r.phase == phase)
}

fn dims_of(rows: &[BenchRow]) -> Vec<usize> {
    let mut dims: Vec<usize> = Vec::new();
    for r in rows {
        if !dims.contains(&r.dim) {
            dims.push(r.dim);
        }
    }
    dims
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> MatrixU32 {
    MatrixU32::new(n, (0..n * n).map(|_| rng.gen()).collect()).expect("square data")
}

/// The operands `(A, B)` the benchmark uses for dimension `n` under `seed`.
pub fn bench_inputs(seed: u64, n: usize) -> (MatrixU32, MatrixU32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let a = random_matrix(&mut rng, n);
    let b = random_matrix(&mut rng, n);
    (a, b)
}

fn padded(mut bytes: Vec<u8>, len: u64) -> HostBuffer {
    bytes.resize(len as usize, 0);
    HostBuffer::new(bytes)
}

fn total(events: &[CompletionEvent]) -> SimTime {
    events.iter().map(|e| e.duration()).sum()
}

/// Runs the benchmark on a fresh device built from `device` with its seed
/// replaced by the plan's.
pub fn bench_matmul(plan: &BenchPlan, device: &DeviceConfig) -> Result<BenchResult> {
    plan.validate()?;
    let csd = Csd::new(&DeviceConfig {
        seed: plan.seed,
        ..device.clone()
    })?;
    register_kernels(&csd);
    let mut result = BenchResult {
        rows: Vec::new(),
        checks: Vec::new(),
    };
    for &n in &plan.dims {
        run_dim(&csd, plan, n, &mut result)?;
        csd.clear_events();
    }
    Ok(result)
}

fn run_dim(csd: &Csd, plan: &BenchPlan, n: usize, result: &mut BenchResult) -> Result<()> {
    let bs = csd.block_size() as u64;
    let bytes = matrix_bytes(n);
    let blocks = bytes.div_ceil(bs);
    let span = blocks * bs;
    let region = |i: u64| i * blocks..(i + 1) * blocks;
    let shape = Shape::square(n);

    let (a, b) = bench_inputs(plan.seed, n);
    csd.store_to_flash(
        Source::Host(&padded(a.to_le_bytes(), span)),
        region(0),
        PathKind::HostMediated,
    )?;
    csd.store_to_flash(
        Source::Host(&padded(b.to_le_bytes(), span)),
        region(1),
        PathKind::HostMediated,
    )?;

    let row = |path, phase, reps, samples: Option<&[SimTime]>| BenchRow {
        dim: n,
        bytes,
        path,
        phase,
        reps,
        outcome: samples.map_or(RowOutcome::UnsupportedSize, |s| {
            RowOutcome::Measured(PhaseStats::from_samples(s))
        }),
    };
    let (tr, kr) = (plan.transfer_reps, plan.kernel_reps);

    // Peer-to-peer route.
    let hw_supported = match csd.with_device(|d| {
        d.timing()
            .kernel_time(n, KernelMode::Hardware, &plan.kernel)
    }) {
        Ok(_) => true,
        Err(Error::UnsupportedSize { .. }) => false,
        Err(e) => return Err(e),
    };
    let csd_product = if hw_supported {
        let bufs = [
            csd.alloc_device_buffer(span, true)?,
            csd.alloc_device_buffer(span, true)?,
            csd.alloc_device_buffer(span, true)?,
        ];
        let [da, db, dc] = &bufs;
        let load = || -> SimTime {
            total(&[
                csd.profile_transfer(span, PathKind::PeerToPeer, CommandKind::FlashLoad),
                csd.profile_transfer(span, PathKind::PeerToPeer, CommandKind::FlashLoad),
            ])
        };
        let kernel = || {
            csd.profile_kernel(MATMUL_U32, &plan.kernel, shape, KernelMode::Hardware)
                .map(|e| e.duration())
        };
        let store = || {
            csd.profile_transfer(span, PathKind::PeerToPeer, CommandKind::FlashStore)
                .duration()
        };

        let mut reads = vec![total(&[
            csd.load_from_flash(region(0), da, PathKind::PeerToPeer)?,
            csd.load_from_flash(region(1), db, PathKind::PeerToPeer)?,
        ])];
        reads.extend((1..tr).map(|_| load()));
        let mut kernels = vec![csd
            .launch_kernel(MATMUL_U32, &plan.kernel, shape, &[da, db], dc)?
            .duration()];
        for _ in 1..kr {
            kernels.push(kernel()?);
        }
        let mut writes = vec![csd
            .store_to_flash(Source::Device(dc), region(2), PathKind::PeerToPeer)?
            .duration()];
        writes.extend((1..tr).map(|_| store()));
        let mut e2e = Vec::with_capacity(kr);
        for _ in 0..kr {
            let l = load();
            let k = kernel()?;
            e2e.push(l + k + store());
        }
        for buf in &bufs {
            csd.free_device_buffer(buf)?;
        }
        result
            .rows
            .push(row(BenchPath::CsdP2p, Phase::Write, tr, Some(&writes)));
        result
            .rows
            .push(row(BenchPath::CsdP2p, Phase::Read, tr, Some(&reads)));
        result
            .rows
            .push(row(BenchPath::CsdP2p, Phase::Kernel, kr, Some(&kernels)));
        result
            .rows
            .push(row(BenchPath::CsdP2p, Phase::EndToEnd, kr, Some(&e2e)));
        Some(csd.load_to_host(region(2))?.0)
    } else {
        for (phase, reps) in [
            (Phase::Write, tr),
            (Phase::Read, tr),
            (Phase::Kernel, kr),
            (Phase::EndToEnd, kr),
        ] {
            result.rows.push(row(BenchPath::CsdP2p, phase, reps, None));
        }
        None
    };

    // Host route.
    let billing = match plan.mode {
        BenchMode::Simulated => HostBilling::Simulated,
        BenchMode::LiveSoftware => HostBilling::WallClock,
    };
    let load = || -> SimTime {
        total(&[
            csd.profile_transfer(span, PathKind::HostMediated, CommandKind::HostRead),
            csd.profile_transfer(span, PathKind::HostMediated, CommandKind::HostRead),
        ])
    };
    let store = || {
        csd.profile_transfer(span, PathKind::HostMediated, CommandKind::FlashStore)
            .duration()
    };
    let (ha, ea) = csd.load_to_host(region(0))?;
    let (hb, eb) = csd.load_to_host(region(1))?;
    let mut reads = vec![total(&[ea, eb])];
    reads.extend((1..tr).map(|_| load()));
    let kernel = || -> Result<SimTime> {
        match plan.mode {
            BenchMode::Simulated => csd
                .profile_kernel(MATMUL_U32, &plan.kernel, shape, KernelMode::Software)
                .map(|e| e.duration()),
            BenchMode::LiveSoftware => csd
                .run_host_kernel(MATMUL_U32, shape, &[&ha, &hb], billing)
                .map(|(_, e)| e.duration()),
        }
    };
    let (hc, ek) = csd.run_host_kernel(MATMUL_U32, shape, &[&ha, &hb], billing)?;
    let mut kernels = vec![ek.duration()];
    for _ in 1..kr {
        kernels.push(kernel()?);
    }
    let mut writes = vec![csd
        .store_to_flash(
            Source::Host(&padded(hc.into_vec(), span)),
            region(3),
            PathKind::HostMediated,
        )?
        .duration()];
    writes.extend((1..tr).map(|_| store()));
    let mut e2e = Vec::with_capacity(kr);
    for _ in 0..kr {
        let l = load();
        let k = kernel()?;
        e2e.push(l + k + store());
    }
    result
        .rows
        .push(row(BenchPath::CpuHost, Phase::Write, tr, Some(&writes)));
    result
        .rows
        .push(row(BenchPath::CpuHost, Phase::Read, tr, Some(&reads)));
    result
        .rows
        .push(row(BenchPath::CpuHost, Phase::Kernel, kr, Some(&kernels)));
    result
        .rows
        .push(row(BenchPath::CpuHost, Phase::EndToEnd, kr, Some(&e2e)));

    let cpu_product = csd.load_to_host(region(3))?.0;
    let outputs_equal = csd_product
        .map(|c| c.as_slice()[..bytes as usize] == cpu_product.as_slice()[..bytes as usize]);
    result.checks.push(DimCheck {
        dim: n,
        outputs_equal,
    });
    Ok(())
}

pub const CSV_HEADER: [&str; 9] = [
    "dim",
    "bytes",
    "path",
    "phase",
    "reps",
    "mean_ns",
    "min_ns",
    "max_ns",
    "stddev_ns",
];

const UNSUPPORTED: &str = "UnsupportedSize";

/// Writes rows as CSV. Times use three decimals; rows whose hardware run
/// was impossible carry `UnsupportedSize` in every time column.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse {
        line: 0,
        reason: e.to_string(),
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let times = match r.stats() {
            Some(s) => [s.mean, s.min, s.max, s.stddev].map(|x| format!("{x:.3}")),
            None => [(); 4].map(|_| UNSUPPORTED.to_string()),
        };
        let mut rec = vec![
            r.dim.to_string(),
            r.bytes.to_string(),
            r.path.to_string(),
            r.phase.to_string(),
            r.reps.to_string(),
        ];
        rec.extend(times);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let bad = |reason: String| Error::Parse { line, reason };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |j: usize| {
            rec[j]
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {e}", CSV_HEADER[j])))
        };
        let outcome = if rec[5] == *UNSUPPORTED {
            RowOutcome::UnsupportedSize
        } else {
            RowOutcome::Measured(PhaseStats {
                mean: num(5)?,
                min: num(6)?,
                max: num(7)?,
                stddev: num(8)?,
            })
        };
        rows.push(BenchRow {
            dim: rec[0].parse().map_err(|e| bad(format!("dim: {e}")))?,
            bytes: rec[1].parse().map_err(|e| bad(format!("bytes: {e}")))?,
            path: rec[2].parse().map_err(bad)?,
            phase: rec[3].parse().map_err(bad)?,
            reps: rec[4].parse().map_err(|e| bad(format!("reps: {e}")))?,
            outcome,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReduction {
    /// `(dim, percent)` for every dim where both routes ran.
    pub per_dim: Vec<(usize, f64)>,
    pub max_percent: f64,
}

/// End-to-end latency saved by the hardware route, in percent.
pub fn report_latency_reduction(rows: &[BenchRow]) -> Result<LatencyReduction> {
    let mut per_dim = Vec::new();
    for d in dims_of(rows) {
        let hw = find_row(rows, d, BenchPath::CsdP2p, Phase::EndToEnd)
            .ok_or(Error::MissingPath("csd_p2p"))?;
        let sw = find_row(rows, d, BenchPath::CpuHost, Phase::EndToEnd)
            .ok_or(Error::MissingPath("cpu_host"))?;
        let Some(sw) = sw.stats() else {
            return Err(Error::MissingPath("cpu_host"));
        };
        if let Some(hw) = hw.stats() {
            per_dim.push((d, 100.0 * (1.0 - hw.mean / sw.mean)));
        }
    }
    let max_percent = per_dim
        .iter()
        .map(|&(_, p)| p)
        .reduce(f64::max)
        .ok_or(Error::MissingPath("csd_p2p"))?;
    Ok(LatencyReduction {
        per_dim,
        max_percent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> DeviceConfig {
        DeviceConfig {
            jitter_fraction: 0.0,
            ..DeviceConfig::default()
        }
    }

    fn small(dims: Vec<usize>) -> BenchPlan {
        BenchPlan {
            dims,
            transfer_reps: 5,
            kernel_reps: 3,
            ..BenchPlan::default()
        }
    }

    #[test]
    fn stats_basic() {
        let s = PhaseStats::from_samples(&[SimTime::from_nanos(1), SimTime::from_nanos(3)]);
        assert_eq!((s.mean, s.min, s.max, s.stddev), (2.0, 1.0, 3.0, 1.0));
    }

    #[test]
    fn small_dims_agree_and_have_zero_spread_without_jitter() {
        let r = bench_matmul(&small(vec![4, 40]), &quiet()).unwrap();
        assert_eq!(r.rows.len(), 16);
        assert!(r.checks.iter().all(|c| c.outputs_equal == Some(true)));
        for row in &r.rows {
            assert_eq!(row.stats().unwrap().stddev, 0.0);
        }
    }

    #[test]
    fn oversize_dim_marks_hardware_rows() {
        let cfg = DeviceConfig {
            max_hw_dim: 32,
            ..quiet()
        };
        let r = bench_matmul(&small(vec![40]), &cfg).unwrap();
        assert_eq!(r.checks[0].outputs_equal, None);
        assert!(r
            .rows
            .iter()
            .filter(|x| x.path == BenchPath::CsdP2p)
            .all(|x| x.outcome == RowOutcome::UnsupportedSize));
        assert!(matches!(
            report_latency_reduction(&r.rows),
            Err(Error::MissingPath("csd_p2p"))
        ));
        let mut csv = Vec::new();
        write_csv(&r.rows, &mut csv).unwrap();
        assert_eq!(read_csv(csv.as_slice()).unwrap(), r.rows);
    }

    #[test]
    fn reduction_formula() {
        let mk = |path, mean| BenchRow {
            dim: 8,
            bytes: 256,
            path,
            phase: Phase::EndToEnd,
            reps: 1,
            outcome: RowOutcome::Measured(PhaseStats {
                mean,
                min: mean,
                max: mean,
                stddev: 0.0,
            }),
        };
        let r =
            report_latency_reduction(&[mk(BenchPath::CsdP2p, 1.0), mk(BenchPath::CpuHost, 3.44)])
                .unwrap();
        assert!((r.max_percent - 100.0 * (1.0 - 1.0 / 3.44)).abs() < 1e-12);
        let r =
            report_latency_reduction(&[mk(BenchPath::CsdP2p, 2.0), mk(BenchPath::CpuHost, 2.0)])
                .unwrap();
        assert_eq!(r.max_percent, 0.0);
        assert!(matches!(
            report_latency_reduction(&[mk(BenchPath::CpuHost, 2.0)]),
            Err(Error::MissingPath("csd_p2p"))
        ));
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
