//! `csdguard`: command line front end for the CSD simulator and its
//! protection services.
//!
//! Exit codes: 0 success, 1 usage error, 2 domain error, 3 I/O error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use csdguard::bench::{self, trace, BenchMode, BenchPlan};
use csdguard::device::{snapshot, Device, DeviceConfig, DeviceDram};
use csdguard::erasure::stripe::{StripeManifest, StripeStore};
use csdguard::erasure::{ErasureCode, LrcConfig, RsConfig, ShardReader};
use csdguard::fault::FaultPlan;
use csdguard::kernels::format::{write_matrix, MatrixFile};
use csdguard::kernels::matmul_u32;
use csdguard::ransom::{FreezePolicy, GuardConfig, MonitorConfig};
use csdguard::{Csd, SimTime};

#[derive(Parser)]
#[command(
    name = "csdguard",
    version,
    about = "Computational storage device simulator and data-protection services"
)]
struct Cli {
    /// Device configuration file (TOML key = value pairs).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the device seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Matrix-multiplication benchmark.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Erasure-coded stripes.
    #[command(subcommand)]
    Ec(EcCmd),
    /// Fault injection.
    #[command(subcommand)]
    Fi(FiCmd),
    /// Ransomware detection and recovery.
    #[command(subcommand)]
    Rdr(RdrCmd),
    /// Flash images.
    #[command(subcommand)]
    Device(DeviceCmd),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run both routes for each dimension and write CSV results.
    Matmul {
        #[arg(long, value_delimiter = ',', default_values_t = [384usize, 1024, 1536])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
        reps_transfer: u64,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        reps_kernel: u64,
        #[arg(long, value_enum, default_value_t = Mode::Simulated)]
        mode: Mode,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `a_N.csdm`, `b_N.csdm` and the reference product
        /// `c_N.csdm` for each dimension into this directory.
        #[arg(long)]
        matrices: Option<PathBuf>,
    },
    /// Summarize a results CSV: latency reduction per dimension.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Simulated,
    LiveSoftware,
}

#[derive(Args, Clone)]
#[group(multiple = false)]
struct CodeArgs {
    /// Reed-Solomon with k data and m parity blocks: `k,m`.
    #[arg(long, value_parser = parse_rs)]
    rs: Option<(usize, usize)>,
    /// Locally repairable code: `k,l,g`.
    #[arg(long, value_parser = parse_lrc)]
    lrc: Option<(usize, usize, usize)>,
}

#[derive(Subcommand)]
enum EcCmd {
    /// Encode a file into a stripe stored in `DIR/stripe.img` and
    /// `DIR/stripe.json`.
    Encode {
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        /// Bytes per stripe block; defaults to the smallest whole number of
        /// LBAs that fits the input.
        #[arg(long)]
        block_bytes: Option<usize>,
    },
    /// Decode the stripe in DIR, treating `--lost` blocks as unavailable.
    Decode {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        lost: Vec<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rebuild one lost block and print the repair report. Without `--dir`
    /// a random stripe of the given code is generated.
    Repair {
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        lost: usize,
        /// Rebuild through a full decode instead of the cheapest repair.
        #[arg(long)]
        full_decode: bool,
        /// Write the rebuilt block back into the stored image.
        #[arg(long, requires = "dir")]
        write_back: bool,
    },
}

#[derive(Subcommand)]
enum FiCmd {
    /// Replay a workload trace under a fault plan.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Injection log output (JSONL).
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Freeze {
    Block,
    RetainAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceKind {
    Benign,
    Attack,
}

#[derive(Subcommand)]
enum RdrCmd {
    /// Replay a trace under the guard; verdicts go to stdout as JSONL.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Roll back to this device time (ns) after the replay.
        #[arg(long)]
        recover_to: Option<u64>,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
        /// Shadow store budget in bytes.
        #[arg(long, default_value_t = 256 << 20)]
        budget: u64,
        #[arg(long, value_enum)]
        freeze: Option<Freeze>,
        /// Recovery report output; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic trace.
    Synth {
        #[arg(long, value_enum)]
        kind: TraceKind,
        #[arg(long, default_value_t = 64)]
        blocks: u64,
        /// Spacing between records in ns.
        #[arg(long, default_value_t = 100_000)]
        gap_ns: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DeviceCmd {
    /// Write a flash image, optionally after replaying a trace.
    Snapshot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Load a flash image and print its summary.
    Restore {
        #[arg(long)]
        image: PathBuf,
    },
}

fn parse_list<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated integers"))
}

fn parse_rs(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_list::<2>(s).map(|[k, m]| (k, m))
}

fn parse_lrc(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    parse_list::<3>(s).map(|[k, l, g]| (k, l, g))
}

/// Errors that map to the usage exit code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<csdguard::Error>() {
            return if e.is_io() { 3 } else { 2 };
        }
        if cause.is::<io::Error>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn device_config(cli: &Cli) -> Result<DeviceConfig> {
    let mut cfg = match &cli.config {
        Some(p) => DeviceConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => DeviceConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn code_from(args: &CodeArgs, block_bytes: usize) -> Result<Option<ErasureCode>> {
    Ok(match (args.rs, args.lrc) {
        (Some((k, m)), _) => Some(ErasureCode::rs(RsConfig::new(k, m, block_bytes)?)),
        (_, Some((k, l, g))) => Some(ErasureCode::lrc(LrcConfig::new(k, l, g, block_bytes)?)),
        _ => None,
    })
}

fn data_blocks(args: &CodeArgs) -> Option<usize> {
    args.rs.map(|(k, _)| k).or(args.lrc.map(|(k, _, _)| k))
}

fn write_json(out: &mut impl Write, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_manifest(dir: &Path) -> Result<StripeManifest> {
    let p = dir.join("stripe.json");
    StripeManifest::load(&p).with_context(|| format!("loading {}", p.display()))
}

fn open_image(cfg: &DeviceConfig, path: &Path) -> Result<Csd> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let flash = snapshot::load(io::BufReader::new(file))?;
    let device = Device::from_parts(
        flash,
        DeviceDram::new(cfg.dram_capacity),
        cfg.timing_model(),
        cfg.seed,
    );
    Ok(Csd::from_device(device))
}

fn save_image(csd: &Csd, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    csd.with_device(|d| snapshot::dump(d.flash(), BufWriter::new(file)))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = device_config(&cli)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Bench(BenchCmd::Matmul {
            dims,
            reps_transfer,
            reps_kernel,
            mode,
            out: path,
            matrices,
        }) => {
            if dims.is_empty() || dims.contains(&0) {
                return Err(usage("--dims needs positive dimensions"));
            }
            let plan = BenchPlan {
                dims,
                transfer_reps: reps_transfer as usize,
                kernel_reps: reps_kernel as usize,
                mode: match mode {
                    Mode::Simulated => BenchMode::Simulated,
                    Mode::LiveSoftware => BenchMode::LiveSoftware,
                },
                seed: cfg.seed,
                ..BenchPlan::default()
            };
            let result = bench::bench_matmul(&plan, &cfg)?;
            match path {
                Some(p) => bench::write_csv(&result.rows, BufWriter::new(File::create(&p)?))?,
                None => bench::write_csv(&result.rows, &mut out)?,
            }
            for (dim, s) in result.kernel_speedups() {
                eprintln!("dim {dim}: kernel speedup {s:.3}");
            }
            if let Some(bad) = result
                .checks
                .iter()
                .find(|c| c.outputs_equal == Some(false))
            {
                bail!("routes disagree on the product at dim {}", bad.dim);
            }
            if let Some(dir) = matrices {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for &n in &plan.dims {
                    let (a, b) = bench::bench_inputs(plan.seed, n);
                    let c = matmul_u32(&a, &b)?;
                    for (name, m) in [("a", a), ("b", b), ("c", c)] {
                        let p = dir.join(format!("{name}_{n}.csdm"));
                        let f = BufWriter::new(
                            File::create(&p)
                                .with_context(|| format!("creating {}", p.display()))?,
                        );
                        write_matrix(&MatrixFile::U32(m), f)?;
                    }
                }
            }
        }
        Command::Bench(BenchCmd::Report { input }) => {
            let rows = bench::read_csv(
                File::open(&input).with_context(|| format!("opening {}", input.display()))?,
            )?;
            write_json(&mut out, &bench::report_latency_reduction(&rows)?)?;
        }
        Command::Ec(EcCmd::Encode {
            code,
            input,
            dir,
            block_bytes,
        }) => {
            let k = data_blocks(&code).ok_or_else(|| usage("one of --rs or --lrc is required"))?;
            let payload =
                fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let bs = cfg.block_size;
            let bb =
                block_bytes.unwrap_or_else(|| payload.len().div_ceil(k).div_ceil(bs).max(1) * bs);
            let code = code_from(&code, bb)?.expect("checked above");
            let csd = Csd::new(&cfg)?;
            let store = StripeStore::write(&csd, 0, code, 0, &payload)?;
            fs::create_dir_all(&dir)?;
            save_image(&csd, &dir.join("stripe.img"))?;
            store.manifest().save(&dir.join("stripe.json"))?;
            write_json(&mut out, store.manifest())?;
        }
        Command::Ec(EcCmd::Decode { dir, lost, output }) => {
            let manifest = load_manifest(&dir)?;
            let csd = open_image(&cfg, &dir.join("stripe.img"))?;
            let mut store = StripeStore::open(&csd, manifest);
            for i in lost {
                store.mark_lost(i);
            }
            let data = store.read_payload()?;
            fs::write(&output, data).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Ec(EcCmd::Repair {
            code,
            dir,
            lost,
            full_decode,
            write_back,
        }) => {
            let (csd, mut store) = match &dir {
                Some(d) => {
                    let manifest = load_manifest(d)?;
                    if let Some(given) =
                        code_from(&code, ErasureCode::from_config(manifest.code).block_bytes())?
                    {
                        if given.config() != manifest.code {
                            bail!(csdguard::Error::InvalidGeometry(
                                "code flags do not match the stored stripe".into()
                            ));
                        }
                    }
                    let csd = open_image(&cfg, &d.join("stripe.img"))?;
                    let store = StripeStore::open(&csd, manifest);
                    (csd, store)
                }
                None => {
                    let bs = cfg.block_size;
                    let code = code_from(&code, bs)?
                        .ok_or_else(|| usage("--rs or --lrc is required without --dir"))?;
                    let mut payload = vec![0u8; code.k() * bs];
                    ChaCha8Rng::seed_from_u64(cfg.seed).fill_bytes(&mut payload);
                    let csd = Csd::new(&cfg)?;
                    let store = StripeStore::write(&csd, 0, code, 0, &payload)?;
                    (csd, store)
                }
            };
            if lost >= store.code().total() {
                return Err(usage(format!(
                    "--lost {lost} is outside the stripe of {} blocks",
                    store.code().total()
                )));
            }
            store.mark_lost(lost);
            let code = store.code().clone();
            let reader: &mut dyn ShardReader = &mut store;
            let (block, report) = if full_decode {
                code.repair_by_decode(lost, reader)?
            } else {
                code.repair_single(lost, reader)?
            };
            if write_back {
                store.rewrite(lost, &block)?;
                save_image(&csd, &dir.expect("required by clap").join("stripe.img"))?;
            }
            write_json(&mut out, &report)?;
        }
        Command::Fi(FiCmd::Run {
            plan,
            workload,
            log,
        }) => {
            let plan =
                FaultPlan::load(&plan).with_context(|| format!("fault plan {}", plan.display()))?;
            let records = trace::load_trace(&workload)
                .with_context(|| format!("workload {}", workload.display()))?;
            let report = bench::fi_run(&cfg, &plan, &records)?;
            if let Some(p) = log {
                fs::write(&p, report.log.to_jsonl())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            write_json(
                &mut out,
                &serde_json::json!({
                    "injections": report.log.len(),
                    "corrupted": report.corrupted,
                    "failed": report.replay.failed,
                }),
            )?;
        }
        Command::Rdr(RdrCmd::Replay {
            trace: path,
            recover_to,
            window,
            budget,
            freeze,
            report,
        }) => {
            let records =
                trace::load_trace(&path).with_context(|| format!("trace {}", path.display()))?;
            let guard = GuardConfig {
                monitor: MonitorConfig {
                    window: window as usize,
                    ..MonitorConfig::default()
                },
                shadow_budget: budget,
                freeze_policy: freeze.map(|f| match f {
                    Freeze::Block => FreezePolicy::Block,
                    Freeze::RetainAll => FreezePolicy::RetainAll,
                }),
                ..GuardConfig::default()
            };
            let (result, _) =
                bench::rdr_replay(&cfg, guard, &records, recover_to.map(SimTime::from_nanos))?;
            for v in &result.verdicts {
                serde_json::to_writer(&mut out, v)?;
                writeln!(out)?;
            }
            if let Some(r) = result.recovery {
                match report {
                    Some(p) => fs::write(&p, r.to_json())
                        .with_context(|| format!("writing {}", p.display()))?,
                    None => writeln!(
                        out,
                        "{}",
                        serde_json::to_string(&serde_json::json!({ "recovery": r }))?
                    )?,
                }
            }
        }
        Command::Rdr(RdrCmd::Synth {
            kind,
            blocks,
            gap_ns,
            out: path,
        }) => {
            let records = match kind {
                TraceKind::Benign => {
                    trace::benign_trace(blocks as usize, 0, cfg.block_size, gap_ns)
                }
                TraceKind::Attack => {
                    trace::attack_trace(blocks, cfg.block_size, gap_ns, cfg.seed).0
                }
            };
            trace::write_trace(&records, BufWriter::new(File::create(&path)?))?;
        }
        Command::Device(DeviceCmd::Snapshot {
            out: path,
            trace: t,
        }) => {
            let csd = Csd::new(&cfg)?;
            if let Some(t) = t {
                let records =
                    trace::load_trace(&t).with_context(|| format!("trace {}", t.display()))?;
                let outcome = trace::replay(&csd, &records)?;
                if let Some((seq, e)) = outcome.failed.first() {
                    return Err(anyhow!("record {seq} failed: {e}"));
                }
            }
            save_image(&csd, &path)?;
        }
        Command::Device(DeviceCmd::Restore { image }) => {
            let csd = open_image(&cfg, &image)?;
            let summary = csd.with_device(|d| {
                let f = d.flash();
                serde_json::json!({
                    "block_size": f.block_size(),
                    "num_blocks": f.num_blocks(),
                    "populated_blocks": f.populated_count(),
                    "extent": f.extent(),
                })
            });
            write_json(&mut out, &summary)?;
        }
    }
    out.flush()?;
    Ok(())
}
