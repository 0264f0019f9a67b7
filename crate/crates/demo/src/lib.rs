//! Browser demo: three interactive views over the simulator, exported
//! through wasm-bindgen. Every export returns a JSON string; errors come
//! back as `{"error": "..."}` so the page never has to catch exceptions.

use csdguard::device::{KernelMode, TimingModel};
use csdguard::erasure::{ErasureCode, LrcConfig, RsConfig, ShardReader};
use csdguard::kernels::KernelConfig;
use csdguard::ransom::{IoMonitor, IoObservation, MonitorConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("plain data serializes"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[derive(Serialize)]
pub struct CurvePoint {
    pub dim: usize,
    pub hardware_s: Option<f64>,
    pub software_s: f64,
    pub speedup: Option<f64>,
}

/// Kernel times and speedup over a sweep of square dimensions for a given
/// unroll factor and clock-pressure exponent.
pub fn speedup_curve(
    unroll: u32,
    exponent: f64,
    max_dim: usize,
    step: usize,
) -> Result<Vec<CurvePoint>, String> {
    if step == 0 || max_dim == 0 {
        return Err("step and max_dim must be positive".into());
    }
    let timing = TimingModel {
        unroll_exponent: exponent,
        ..TimingModel::default()
    };
    timing.validate().map_err(|e| e.to_string())?;
    let cfg = KernelConfig {
        unroll_factor: unroll,
        ..KernelConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    (1..=max_dim / step)
        .map(|i| {
            let dim = i * step;
            let software_s = timing
                .kernel_seconds(dim, KernelMode::Software, &cfg)
                .map_err(|e| e.to_string())?;
            let hardware_s = timing.kernel_seconds(dim, KernelMode::Hardware, &cfg).ok();
            Ok(CurvePoint {
                dim,
                hardware_s,
                software_s,
                speedup: hardware_s.map(|h| software_s / h),
            })
        })
        .collect()
}

#[wasm_bindgen]
pub fn kernel_speedup_curve(unroll: u32, exponent: f64, max_dim: usize, step: usize) -> String {
    to_json(speedup_curve(unroll, exponent, max_dim, step))
}

#[derive(Serialize)]
pub struct RepairComparison {
    pub lost: usize,
    pub lrc_blocks_read: usize,
    pub rs_blocks_read: usize,
}

/// Blocks read to rebuild block `lost` of an LRC(k,l,g) stripe, against a
/// full decode of the same stripe with an RS(k,l+g) code.
pub fn compare_repair(
    k: usize,
    l: usize,
    g: usize,
    lost: usize,
) -> Result<RepairComparison, String> {
    const BLOCK: usize = 64;
    let err = |e: csdguard::Error| e.to_string();
    let data: Vec<Vec<u8>> = (0..k)
        .map(|i| (0..BLOCK).map(|j| (i * 31 + j * 7) as u8).collect())
        .collect();
    let lrc = ErasureCode::lrc(LrcConfig::new(k, l, g, BLOCK).map_err(err)?);
    let rs = ErasureCode::rs(RsConfig::new(k, l + g, BLOCK).map_err(err)?);
    // Both codes have k + l + g blocks.
    if lost >= lrc.total() {
        return Err(format!(
            "block {lost} is outside a stripe of {}",
            lrc.total()
        ));
    }
    let count = |code: &ErasureCode, full: bool| -> Result<usize, String> {
        let stripe = code.encode_stripe(&data).map_err(err)?;
        let mut reader = |i: usize| Ok((i != lost).then(|| stripe[i].clone()));
        let r: &mut dyn ShardReader = &mut reader;
        let (block, report) = if full {
            code.repair_by_decode(lost, r)
        } else {
            code.repair_single(lost, r)
        }
        .map_err(err)?;
        if block != stripe[lost] {
            return Err("repair produced the wrong block".into());
        }
        Ok(report.blocks_read)
    };
    Ok(RepairComparison {
        lost,
        lrc_blocks_read: count(&lrc, false)?,
        rs_blocks_read: count(&rs, true)?,
    })
}

#[wasm_bindgen]
pub fn repair_reads(k: usize, l: usize, g: usize, lost: usize) -> String {
    to_json(compare_repair(k, l, g, lost))
}

#[derive(Serialize)]
pub struct ScorePoint {
    pub window: u64,
    pub score: f64,
    pub level: String,
}

/// Monitor scores over a stream of `benign` low-entropy writes to fresh
/// blocks followed by `attack` read-then-overwrite pairs with pseudo-random
/// payloads.
pub fn score_series(benign: u64, attack: u64, window: usize) -> Result<Vec<ScorePoint>, String> {
    if window == 0 {
        return Err("window must be positive".into());
    }
    let mut m = IoMonitor::new(MonitorConfig {
        window,
        ..MonitorConfig::default()
    });
    let text: Vec<u8> = b"quarterly report, draft 3\n"
        .iter()
        .copied()
        .cycle()
        .take(4096)
        .collect();
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    let mut noise = vec![0u8; 4096];
    let mut out = Vec::new();
    let mut push = |v: Option<csdguard::ransom::DetectionVerdict>| {
        if let Some(v) = v {
            out.push(ScorePoint {
                window: v.window_index,
                score: v.score,
                level: format!("{:?}", v.level).to_lowercase(),
            });
        }
    };
    for lba in 0..benign {
        push(m.observe(IoObservation::write(lba, &text, false)));
    }
    for i in 0..attack {
        let lba = i % benign.max(1);
        for b in noise.iter_mut() {
            // xorshift64*: enough spread for a full-entropy demo payload.
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            *b = (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 56) as u8;
        }
        push(m.observe(IoObservation::read(lba)));
        push(m.observe(IoObservation::write(lba, &noise, benign > 0)));
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn detection_series(benign: u64, attack: u64, window: usize) -> String {
    to_json(score_series(benign, attack, window))
}
