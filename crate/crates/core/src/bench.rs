//! Throughput harness for the attention kernels and the attention-map
//! memory estimator.
//!
//! [`run_bench`] times one method on a seeded Gaussian workload: untimed
//! warmup iterations, then the median wall time of the timed repeats.
//! Non-dense methods are reported relative to a dense baseline of the same
//! shape measured in the same session. [`paper_preset_suite`] runs the
//! {dense, todo, tome} x {128x128, 192x192, 256x256 tokens} x {0.75, 0.89}
//! grid at dim 320 / 8 heads — the token shapes that 1024/1536/2048-pixel
//! images map to at the usual 8x latent compression — measuring dense once
//! per shape (15 records). All kernels stream one query row at a time, so
//! even the dense 256x256 case needs only O(n_kv) scratch.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::attention::{
    dense_attention_with, todo_attention_with, AttentionConfig, AttentionError, ExecMode,
};
use crate::grid::{ratio_to_spec, GridError, MergeRatio, TokenGrid};
use crate::tome::{dst_count, tome_attention_with, TomeError};

/// Errors for benchmark setup and the memory estimator.
#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("{name} must be positive")]
    ZeroArgument { name: &'static str },
    #[error("memory product overflows 128-bit arithmetic")]
    Overflow,
    #[error("baseline record is {got:?}, expected dense at {expected:?}")]
    BaselineMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("dim {dim} not divisible by {heads} heads")]
    HeadSplit { dim: usize, heads: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Tome(#[from] TomeError),
}

/// Attention variant under benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dense,
    Todo,
    Tome,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dense => "dense",
            Method::Todo => "todo",
            Method::Tome => "tome",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Method::Dense),
            "todo" => Ok(Method::Todo),
            "tome" => Ok(Method::Tome),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// One benchmark measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: Method,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub merge_ratio: f64,
    /// Median wall time of the timed repeats, nanoseconds.
    pub wall_nanos: u64,
    pub repeats: u32,
    /// Query tokens attended per second at the median wall time.
    pub throughput: f64,
    /// Dense baseline median over this record's median; 1.0 for dense.
    pub speedup_vs_dense: f64,
}

/// Exact CSV header emitted for benchmark records.
pub const CSV_HEADER: &str =
    "method,height,width,dim,ratio,repeats,wall_nanos_median,throughput_tokens_per_s,speedup_vs_dense";

/// One CSV row, no trailing newline.
pub fn record_csv_row(rec: &BenchRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{:.3},{:.3}",
        rec.method,
        rec.height,
        rec.width,
        rec.dim,
        rec.merge_ratio,
        rec.repeats,
        rec.wall_nanos,
        rec.throughput,
        rec.speedup_vs_dense
    )
}

/// Full CSV document with header and LF line endings.
pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for rec in records {
        out.push_str(&record_csv_row(rec));
        out.push('\n');
    }
    out
}

/// Size of one attention map in bytes: `batch * heads * n_q * n_kv *
/// bytes_per_element`, computed exactly in 128-bit arithmetic. Overflow is
/// reported, never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub batch: u64,
    pub heads: u64,
    pub n_q: u64,
    pub n_kv: u64,
    pub bytes_per_element: u64,
    pub total_bytes: u128,
}

impl MemoryEstimate {
    /// Decimal gigabytes (10^9 bytes).
    pub fn gigabytes(&self) -> f64 {
        self.total_bytes as f64 / 1e9
    }

    /// Binary gibibytes (2^30 bytes).
    pub fn gibibytes(&self) -> f64 {
        self.total_bytes as f64 / (1u64 << 30) as f64
    }
}

/// Attention-map memory for a workload shape.
pub fn estimate_attention_memory(
    batch: u64,
    heads: u64,
    n_q: u64,
    n_kv: u64,
    bytes_per_element: u64,
) -> Result<MemoryEstimate, BenchError> {
    for (value, name) in [
        (batch, "batch"),
        (heads, "heads"),
        (n_q, "n_q"),
        (n_kv, "n_kv"),
        (bytes_per_element, "bytes_per_element"),
    ] {
        if value == 0 {
            return Err(BenchError::ZeroArgument { name });
        }
    }
    let total_bytes = (batch as u128)
        .checked_mul(heads as u128)
        .and_then(|t| t.checked_mul(n_q as u128))
        .and_then(|t| t.checked_mul(n_kv as u128))
        .and_then(|t| t.checked_mul(bytes_per_element as u128))
        .ok_or(BenchError::Overflow)?;
    Ok(MemoryEstimate {
        batch,
        heads,
        n_q,
        n_kv,
        bytes_per_element,
        total_bytes,
    })
}

/// Token-grid side length for a square image side at the usual 8x latent
/// compression (2048 pixels -> 256 tokens per axis).
pub fn latent_side(image_side: usize) -> usize {
    image_side / 8
}

/// Parameters shared by every benchmarked method.
#[derive(Debug, Clone, Copy)]
pub struct BenchParams {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub cfg: AttentionConfig,
    pub ratio: MergeRatio,
    pub repeats: u32,
    pub warmup: u32,
    pub seed: u64,
    pub mode: ExecMode,
}

impl BenchParams {
    /// Defaults from the harness design: 20 timed repeats after 3 warmup
    /// iterations, sequential kernel.
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        heads: usize,
        ratio: MergeRatio,
        seed: u64,
    ) -> Result<Self, BenchError> {
        if heads == 0 {
            return Err(BenchError::ZeroArgument { name: "heads" });
        }
        if dim == 0 {
            return Err(BenchError::ZeroArgument { name: "dim" });
        }
        if dim % heads != 0 {
            return Err(BenchError::HeadSplit { dim, heads });
        }
        Ok(Self {
            height,
            width,
            dim,
            cfg: AttentionConfig::new(heads, dim / heads),
            ratio,
            repeats: 20,
            warmup: 3,
            seed,
            mode: ExecMode::Sequential,
        })
    }

    pub fn with_timing(mut self, repeats: u32, warmup: u32) -> Self {
        self.repeats = repeats.max(1);
        self.warmup = warmup;
        self
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Seeded Gaussian Q/K/V grids; identical for identical seeds.
pub fn workload_grids(
    height: usize,
    width: usize,
    dim: usize,
    seed: u64,
) -> Result<(TokenGrid, TokenGrid, TokenGrid), GridError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = |_| -> Result<TokenGrid, GridError> {
        let data = (0..height * width * dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        TokenGrid::new(height, width, dim, data)
    };
    Ok((grid(0)?, grid(1)?, grid(2)?))
}

fn median_nanos(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    };
    median.max(1)
}

/// Times `method` on the seeded workload. Non-dense methods measure a dense
/// baseline of the same shape in the same call; to share one baseline
/// across several runs use [`run_bench_with_baseline`].
pub fn run_bench(method: Method, params: &BenchParams) -> Result<BenchRecord, BenchError> {
    match method {
        Method::Dense => run_bench_with_baseline(method, params, None),
        _ => {
            let baseline = run_bench_with_baseline(Method::Dense, params, None)?;
            run_bench_with_baseline(method, params, Some(&baseline))
        }
    }
}

/// Times `method`, computing speedup against the provided dense baseline
/// (shape-checked). Dense records always carry speedup 1.0.
pub fn run_bench_with_baseline(
    method: Method,
    params: &BenchParams,
    baseline: Option<&BenchRecord>,
) -> Result<BenchRecord, BenchError> {
    let (h, w, dim) = (params.height, params.width, params.dim);
    if let Some(base) = baseline {
        if base.method != Method::Dense || (base.height, base.width, base.dim) != (h, w, dim) {
            return Err(BenchError::BaselineMismatch {
                expected: (h, w, dim),
                got: (base.height, base.width, base.dim),
            });
        }
    }

    let (q, k, v) = workload_grids(h, w, dim, params.seed)?;
    let n = q.num_tokens();
    let spec = ratio_to_spec(params.ratio, h, w)?;
    // Requested merge count, capped at the source-set capacity the 2x2
    // destination layout leaves available (ratios above 0.75 saturate).
    let r = (((params.ratio.value() * n as f64).round() as usize).min(n - dst_count(h, w)))
        .min(n.saturating_sub(1));

    let iteration = || -> Result<(), BenchError> {
        match method {
            Method::Dense => {
                std::hint::black_box(dense_attention_with(&q, &k, &v, &params.cfg, params.mode)?);
            }
            Method::Todo => {
                std::hint::black_box(todo_attention_with(
                    &q,
                    &k,
                    &v,
                    spec,
                    &params.cfg,
                    params.mode,
                )?);
            }
            Method::Tome => {
                std::hint::black_box(tome_attention_with(
                    &q,
                    r,
                    params.seed,
                    &params.cfg,
                    params.mode,
                )?);
            }
        }
        Ok(())
    };

    for _ in 0..params.warmup {
        iteration()?;
    }
    let mut samples = Vec::with_capacity(params.repeats as usize);
    for _ in 0..params.repeats.max(1) {
        let start = Instant::now();
        iteration()?;
        samples.push(start.elapsed().as_nanos() as u64);
    }
    let wall_nanos = median_nanos(&mut samples);

    let merge_ratio = match method {
        Method::Dense => 0.0,
        _ => params.ratio.value(),
    };
    let speedup_vs_dense = match (method, baseline) {
        (Method::Dense, _) => 1.0,
        (_, Some(base)) => base.wall_nanos as f64 / wall_nanos as f64,
        (_, None) => 1.0,
    };
    Ok(BenchRecord {
        method,
        height: h,
        width: w,
        dim,
        merge_ratio,
        wall_nanos,
        repeats: params.repeats.max(1),
        throughput: n as f64 / (wall_nanos as f64 / 1e9),
        speedup_vs_dense,
    })
}

/// Preset workload grid: per shape one dense run plus todo/tome at each
/// ratio. 15 entries of `(method, height, width, ratio)`.
pub fn preset_workloads() -> Vec<(Method, usize, usize, f64)> {
    let mut out = Vec::with_capacity(15);
    for side in [latent_side(1024), latent_side(1536), latent_side(2048)] {
        out.push((Method::Dense, side, side, 0.0));
        for ratio in [0.75, 0.89] {
            out.push((Method::Todo, side, side, ratio));
            out.push((Method::Tome, side, side, ratio));
        }
    }
    out
}

/// Preset dim and head count: the widest common diffusion U-Net block.
pub const PRESET_DIM: usize = 320;
pub const PRESET_HEADS: usize = 8;

/// Runs [`preset_workloads`] at default timing (20 repeats, 3 warmup,
/// sequential, seed 0). Expect this to take a while at the 256x256 shape.
pub fn paper_preset_suite() -> Result<Vec<BenchRecord>, BenchError> {
    paper_preset_suite_with(20, 3, 0, ExecMode::Sequential)
}

/// [`paper_preset_suite`] with explicit timing controls. The dense baseline
/// is measured once per shape and reused for that shape's speedups.
pub fn paper_preset_suite_with(
    repeats: u32,
    warmup: u32,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<BenchRecord>, BenchError> {
    let mut records = Vec::with_capacity(15);
    let mut baseline: Option<BenchRecord> = None;
    for (method, h, w, ratio) in preset_workloads() {
        let params = BenchParams::new(h, w, PRESET_DIM, PRESET_HEADS, MergeRatio::new(ratio)?, seed)?
            .with_timing(repeats, warmup)
            .with_mode(mode);
        let record = run_bench_with_baseline(method, &params, baseline.as_ref())?;
        if method == Method::Dense {
            baseline = Some(record.clone());
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_estimate_matches_half_precision_example() {
        let est = estimate_attention_memory(1, 8, 65536, 65536, 2).unwrap();
        assert_eq!(est.total_bytes, 68_719_476_736);
        assert!((est.gigabytes() - 68.719476736).abs() < 1e-9);
        assert_eq!(est.gibibytes(), 64.0);
    }

    #[test]
    fn memory_estimate_unit_and_quarter() {
        assert_eq!(
            estimate_attention_memory(1, 1, 1, 1, 1).unwrap().total_bytes,
            1
        );
        let dense = estimate_attention_memory(1, 8, 65536, 65536, 2).unwrap();
        let halved = estimate_attention_memory(1, 8, 65536, 16384, 2).unwrap();
        assert_eq!(halved.total_bytes * 4, dense.total_bytes);
    }

    #[test]
    fn memory_estimate_rejects_zero_and_detects_overflow() {
        assert_eq!(
            estimate_attention_memory(0, 8, 1, 1, 2).unwrap_err(),
            BenchError::ZeroArgument { name: "batch" }
        );
        assert_eq!(
            estimate_attention_memory(u64::MAX, u64::MAX, u64::MAX, 2, 2).unwrap_err(),
            BenchError::Overflow
        );
    }

    #[test]
    fn preset_covers_15_workloads_with_one_dense_per_shape() {
        let workloads = preset_workloads();
        assert_eq!(workloads.len(), 15);
        let dense: Vec<_> = workloads
            .iter()
            .filter(|(m, ..)| *m == Method::Dense)
            .collect();
        assert_eq!(dense.len(), 3);
        for side in [128, 192, 256] {
            assert_eq!(
                workloads.iter().filter(|(_, h, ..)| *h == side).count(),
                5
            );
        }
    }

    #[test]
    fn latent_mapping_is_one_eighth() {
        assert_eq!(latent_side(1024), 128);
        assert_eq!(latent_side(1536), 192);
        assert_eq!(latent_side(2048), 256);
    }

    #[test]
    fn workloads_are_seed_deterministic() {
        let (q1, k1, v1) = workload_grids(8, 8, 16, 99).unwrap();
        let (q2, k2, v2) = workload_grids(8, 8, 16, 99).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(k1, k2);
        assert_eq!(v1, v2);
        let (q3, _, _) = workload_grids(8, 8, 16, 100).unwrap();
        assert_ne!(q1, q3);
    }

    #[test]
    fn csv_header_and_row_shape() {
        assert_eq!(
            CSV_HEADER,
            "method,height,width,dim,ratio,repeats,wall_nanos_median,throughput_tokens_per_s,speedup_vs_dense"
        );
        let rec = BenchRecord {
            method: Method::Todo,
            height: 64,
            width: 64,
            dim: 64,
            merge_ratio: 0.75,
            wall_nanos: 1_000_000,
            repeats: 5,
            throughput: 4096e3,
            speedup_vs_dense: 3.5,
        };
        let row = record_csv_row(&rec);
        assert_eq!(row, "todo,64,64,64,0.75,5,1000000,4096000.000,3.500");
        let csv = records_to_csv(&[rec]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn bench_smoke_on_tiny_shape() {
        let params = BenchParams::new(8, 8, 16, 2, MergeRatio::new(0.75).unwrap(), 7)
            .unwrap()
            .with_timing(3, 1);
        let dense = run_bench(Method::Dense, &params).unwrap();
        assert_eq!(dense.speedup_vs_dense, 1.0);
        assert_eq!(dense.merge_ratio, 0.0);
        assert!(dense.wall_nanos > 0);
        assert!(dense.throughput > 0.0);

        let todo = run_bench_with_baseline(Method::Todo, &params, Some(&dense)).unwrap();
        assert_eq!(todo.merge_ratio, 0.75);
        assert!(todo.speedup_vs_dense > 0.0);

        let tome = run_bench_with_baseline(Method::Tome, &params, Some(&dense)).unwrap();
        assert!(tome.wall_nanos > 0);
    }

    #[test]
    fn tome_ratio_above_capacity_is_capped() {
        // 0.89 of 64 tokens wants 57 merges but the 2x2 dst layout leaves
        // only 48 sources; the run must still succeed.
        let params = BenchParams::new(8, 8, 8, 1, MergeRatio::new(0.89).unwrap(), 3)
            .unwrap()
            .with_timing(1, 0);
        let rec = run_bench(Method::Tome, &params).unwrap();
        assert_eq!(rec.merge_ratio, 0.89);
    }

    #[test]
    fn baseline_shape_is_checked() {
        let params = BenchParams::new(8, 8, 16, 2, MergeRatio::zero(), 1)
            .unwrap()
            .with_timing(1, 0);
        let other = BenchParams::new(4, 4, 16, 2, MergeRatio::zero(), 1)
            .unwrap()
            .with_timing(1, 0);
        let base = run_bench(Method::Dense, &other).unwrap();
        assert!(matches!(
            run_bench_with_baseline(Method::Todo, &params, Some(&base)),
            Err(BenchError::BaselineMismatch { .. })
        ));
    }

    #[test]
    fn params_validate_head_split() {
        assert!(matches!(
            BenchParams::new(8, 8, 10, 4, MergeRatio::zero(), 0),
            Err(BenchError::HeadSplit { dim: 10, heads: 4 })
        ));
    }
}
