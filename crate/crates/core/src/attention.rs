//! Scaled dot-product attention over token grids, dense and with
//! downsampled keys/values.
//!
//! [`dense_attention`] is the reference kernel: per head and query row it
//! computes `softmax(scale * q K^T) V` with a max-subtracted softmax,
//! streaming one query row at a time so scratch memory stays `O(n_kv)`
//! regardless of the query count. [`todo_attention`] subsamples K and V on
//! the 2D grid via [`nearest_downsample`] while keeping every query, then
//! runs the same kernel — there is no unmerge step, the output keeps the
//! full query token count.
//!
//! Accumulation is sequential over ascending key index with f64
//! accumulators, which makes results bit-identical at any parallelism
//! degree: [`ExecMode::Parallel`] distributes whole query rows across
//! threads and each row's arithmetic is unchanged.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{nearest_downsample, DownsampleSpec, GridError, TokenGrid};

/// Errors for attention kernels and the FLOP model.
#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("q/k/v dims differ: q={q_dim}, k={k_dim}, v={v_dim}")]
    DimMismatch {
        q_dim: usize,
        k_dim: usize,
        v_dim: usize,
    },
    #[error("num_heads {num_heads} * head_dim {head_dim} != token dim {model_dim}")]
    HeadShape {
        num_heads: usize,
        head_dim: usize,
        model_dim: usize,
    },
    #[error("k grid {k_height}x{k_width} and v grid {v_height}x{v_width} must match")]
    KvShape {
        k_height: usize,
        k_width: usize,
        v_height: usize,
        v_width: usize,
    },
    #[error("attention scale {scale} must be positive and finite")]
    BadScale { scale: f32 },
    #[error("non-finite value in {operand} input")]
    NonFinite { operand: &'static str },
    #[error("flop count 4*{n_q}*{n_kv}*{dim} overflows u64")]
    FlopsOverflow {
        n_q: usize,
        n_kv: usize,
        dim: usize,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Head layout and logit scaling for one attention call.
///
/// The flat token dim is split into `num_heads` contiguous channel blocks of
/// `head_dim` each: head `h` owns channels `[h*head_dim, (h+1)*head_dim)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub head_dim: usize,
    /// Logit scale, by default `1/sqrt(head_dim)`.
    pub scale: f32,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, head_dim: usize) -> Self {
        Self {
            num_heads,
            head_dim,
            scale: 1.0 / (head_dim as f32).sqrt(),
        }
    }

    pub fn with_scale(num_heads: usize, head_dim: usize, scale: f32) -> Self {
        Self {
            num_heads,
            head_dim,
            scale,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }
}

/// Result of an attention call.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Attended tokens, same shape as the query grid.
    pub out: TokenGrid,
    /// Row-max of the attention logits per (query row, head), laid out as
    /// `probe[row * num_heads + head]`. `None` when the kernel did not run
    /// directly on the query grid (e.g. the merge-unmerge baseline).
    pub probe: Option<Vec<f32>>,
}

/// How a kernel schedules its per-row work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// One thread, rows in order. The default.
    Sequential,
    /// Query rows distributed over the rayon pool. Bitwise-identical output.
    Parallel,
}

/// Multiply-accumulate count of one attention call: `4 * n_q * n_kv * dim`
/// (QK^T and PV, two flops per element each). Overflow is an error, never a
/// wrapped value.
pub fn attention_workload_flops(
    n_q: usize,
    n_kv: usize,
    dim: usize,
) -> Result<u64, AttentionError> {
    let overflow = || AttentionError::FlopsOverflow { n_q, n_kv, dim };
    if n_q == 0 || n_kv == 0 || dim == 0 {
        return Err(GridError::ZeroDimension { what: "flop factor" }.into());
    }
    4u64.checked_mul(n_q as u64)
        .and_then(|f| f.checked_mul(n_kv as u64))
        .and_then(|f| f.checked_mul(dim as u64))
        .ok_or_else(overflow)
}

/// Dense attention: `softmax(scale * Q K^T) V` per head, sequential kernel.
pub fn dense_attention(
    q: &TokenGrid,
    k: &TokenGrid,
    v: &TokenGrid,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput, AttentionError> {
    dense_attention_with(q, k, v, cfg, ExecMode::Sequential)
}

/// Dense attention with an explicit execution mode.
pub fn dense_attention_with(
    q: &TokenGrid,
    k: &TokenGrid,
    v: &TokenGrid,
    cfg: &AttentionConfig,
    mode: ExecMode,
) -> Result<AttentionOutput, AttentionError> {
    validate(q, k, v, cfg)?;

    let n_q = q.num_tokens();
    let n_kv = k.num_tokens();
    let dim = q.dim();
    let heads = cfg.num_heads;
    let head_dim = cfg.head_dim;
    let scale = cfg.scale as f64;

    let mut out = vec![0f32; n_q * dim];
    let mut probe = vec![0f32; n_q * heads];
    let k_data = k.data();
    let v_data = v.data();
    let q_data = q.data();

    // Query rows are processed in small blocks so each K/V row is walked
    // once per block instead of once per row. Every query row keeps its own
    // accumulators and its keys are consumed in ascending order, so results
    // are independent of the blocking and of the execution mode.
    let block_job = |block_idx: usize, out_block: &mut [f32], probe_block: &mut [f32], scratch: &mut Scratch| {
        let rows = out_block.len() / dim;
        let q_block = &q_data[block_idx * QUERY_BLOCK * dim..][..rows * dim];
        scratch.logits.clear();
        scratch.logits.resize(rows * heads * n_kv, 0.0);
        scratch.denoms.clear();
        scratch.denoms.resize(rows * heads, 0.0);
        scratch.acc.clear();
        scratch.acc.resize(rows * dim, 0.0);

        // Pass 1: logits, one contiguous walk of K per block.
        for j in 0..n_kv {
            let k_row = &k_data[j * dim..(j + 1) * dim];
            for h in 0..heads {
                let lo = h * head_dim;
                let k_sub = &k_row[lo..lo + head_dim];
                for row in 0..rows {
                    let q_sub = &q_block[row * dim + lo..row * dim + lo + head_dim];
                    scratch.logits[(row * heads + h) * n_kv + j] = scale * dot_f64(q_sub, k_sub);
                }
            }
        }

        // Pass 2: per (row, head) max-subtracted exponentials and their
        // sum. The max element maps to exp(0) = 1, so the denominator is
        // always >= 1.
        for row in 0..rows {
            for h in 0..heads {
                let lane = &mut scratch.logits[(row * heads + h) * n_kv..][..n_kv];
                let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                probe_block[row * heads + h] = max as f32;
                let mut denom = 0.0f64;
                for slot in lane.iter_mut() {
                    let e = (*slot - max).exp();
                    *slot = e;
                    denom += e;
                }
                scratch.denoms[row * heads + h] = denom;
            }
        }

        // Pass 3: weighted value accumulation, ascending key index, one
        // contiguous walk of V per block.
        for j in 0..n_kv {
            let v_row = &v_data[j * dim..(j + 1) * dim];
            for h in 0..heads {
                let lo = h * head_dim;
                let v_sub = &v_row[lo..lo + head_dim];
                for row in 0..rows {
                    let w = scratch.logits[(row * heads + h) * n_kv + j];
                    let acc = &mut scratch.acc[row * dim + lo..][..head_dim];
                    for (a, &vv) in acc.iter_mut().zip(v_sub) {
                        *a += w * vv as f64;
                    }
                }
            }
        }
        for row in 0..rows {
            for h in 0..heads {
                let denom = scratch.denoms[row * heads + h];
                let lo = h * head_dim;
                for c in lo..lo + head_dim {
                    out_block[row * dim + c] = (scratch.acc[row * dim + c] / denom) as f32;
                }
            }
        }
    };

    match mode {
        ExecMode::Sequential => {
            let mut scratch = Scratch::default();
            for (block_idx, (out_block, probe_block)) in out
                .chunks_mut(QUERY_BLOCK * dim)
                .zip(probe.chunks_mut(QUERY_BLOCK * heads))
                .enumerate()
            {
                block_job(block_idx, out_block, probe_block, &mut scratch);
            }
        }
        ExecMode::Parallel => {
            out.par_chunks_mut(QUERY_BLOCK * dim)
                .zip(probe.par_chunks_mut(QUERY_BLOCK * heads))
                .enumerate()
                .for_each_init(Scratch::default, |scratch, (block_idx, (out_block, probe_block))| {
                    block_job(block_idx, out_block, probe_block, scratch);
                });
        }
    }

    let out = TokenGrid::new(q.height(), q.width(), dim, out)?;
    Ok(AttentionOutput {
        out,
        probe: Some(probe),
    })
}

/// Attention with downsampled keys and values and the full query set:
/// `softmax(scale * Q D(K)^T) D(V)` where `D` is [`nearest_downsample`].
pub fn todo_attention(
    q: &TokenGrid,
    k: &TokenGrid,
    v: &TokenGrid,
    spec: DownsampleSpec,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput, AttentionError> {
    todo_attention_with(q, k, v, spec, cfg, ExecMode::Sequential)
}

/// [`todo_attention`] with an explicit execution mode.
pub fn todo_attention_with(
    q: &TokenGrid,
    k: &TokenGrid,
    v: &TokenGrid,
    spec: DownsampleSpec,
    cfg: &AttentionConfig,
    mode: ExecMode,
) -> Result<AttentionOutput, AttentionError> {
    let k_small = nearest_downsample(k, spec)?;
    let v_small = nearest_downsample(v, spec)?;
    dense_attention_with(q, &k_small, &v_small, cfg, mode)
}

fn validate(
    q: &TokenGrid,
    k: &TokenGrid,
    v: &TokenGrid,
    cfg: &AttentionConfig,
) -> Result<(), AttentionError> {
    if q.dim() != k.dim() || q.dim() != v.dim() {
        return Err(AttentionError::DimMismatch {
            q_dim: q.dim(),
            k_dim: k.dim(),
            v_dim: v.dim(),
        });
    }
    if k.height() != v.height() || k.width() != v.width() {
        return Err(AttentionError::KvShape {
            k_height: k.height(),
            k_width: k.width(),
            v_height: v.height(),
            v_width: v.width(),
        });
    }
    if cfg.model_dim() != q.dim() {
        return Err(AttentionError::HeadShape {
            num_heads: cfg.num_heads,
            head_dim: cfg.head_dim,
            model_dim: q.dim(),
        });
    }
    if !(cfg.scale.is_finite() && cfg.scale > 0.0) {
        return Err(AttentionError::BadScale { scale: cfg.scale });
    }
    for (grid, operand) in [(q, "q"), (k, "k"), (v, "v")] {
        if !grid.is_finite() {
            return Err(AttentionError::NonFinite { operand });
        }
    }
    Ok(())
}

/// Query rows handled per K/V walk.
const QUERY_BLOCK: usize = 4;

/// Per-thread scratch for the block kernel; reused across blocks.
#[derive(Default)]
struct Scratch {
    logits: Vec<f64>,
    denoms: Vec<f64>,
    acc: Vec<f64>,
}

/// Dot product of two f32 slices accumulated in f64, eight independent
/// lanes. The lane split is fixed, so results do not depend on call
/// context (or thread count), only on the inputs.
#[inline]
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0f64; 8];
    let a_chunks = a.chunks_exact(8);
    let b_chunks = b.chunks_exact(8);
    let a_tail = a_chunks.remainder();
    let b_tail = b_chunks.remainder();
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for i in 0..8 {
            lanes[i] += ca[i] as f64 * cb[i] as f64;
        }
    }
    for (i, (x, y)) in a_tail.iter().zip(b_tail).enumerate() {
        lanes[i] += *x as f64 * *y as f64;
    }
    let a01 = lanes[0] + lanes[1];
    let a23 = lanes[2] + lanes[3];
    let a45 = lanes[4] + lanes[5];
    let a67 = lanes[6] + lanes[7];
    (a01 + a23) + (a45 + a67)
}
