//! Token-merging baseline: bipartite soft matching, merge by averaging,
//! and unmerge.
//!
//! Tokens are split into a destination set (one randomly chosen token per
//! complete 2x2 spatial cell, seeded and reproducible) and a source set
//! (everything else). Every source token is scored against every
//! destination token with [`cosine_similarity`] — the quadratic similarity
//! matrix this pipeline is known for — and the `r` best-matched sources are
//! merged into their destinations by unweighted averaging. Unmerging
//! broadcasts each merged destination back to the source positions it
//! absorbed.
//!
//! The number of similarity evaluations is recorded on the plan
//! ([`TomePlan::similarity_evals`]) so the quadratic cost can be asserted
//! against the linear token-touch count of grid downsampling.

use thiserror::Error;

use crate::attention::{
    dense_attention_with, AttentionConfig, AttentionError, AttentionOutput, ExecMode,
};
use crate::grid::TokenGrid;
use crate::metrics::cosine_similarity;

/// Errors for plan construction and the merge-unmerge cycle.
#[derive(Debug, Error, PartialEq)]
pub enum TomeError {
    #[error("grid {height}x{width} too small for 2x2 cells")]
    GridTooSmall { height: usize, width: usize },
    #[error("r = {r} out of range, source set holds {max} tokens")]
    ROutOfRange { r: usize, max: usize },
    #[error("plan built for {expected:?} does not match grid {got:?} (height, width, dim)")]
    PlanMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("merged sequence has {got} tokens, plan expects {expected}")]
    MergedLength { expected: usize, got: usize },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// One selected merge: source token, its destination, and their score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TomeMatch {
    pub src: usize,
    pub dst: usize,
    pub similarity: f64,
}

/// A computed merge plan over a fixed grid shape.
///
/// `dst_indices` and `src_indices` partition `0..height*width`; `matches`
/// holds the `r` merges ordered by descending similarity (ties toward the
/// lower source index).
#[derive(Debug, Clone, PartialEq)]
pub struct TomePlan {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub dst_indices: Vec<usize>,
    pub src_indices: Vec<usize>,
    pub matches: Vec<TomeMatch>,
    pub r: usize,
    /// Similarity evaluations performed while building the plan
    /// (`|src| * |dst|`).
    pub similarity_evals: u64,
}

impl TomePlan {
    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }

    /// Token count after merging, `n - r`.
    pub fn merged_len(&self) -> usize {
        self.num_tokens() - self.r
    }
}

/// SplitMix64 finalizer.
fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Value `(seed, k)`: the `(k+1)`-th output of a SplitMix64 stream seeded
/// with `seed`. Stable across platforms; `% 4` picks the destination slot
/// within cell `k`.
fn cell_value(seed: u64, cell: u64) -> u64 {
    splitmix64_mix(seed.wrapping_add(cell.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Destination token count for a grid shape: one per complete 2x2 cell.
pub fn dst_count(height: usize, width: usize) -> usize {
    (height / 2) * (width / 2)
}

/// Builds the merge plan: seeded per-cell destination choice, exhaustive
/// src-vs-dst cosine scoring, and selection of the `r` best matches.
///
/// Deterministic given `(tokens, r, seed)`; all ties break toward the lower
/// index.
pub fn bipartite_soft_matching(
    tokens: &TokenGrid,
    r: usize,
    seed: u64,
) -> Result<TomePlan, TomeError> {
    let (h, w) = (tokens.height(), tokens.width());
    if h < 2 || w < 2 {
        return Err(TomeError::GridTooSmall {
            height: h,
            width: w,
        });
    }

    let n = tokens.num_tokens();
    let cells_x = w / 2;
    let mut is_dst = vec![false; n];
    for cy in 0..h / 2 {
        for cx in 0..cells_x {
            let cell = (cy * cells_x + cx) as u64;
            let offset = (cell_value(seed, cell) % 4) as usize;
            let (dy, dx) = (offset / 2, offset % 2);
            is_dst[(2 * cy + dy) * w + (2 * cx + dx)] = true;
        }
    }
    let dst_indices: Vec<usize> = (0..n).filter(|&i| is_dst[i]).collect();
    let src_indices: Vec<usize> = (0..n).filter(|&i| !is_dst[i]).collect();

    if r > src_indices.len() {
        return Err(TomeError::ROutOfRange {
            r,
            max: src_indices.len(),
        });
    }

    // Exhaustive similarity matrix: every src against every dst. This is
    // the O(n^2) step; each evaluation is counted.
    let mut similarity_evals = 0u64;
    let mut candidates: Vec<TomeMatch> = Vec::with_capacity(src_indices.len());
    for &src in &src_indices {
        let mut best_dst = usize::MAX;
        let mut best_sim = f64::NEG_INFINITY;
        for &dst in &dst_indices {
            let sim = cosine_similarity(tokens.row(src), tokens.row(dst));
            similarity_evals += 1;
            if sim > best_sim {
                best_sim = sim;
                best_dst = dst;
            }
        }
        candidates.push(TomeMatch {
            src,
            dst: best_dst,
            similarity: best_sim,
        });
    }

    // Highest similarity first, lower src index on ties. `candidates` is
    // already in ascending src order, so a stable sort on the score alone
    // would also do; keep the tie rule explicit.
    candidates.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.src.cmp(&b.src))
    });
    candidates.truncate(r);

    Ok(TomePlan {
        height: h,
        width: w,
        dim: tokens.dim(),
        dst_indices,
        src_indices,
        matches: candidates,
        r,
        similarity_evals,
    })
}

fn check_plan_shape(plan: &TomePlan, grid: &TokenGrid) -> Result<(), TomeError> {
    let expected = (plan.height, plan.width, plan.dim);
    let got = (grid.height(), grid.width(), grid.dim());
    if expected != got {
        return Err(TomeError::PlanMismatch { expected, got });
    }
    Ok(())
}

/// Applies a plan: each destination becomes the unweighted mean of itself
/// and the sources merged into it (accumulated in f64, sources added in
/// ascending index order); surviving sources pass through untouched.
///
/// Output is a `1 x (n - r)` grid: destinations first, then surviving
/// sources, each block in ascending original index.
pub fn tome_merge(tokens: &TokenGrid, plan: &TomePlan) -> Result<TokenGrid, TomeError> {
    check_plan_shape(plan, tokens)?;
    let dim = tokens.dim();

    let mut merged_srcs: Vec<bool> = vec![false; tokens.num_tokens()];
    // matches are sorted by similarity; group per dst in ascending src order.
    let mut group: Vec<Vec<usize>> = vec![Vec::new(); plan.dst_indices.len()];
    let dst_rank: std::collections::HashMap<usize, usize> = plan
        .dst_indices
        .iter()
        .enumerate()
        .map(|(rank, &idx)| (idx, rank))
        .collect();
    for m in &plan.matches {
        merged_srcs[m.src] = true;
        group[dst_rank[&m.dst]].push(m.src);
    }
    for g in &mut group {
        g.sort_unstable();
    }

    let mut data = Vec::with_capacity(plan.merged_len() * dim);
    for (rank, &dst) in plan.dst_indices.iter().enumerate() {
        let mut acc: Vec<f64> = tokens.row(dst).iter().map(|&x| x as f64).collect();
        for &src in &group[rank] {
            for (a, &x) in acc.iter_mut().zip(tokens.row(src)) {
                *a += x as f64;
            }
        }
        let count = (group[rank].len() + 1) as f64;
        data.extend(acc.iter().map(|a| (a / count) as f32));
    }
    for &src in &plan.src_indices {
        if !merged_srcs[src] {
            data.extend_from_slice(tokens.row(src));
        }
    }

    Ok(TokenGrid::new(1, plan.merged_len(), dim, data)?)
}

/// Reconstructs the full grid from a merged sequence: surviving tokens go
/// back to their original positions and every merged-away source receives a
/// copy of its destination's merged token.
pub fn tome_unmerge(merged: &TokenGrid, plan: &TomePlan) -> Result<TokenGrid, TomeError> {
    if merged.num_tokens() != plan.merged_len() {
        return Err(TomeError::MergedLength {
            expected: plan.merged_len(),
            got: merged.num_tokens(),
        });
    }
    if merged.dim() != plan.dim {
        return Err(TomeError::PlanMismatch {
            expected: (plan.height, plan.width, plan.dim),
            got: (merged.height(), merged.width(), merged.dim()),
        });
    }

    let n = plan.num_tokens();
    let dim = plan.dim;
    // Merged layout: dst block then surviving-src block, both ascending.
    let mut merged_row = vec![usize::MAX; n];
    for (rank, &dst) in plan.dst_indices.iter().enumerate() {
        merged_row[dst] = rank;
    }
    let merged_srcs: std::collections::HashSet<usize> =
        plan.matches.iter().map(|m| m.src).collect();
    let mut next = plan.dst_indices.len();
    for &src in &plan.src_indices {
        if !merged_srcs.contains(&src) {
            merged_row[src] = next;
            next += 1;
        }
    }
    for m in &plan.matches {
        merged_row[m.src] = merged_row[m.dst];
    }

    let mut data = Vec::with_capacity(n * dim);
    for row in merged_row {
        data.extend_from_slice(merged.row(row));
    }
    Ok(TokenGrid::new(plan.height, plan.width, dim, data)?)
}

/// The full baseline pipeline on one token set: match, merge, dense
/// self-attention over the `n - r` merged tokens, unmerge back to `n`.
pub fn tome_attention(
    tokens: &TokenGrid,
    r: usize,
    seed: u64,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput, TomeError> {
    tome_attention_with(tokens, r, seed, cfg, ExecMode::Sequential)
}

/// [`tome_attention`] with an explicit execution mode for the inner kernel.
pub fn tome_attention_with(
    tokens: &TokenGrid,
    r: usize,
    seed: u64,
    cfg: &AttentionConfig,
    mode: ExecMode,
) -> Result<AttentionOutput, TomeError> {
    let plan = bipartite_soft_matching(tokens, r, seed)?;
    let merged = tome_merge(tokens, &plan)?;
    let attended = dense_attention_with(&merged, &merged, &merged, cfg, mode)?;
    let out = tome_unmerge(&attended.out, &plan)?;
    Ok(AttentionOutput { out, probe: None })
}
