//! Fidelity metrics and the cosine-similarity redundancy analyzer.
//!
//! [`mse_planes`]/[`mse_grids`] measure deviation from a baseline,
//! [`hpf_magnitude`] measures retained high-frequency content (mean
//! absolute response under a 3x3 Laplacian), and [`neighborhood_stats`]
//! quantifies how redundant spatially adjacent tokens are: per-token
//! min/mean/max cosine similarity inside a k x k window plus the fraction
//! of tokens whose three globally most similar partners all fall inside
//! their 3x3 neighborhood.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::grid::TokenGrid;

/// Errors for metric computations.
#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {left:?} vs {right:?} (height, width, dim)")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("image {height}x{width} too small, need at least {min}x{min}")]
    TooSmall {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("neighborhood size {k} unsupported, expected 3 or 5")]
    BadNeighborhood { k: usize },
    #[error("{what} must be positive")]
    ZeroDimension { what: &'static str },
    #[error("pixel length {got} does not match height*width = {expected}")]
    PixelLength { expected: usize, got: usize },
    #[error("non-finite pixel value")]
    NonFinite,
    #[error("channel {channel} out of range for dim {dim}")]
    BadChannel { channel: usize, dim: usize },
}

/// Single-channel image stored row-major. Multi-channel data is handled as
/// one plane per channel (see [`channel_plane`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, MetricsError> {
        if height == 0 {
            return Err(MetricsError::ZeroDimension { what: "height" });
        }
        if width == 0 {
            return Err(MetricsError::ZeroDimension { what: "width" });
        }
        if pixels.len() != height * width {
            return Err(MetricsError::PixelLength {
                expected: height * width,
                got: pixels.len(),
            });
        }
        if !pixels.iter().all(|p| p.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    fn at(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Extracts channel `c` of a token grid as an image plane.
pub fn channel_plane(grid: &TokenGrid, channel: usize) -> Result<ImagePlane, MetricsError> {
    if channel >= grid.dim() {
        return Err(MetricsError::BadChannel {
            channel,
            dim: grid.dim(),
        });
    }
    let pixels = (0..grid.num_tokens())
        .map(|i| grid.row(i)[channel])
        .collect();
    ImagePlane::new(grid.height(), grid.width(), pixels)
}

/// Aggregated neighborhood similarity statistics for one grid.
///
/// `min_sim`/`mean_sim`/`max_sim` are grid-wide means of the per-token
/// minimum/mean/maximum cosine similarity inside the k x k window (self
/// excluded, truncated at borders). `top3_fraction` is measured against the
/// 3x3 neighborhood regardless of `neighborhood`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityStats {
    pub neighborhood: usize,
    pub min_sim: f64,
    pub mean_sim: f64,
    pub max_sim: f64,
    pub top3_fraction: f64,
}

fn mse_slices(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Mean squared error between two planes of identical shape, accumulated in
/// double precision.
pub fn mse_planes(a: &ImagePlane, b: &ImagePlane) -> Result<f64, MetricsError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(MetricsError::ShapeMismatch {
            left: (a.height, a.width, 1),
            right: (b.height, b.width, 1),
        });
    }
    Ok(mse_slices(&a.pixels, &b.pixels))
}

/// Mean squared error between two token grids of identical shape.
pub fn mse_grids(a: &TokenGrid, b: &TokenGrid) -> Result<f64, MetricsError> {
    let left = (a.height(), a.width(), a.dim());
    let right = (b.height(), b.width(), b.dim());
    if left != right {
        return Err(MetricsError::ShapeMismatch { left, right });
    }
    Ok(mse_slices(a.data(), b.data()))
}

/// Mean absolute response under the 4-connected 3x3 Laplacian
/// `[[0,-1,0],[-1,4,-1],[0,-1,0]]`, evaluated on the valid interior
/// (no padding, output is `(h-2) x (w-2)`).
pub fn hpf_magnitude(img: &ImagePlane) -> Result<f64, MetricsError> {
    if img.height < 3 || img.width < 3 {
        return Err(MetricsError::TooSmall {
            height: img.height,
            width: img.width,
            min: 3,
        });
    }
    let mut sum = 0f64;
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let response = 4.0 * img.at(y, x) as f64
                - img.at(y - 1, x) as f64
                - img.at(y + 1, x) as f64
                - img.at(y, x - 1) as f64
                - img.at(y, x + 1) as f64;
            sum += response.abs();
        }
    }
    Ok(sum / ((img.height - 2) * (img.width - 2)) as f64)
}

/// Mean of [`hpf_magnitude`] over all channel planes of a grid.
pub fn hpf_magnitude_grid(grid: &TokenGrid) -> Result<f64, MetricsError> {
    let mut sum = 0f64;
    for c in 0..grid.dim() {
        sum += hpf_magnitude(&channel_plane(grid, c)?)?;
    }
    Ok(sum / grid.dim() as f64)
}

static ZERO_VECTOR_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// How many cosine evaluations involved an all-zero vector (similarity was
/// defined as 0.0 rather than NaN). Diagnostic only; process-wide.
pub fn zero_vector_warning_count() -> u64 {
    ZERO_VECTOR_WARNINGS.load(Ordering::Relaxed)
}

pub fn reset_zero_vector_warnings() {
    ZERO_VECTOR_WARNINGS.store(0, Ordering::Relaxed);
}

/// Cosine similarity `<u,v> / (|u| |v|)`, clamped to `[-1, 1]` against
/// rounding. The denominator is `sqrt(|u|^2 * |v|^2)` so identical vectors
/// score exactly 1.0. If either vector is all-zero the result is 0.0 and
/// the [`zero_vector_warning_count`] counter is incremented.
///
/// Panics if the slices have different lengths.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine_similarity dim mismatch");
    let mut dot = 0f64;
    let mut nu = 0f64;
    let mut nv = 0f64;
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (*a as f64, *b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        ZERO_VECTOR_WARNINGS.fetch_add(1, Ordering::Relaxed);
        return 0.0;
    }
    (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0)
}

/// Neighborhood cosine-similarity statistics, `k` in {3, 5}.
///
/// For every token, similarities to all other tokens in its centered
/// k x k window are computed (truncated at borders). The grid-level stats
/// average the per-token min/mean/max. The top-3 search ranks all `n-1`
/// other tokens by similarity (ties broken by lower flat index) and checks
/// whether the best three all lie within the token's 3x3 neighborhood.
pub fn neighborhood_stats(grid: &TokenGrid, k: usize) -> Result<SimilarityStats, MetricsError> {
    if k != 3 && k != 5 {
        return Err(MetricsError::BadNeighborhood { k });
    }
    let (h, w) = (grid.height(), grid.width());
    if h < k || w < k {
        return Err(MetricsError::TooSmall {
            height: h,
            width: w,
            min: k,
        });
    }
    let n = grid.num_tokens();
    let radius = k / 2;

    // Squared norms once; zero tokens force similarity 0, same convention
    // as `cosine_similarity`.
    let norms_sq: Vec<f64> = (0..n)
        .map(|i| {
            grid.row(i)
                .iter()
                .map(|&x| {
                    let x = x as f64;
                    x * x
                })
                .sum()
        })
        .collect();

    let sim = |i: usize, j: usize| -> f64 {
        if norms_sq[i] == 0.0 || norms_sq[j] == 0.0 {
            ZERO_VECTOR_WARNINGS.fetch_add(1, Ordering::Relaxed);
            return 0.0;
        }
        let dot: f64 = grid
            .row(i)
            .iter()
            .zip(grid.row(j))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        (dot / (norms_sq[i] * norms_sq[j]).sqrt()).clamp(-1.0, 1.0)
    };

    let mut sum_min = 0f64;
    let mut sum_mean = 0f64;
    let mut sum_max = 0f64;
    let mut top3_hits = 0usize;

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;

            // Windowed stats.
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut acc = 0f64;
            let mut count = 0usize;
            for ny in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                for nx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                    let j = ny * w + nx;
                    if j == i {
                        continue;
                    }
                    let s = sim(i, j);
                    lo = lo.min(s);
                    hi = hi.max(s);
                    acc += s;
                    count += 1;
                }
            }
            sum_min += lo;
            sum_max += hi;
            sum_mean += acc / count as f64;

            // Global top-3 partners, ties resolved toward lower index by the
            // ascending scan with strict improvement.
            let mut top: [(f64, usize); 3] = [(f64::NEG_INFINITY, usize::MAX); 3];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let s = sim(i, j);
                if s > top[2].0 {
                    top[2] = (s, j);
                    if top[2].0 > top[1].0 {
                        top.swap(1, 2);
                    }
                    if top[1].0 > top[0].0 {
                        top.swap(0, 1);
                    }
                }
            }
            let in_3x3 = |j: usize| {
                let (jy, jx) = (j / w, j % w);
                jy.abs_diff(y) <= 1 && jx.abs_diff(x) <= 1
            };
            if top.iter().all(|&(_, j)| j != usize::MAX && in_3x3(j)) {
                top3_hits += 1;
            }
        }
    }

    Ok(SimilarityStats {
        neighborhood: k,
        min_sim: sum_min / n as f64,
        mean_sim: sum_mean / n as f64,
        max_sim: sum_max / n as f64,
        top3_fraction: top3_hits as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> ImagePlane {
        let pixels = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ImagePlane::new(h, w, pixels).unwrap()
    }

    fn random_grid(h: usize, w: usize, dim: usize, seed: u64) -> TokenGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        TokenGrid::new(h, w, dim, data).unwrap()
    }

    #[test]
    fn mse_identity_and_small_case() {
        let a = plane(2, 1, |_, _| 0.0);
        let b = ImagePlane::new(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(mse_planes(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_planes(&a, &b).unwrap(), 5.0);
        assert_eq!(mse_planes(&a, &b).unwrap(), mse_planes(&b, &a).unwrap());
    }

    #[test]
    fn mse_matches_double_loop_oracle() {
        let a = random_grid(64, 64, 1, 1);
        let b = random_grid(64, 64, 1, 2);
        let got = mse_grids(&a, &b).unwrap();
        let mut sum = 0f64;
        for i in 0..a.num_tokens() {
            for c in 0..1 {
                let d = a.row(i)[c] as f64 - b.row(i)[c] as f64;
                sum += d * d;
            }
        }
        let expected = sum / 4096.0;
        assert!((got - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn mse_shape_mismatch() {
        let a = plane(2, 2, |_, _| 0.0);
        let b = plane(2, 3, |_, _| 0.0);
        assert!(matches!(
            mse_planes(&a, &b),
            Err(MetricsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn hpf_zero_on_constant_and_ramp() {
        let constant = plane(6, 7, |_, _| 3.25);
        assert_eq!(hpf_magnitude(&constant).unwrap(), 0.0);
        let ramp = plane(5, 9, |_, x| x as f32);
        assert_eq!(hpf_magnitude(&ramp).unwrap(), 0.0);
    }

    #[test]
    fn hpf_centered_impulse() {
        let img = plane(5, 5, |y, x| if (y, x) == (2, 2) { 1.0 } else { 0.0 });
        let got = hpf_magnitude(&img).unwrap();
        assert!((got - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn hpf_rejects_small_images() {
        let img = plane(2, 5, |_, _| 0.0);
        assert!(matches!(
            hpf_magnitude(&img),
            Err(MetricsError::TooSmall { .. })
        ));
    }

    #[test]
    fn hpf_ignores_constant_offset() {
        // quantize so the f32 addition of the offset is exact
        let pixel = |y: usize, x: usize| (((y * 3 + x) as f32).sin() * 1024.0).round() / 1024.0;
        let img = plane(8, 8, pixel);
        let shifted = plane(8, 8, |y, x| pixel(y, x) + 64.0);
        let a = hpf_magnitude(&img).unwrap();
        let b = hpf_magnitude(&shifted).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[2.0, -1.0], &[2.0, -1.0]), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let got = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]);
        assert!((got - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
    }

    #[test]
    fn cosine_zero_vector_counts_warning() {
        reset_zero_vector_warnings();
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(zero_vector_warning_count(), 1);
        reset_zero_vector_warnings();
    }

    #[test]
    fn stats_on_identical_tokens() {
        let grid = TokenGrid::from_fn(4, 4, 3, |_, _, c| 1.0 + c as f32).unwrap();
        let stats = neighborhood_stats(&grid, 3).unwrap();
        assert_eq!(stats.min_sim, 1.0);
        assert_eq!(stats.mean_sim, 1.0);
        assert_eq!(stats.max_sim, 1.0);
    }

    #[test]
    fn stats_on_tilted_plane_forces_top3_into_neighborhood() {
        // Token (1, eps*y, eps*x): cosine falls off with euclidean grid
        // distance, so every token's three closest partners are adjacent.
        let eps = 0.05f32;
        let grid = TokenGrid::from_fn(12, 12, 3, |y, x, c| match c {
            0 => 1.0,
            1 => eps * y as f32,
            _ => eps * x as f32,
        })
        .unwrap();
        let stats = neighborhood_stats(&grid, 3).unwrap();
        assert_eq!(stats.top3_fraction, 1.0);
        assert!(stats.mean_sim > 0.99);
    }

    #[test]
    fn stats_on_gaussian_tokens_center_near_zero() {
        let grid = random_grid(16, 16, 512, 7);
        let stats = neighborhood_stats(&grid, 3).unwrap();
        assert!(stats.mean_sim.abs() < 0.1, "mean {}", stats.mean_sim);
        assert!(stats.min_sim <= stats.mean_sim && stats.mean_sim <= stats.max_sim);
    }

    #[test]
    fn stats_on_coordinate_ramp_away_from_origin() {
        // token (y,x) = (y, x); angle varies slowly once both coordinates
        // are large, so neighborhood similarity approaches 1 there.
        let grid = TokenGrid::from_fn(16, 16, 2, |y, x, c| {
            if c == 0 {
                y as f32
            } else {
                x as f32
            }
        })
        .unwrap();
        let (h, w, radius) = (16usize, 16usize, 1usize);
        for y in 8..h {
            for x in 8..w {
                for ny in y - radius..=(y + radius).min(h - 1) {
                    for nx in x - radius..=(x + radius).min(w - 1) {
                        if (ny, nx) == (y, x) {
                            continue;
                        }
                        let s = cosine_similarity(grid.token(y, x), grid.token(ny, nx));
                        assert!(s >= 0.99, "sim({y},{x})({ny},{nx}) = {s}");
                    }
                }
            }
        }
        let stats = neighborhood_stats(&grid, 3).unwrap();
        assert!(stats.mean_sim > 0.9);
    }

    #[test]
    fn stats_scale_invariance() {
        let grid = random_grid(6, 6, 16, 9);
        let scaled = TokenGrid::from_fn(6, 6, 16, |y, x, c| grid.token(y, x)[c] * 7.5).unwrap();
        for k in [3, 5] {
            let a = neighborhood_stats(&grid, k).unwrap();
            let b = neighborhood_stats(&scaled, k).unwrap();
            assert!((a.min_sim - b.min_sim).abs() < 1e-6);
            assert!((a.mean_sim - b.mean_sim).abs() < 1e-6);
            assert!((a.max_sim - b.max_sim).abs() < 1e-6);
            assert_eq!(a.top3_fraction, b.top3_fraction);
        }
    }

    #[test]
    fn stats_input_validation() {
        let grid = random_grid(4, 4, 2, 3);
        assert!(matches!(
            neighborhood_stats(&grid, 4),
            Err(MetricsError::BadNeighborhood { k: 4 })
        ));
        assert!(matches!(
            neighborhood_stats(&grid, 5),
            Err(MetricsError::TooSmall { .. })
        ));
    }

    #[test]
    fn channel_plane_extracts_and_validates() {
        let grid = TokenGrid::from_fn(2, 3, 2, |y, x, c| (y * 10 + x) as f32 + c as f32 * 0.5)
            .unwrap();
        let p = channel_plane(&grid, 1).unwrap();
        assert_eq!(p.at(1, 2), 12.5);
        assert!(matches!(
            channel_plane(&grid, 2),
            Err(MetricsError::BadChannel { channel: 2, dim: 2 })
        ));
    }
}
