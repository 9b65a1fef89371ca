//! Token-grid data model and the nearest-neighbor downsampling operator.
//!
//! A [`TokenGrid`] is an `height x width` arrangement of `dim`-dimensional
//! feature tokens stored as one flat row-major `f32` buffer. All kernels in
//! this crate (attention, merging, metrics) operate on this type.
//!
//! [`nearest_downsample`] subsamples the grid in a strided fashion: output
//! token `(i, j)` is a bitwise copy of input token
//! `(floor(i * in_h / out_h), floor(j * in_w / out_w))`. No interpolation
//! takes place, and the cost is linear in the output size.

use thiserror::Error;

/// Errors for grid construction and sampling.
#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("{what} must be positive")]
    ZeroDimension { what: &'static str },
    #[error("data length {got} does not match height*width*dim = {expected}")]
    DataLength { expected: usize, got: usize },
    #[error(
        "downsample spec {out_height}x{out_width} exceeds grid {height}x{width}"
    )]
    SpecExceedsGrid {
        out_height: usize,
        out_width: usize,
        height: usize,
        width: usize,
    },
    #[error("expected {expected} token rows, got {got}")]
    RowCount { expected: usize, got: usize },
    #[error("row {row} has dim {got}, expected {expected}")]
    RowDim {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("merge ratio {ratio} outside [0, 1)")]
    InvalidRatio { ratio: f64 },
}

/// An `height x width` grid of `dim`-dimensional feature tokens.
///
/// Layout: token `(y, x)` channel `c` lives at `data[(y*width + x)*dim + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    /// Builds a grid from a flat row-major buffer.
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        if height == 0 {
            return Err(GridError::ZeroDimension { what: "height" });
        }
        if width == 0 {
            return Err(GridError::ZeroDimension { what: "width" });
        }
        if dim == 0 {
            return Err(GridError::ZeroDimension { what: "dim" });
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(GridError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// Grid filled by `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, GridError> {
        let mut data = Vec::with_capacity(height * width * dim);
        for y in 0..height {
            for x in 0..width {
                for c in 0..dim {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, dim, data)
    }

    /// All-zero grid.
    pub fn zeros(height: usize, width: usize, dim: usize) -> Result<Self, GridError> {
        Self::new(height, width, dim, vec![0.0; height * width * dim])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tokens, `height * width`.
    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Token row by flat index in `0..num_tokens()`.
    pub fn row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Token row by grid coordinates.
    pub fn token(&self, y: usize, x: usize) -> &[f32] {
        self.row(y * self.width + x)
    }

    /// True when every value is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Target shape for [`nearest_downsample`]. The identity spec (output shape
/// equal to the input shape) is permitted; any other spec strictly reduces
/// the token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownsampleSpec {
    out_height: usize,
    out_width: usize,
}

impl DownsampleSpec {
    pub fn new(out_height: usize, out_width: usize) -> Result<Self, GridError> {
        if out_height == 0 {
            return Err(GridError::ZeroDimension { what: "out_height" });
        }
        if out_width == 0 {
            return Err(GridError::ZeroDimension { what: "out_width" });
        }
        Ok(Self {
            out_height,
            out_width,
        })
    }

    /// Spec that leaves a `height x width` grid unchanged.
    pub fn identity(height: usize, width: usize) -> Result<Self, GridError> {
        Self::new(height, width)
    }

    pub fn out_height(&self) -> usize {
        self.out_height
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn is_identity_for(&self, height: usize, width: usize) -> bool {
        self.out_height == height && self.out_width == width
    }
}

/// Proportion of tokens removed by a merge step, in `[0, 1)`.
///
/// A ratio of `1 - 1/s^2` corresponds to an `s`x per-axis downsample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRatio(f64);

impl MergeRatio {
    pub fn new(ratio: f64) -> Result<Self, GridError> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(GridError::InvalidRatio { ratio });
        }
        Ok(Self(ratio))
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Strided nearest-neighbor subsampling of the token grid.
///
/// Output token `(i, j)` is an exact copy of input token
/// `(floor(i*h/oh), floor(j*w/ow))` — top-left anchored, no interpolation.
pub fn nearest_downsample(
    grid: &TokenGrid,
    spec: DownsampleSpec,
) -> Result<TokenGrid, GridError> {
    nearest_downsample_counted(grid, spec).map(|(g, _)| g)
}

/// Like [`nearest_downsample`] but also reports how many source tokens were
/// touched. Each output token reads exactly one input token, so the count
/// equals the output token count — the linear-cost counterpart to the
/// quadratic similarity-pair counter of the merge baseline.
pub fn nearest_downsample_counted(
    grid: &TokenGrid,
    spec: DownsampleSpec,
) -> Result<(TokenGrid, u64), GridError> {
    if spec.out_height > grid.height || spec.out_width > grid.width {
        return Err(GridError::SpecExceedsGrid {
            out_height: spec.out_height,
            out_width: spec.out_width,
            height: grid.height,
            width: grid.width,
        });
    }
    let dim = grid.dim;
    let mut data = Vec::with_capacity(spec.out_height * spec.out_width * dim);
    let mut touched = 0u64;
    for i in 0..spec.out_height {
        let sy = i * grid.height / spec.out_height;
        for j in 0..spec.out_width {
            let sx = j * grid.width / spec.out_width;
            data.extend_from_slice(grid.token(sy, sx));
            touched += 1;
        }
    }
    let out = TokenGrid::new(spec.out_height, spec.out_width, dim, data)?;
    Ok((out, touched))
}

/// Converts a merge ratio into a concrete downsample spec for a grid shape.
///
/// Each axis becomes `max(1, round(len * sqrt(1 - ratio)))`, so ratios of
/// the form `1 - 1/s^2` with `s` dividing both axes reduce exactly to
/// `height/s x width/s`.
pub fn ratio_to_spec(
    ratio: MergeRatio,
    height: usize,
    width: usize,
) -> Result<DownsampleSpec, GridError> {
    if height == 0 {
        return Err(GridError::ZeroDimension { what: "height" });
    }
    if width == 0 {
        return Err(GridError::ZeroDimension { what: "width" });
    }
    let keep = (1.0 - ratio.value()).sqrt();
    let axis = |len: usize| ((len as f64 * keep).round() as usize).max(1);
    DownsampleSpec::new(axis(height), axis(width))
}

/// Token rows in row-major order.
pub fn flatten(grid: &TokenGrid) -> Vec<&[f32]> {
    (0..grid.num_tokens()).map(|i| grid.row(i)).collect()
}

/// Rebuilds a grid from token rows; inverse of [`flatten`].
pub fn unflatten<R: AsRef<[f32]>>(
    rows: &[R],
    height: usize,
    width: usize,
) -> Result<TokenGrid, GridError> {
    let expected = height * width;
    if rows.len() != expected {
        return Err(GridError::RowCount {
            expected,
            got: rows.len(),
        });
    }
    if rows.is_empty() {
        return Err(GridError::ZeroDimension { what: "rows" });
    }
    let dim = rows[0].as_ref().len();
    let mut data = Vec::with_capacity(expected * dim);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(GridError::RowDim {
                row: i,
                expected: dim,
                got: row.len(),
            });
        }
        data.extend_from_slice(row);
    }
    TokenGrid::new(height, width, dim, data)
}
