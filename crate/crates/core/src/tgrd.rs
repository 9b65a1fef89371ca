//! TGRD: a little-endian binary container for token grids.
//!
//! Layout, all integers and floats little-endian, no padding:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `"TGRD"`                |
//! | 4      | 4    | format version, u32 = 1       |
//! | 8      | 4    | height, u32                   |
//! | 12     | 4    | width, u32                    |
//! | 16     | 4    | dim, u32                      |
//! | 20     | 4*n  | `height*width*dim` f32 values |
//!
//! Trailing bytes are an error; decode failures carry byte offsets.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::grid::{GridError, TokenGrid};

pub const MAGIC: [u8; 4] = *b"TGRD";
pub const VERSION: u32 = 1;
/// Header size in bytes: magic, version, height, width, dim.
pub const HEADER_LEN: usize = 20;

/// Errors for encoding and decoding TGRD data.
#[derive(Debug, Error)]
pub enum TgrdError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {found:?} at byte 0, expected \"TGRD\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {version} at byte 4, expected {VERSION}")]
    BadVersion { version: u32 },
    #[error("truncated at byte {offset} while reading {field}: expected {expected} bytes total, got {actual}")]
    Truncated {
        offset: usize,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{actual} bytes for a {height}x{width}x{dim} grid, expected exactly {expected}: trailing bytes are not permitted")]
    TrailingBytes {
        height: usize,
        width: usize,
        dim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{field} is zero at byte {offset}")]
    ZeroField { field: &'static str, offset: usize },
    #[error("grid {height}x{width}x{dim} too large to encode")]
    TooLarge {
        height: usize,
        width: usize,
        dim: usize,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Serializes a grid to TGRD bytes.
pub fn encode(grid: &TokenGrid) -> Result<Vec<u8>, TgrdError> {
    let too_large = || TgrdError::TooLarge {
        height: grid.height(),
        width: grid.width(),
        dim: grid.dim(),
    };
    let h = u32::try_from(grid.height()).map_err(|_| too_large())?;
    let w = u32::try_from(grid.width()).map_err(|_| too_large())?;
    let d = u32::try_from(grid.dim()).map_err(|_| too_large())?;

    let mut out = Vec::with_capacity(HEADER_LEN + grid.data().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for value in grid.data() {
        out.extend_from_slice(&value.to_le_bytes());
    }
    Ok(out)
}

/// Parses TGRD bytes into a grid, diagnosing malformed input by offset.
pub fn decode(bytes: &[u8]) -> Result<TokenGrid, TgrdError> {
    let field_u32 = |offset: usize, field: &'static str| -> Result<u32, TgrdError> {
        let end = offset + 4;
        if bytes.len() < end {
            return Err(TgrdError::Truncated {
                offset,
                field,
                expected: end,
                actual: bytes.len(),
            });
        }
        Ok(u32::from_le_bytes(bytes[offset..end].try_into().unwrap()))
    };

    if bytes.len() < 4 {
        return Err(TgrdError::Truncated {
            offset: 0,
            field: "magic",
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TgrdError::BadMagic { found: magic });
    }
    let version = field_u32(4, "version")?;
    if version != VERSION {
        return Err(TgrdError::BadVersion { version });
    }
    let height = field_u32(8, "height")? as usize;
    let width = field_u32(12, "width")? as usize;
    let dim = field_u32(16, "dim")? as usize;
    for (value, field, offset) in [(height, "height", 8), (width, "width", 12), (dim, "dim", 16)]
    {
        if value == 0 {
            return Err(TgrdError::ZeroField { field, offset });
        }
    }

    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(dim))
        .ok_or(TgrdError::TooLarge { height, width, dim })?;
    let expected = count
        .checked_mul(4)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or(TgrdError::TooLarge { height, width, dim })?;
    if bytes.len() < expected {
        return Err(TgrdError::Truncated {
            offset: bytes.len(),
            field: "f32 payload",
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TgrdError::TrailingBytes {
            height,
            width,
            dim,
            expected,
            actual: bytes.len(),
        });
    }

    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TokenGrid::new(height, width, dim, data)?)
}

/// Reads a grid from a TGRD file.
pub fn read_grid(path: impl AsRef<Path>) -> Result<TokenGrid, TgrdError> {
    decode(&fs::read(path)?)
}

/// Writes a grid as a TGRD file.
pub fn write_grid(path: impl AsRef<Path>, grid: &TokenGrid) -> Result<(), TgrdError> {
    Ok(fs::write(path, encode(grid)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> TokenGrid {
        TokenGrid::from_fn(3, 4, 2, |y, x, c| {
            (y as f32) * 10.0 + x as f32 + (c as f32) * 0.5 - 3.75
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise_stable() {
        let grid = sample_grid();
        let bytes = encode(&grid).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 4 * 2 * 4);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, grid);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.tgrd");
        let grid = sample_grid();
        write_grid(&path, &grid).unwrap();
        assert_eq!(read_grid(&path).unwrap(), grid);
    }

    #[test]
    fn bad_magic_reports_found_bytes() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[0] = b'X';
        match decode(&bytes).unwrap_err() {
            TgrdError::BadMagic { found } => assert_eq!(&found, b"XGRD"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_expected_and_actual() {
        let bytes = encode(&sample_grid()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match decode(cut).unwrap_err() {
            TgrdError::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_header_locates_field() {
        let bytes = encode(&sample_grid()).unwrap();
        match decode(&bytes[..10]).unwrap_err() {
            TgrdError::Truncated { offset, field, .. } => {
                assert_eq!(offset, 8);
                assert_eq!(field, "height");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode(&bytes).unwrap_err(),
            TgrdError::TrailingBytes { .. }
        ));
    }

    #[test]
    fn version_and_zero_dims_rejected() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode(&bytes).unwrap_err(),
            TgrdError::BadVersion { version: 2 }
        ));

        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[12..16].fill(0);
        match decode(&bytes).unwrap_err() {
            TgrdError::ZeroField { field, offset } => {
                assert_eq!(field, "width");
                assert_eq!(offset, 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
