//! Binary feature matrices.
//!
//! Layout, little-endian: `b"MMFT"`, version `u32` (1), rows `u64`, cols
//! `u64`, element code `u8` (1 = f32, 2 = f64), then `rows * cols` values
//! in row-major order.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::encoding::{FeatureStore, ModalityId};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"MMFT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    F32,
    F64,
}

impl ElementType {
    pub fn code(self) -> u8 {
        match self {
            ElementType::F32 => 1,
            ElementType::F64 => 2,
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(ElementType::F32),
            2 => Ok(ElementType::F64),
            c => Err(Error::FeatureHeader(format!("unknown element code {c}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureHeader {
    pub rows: u64,
    pub cols: u64,
    pub element: ElementType,
}

/// Which vertices a feature file's rows belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexRange {
    Users,
    Items,
    All,
}

impl VertexRange {
    pub fn as_str(self) -> &'static str {
        match self {
            VertexRange::Users => "users",
            VertexRange::Items => "items",
            VertexRange::All => "all",
        }
    }

    /// `(first vertex, row count)` for a graph of the given size.
    pub fn span(self, num_users: usize, num_items: usize) -> (usize, usize) {
        match self {
            VertexRange::Users => (0, num_users),
            VertexRange::Items => (num_users, num_items),
            VertexRange::All => (0, num_users + num_items),
        }
    }
}

impl FromStr for VertexRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "users" => Ok(VertexRange::Users),
            "items" => Ok(VertexRange::Items),
            "all" => Ok(VertexRange::All),
            other => Err(Error::InvalidConfig(format!("vertex range must be users, items or all, got `{other}`"))),
        }
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<FeatureHeader> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(Error::FeatureHeader(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(Error::FeatureHeader(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::FeatureHeader(format!("unsupported version {version}")));
    }
    Ok(FeatureHeader {
        rows: u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")),
        cols: u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")),
        element: ElementType::from_code(bytes[24])?,
    })
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<(FeatureHeader, Array2<f64>)> {
    let header = parse_header(bytes)?;
    let count = header
        .rows
        .checked_mul(header.cols)
        .ok_or_else(|| Error::FeatureHeader("rows x cols overflows".into()))?;
    let expected = count
        .checked_mul(header.element.size() as u64)
        .ok_or_else(|| Error::FeatureHeader("payload size overflows".into()))?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    let found = payload.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFeatures { expected, found });
    }
    if found > expected {
        return Err(Error::FeatureHeader(format!("{} trailing bytes after payload", found - expected)));
    }
    let values: Vec<f64> = match header.element {
        ElementType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        ElementType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let matrix = Array2::from_shape_vec((header.rows as usize, header.cols as usize), values)
        .map_err(|e| Error::FeatureHeader(e.to_string()))?;
    Ok((header, matrix))
}

/// Values are narrowed when `element` is f32.
pub fn encode_feature_matrix(matrix: &Array2<f64>, element: ElementType) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + matrix.len() * element.size());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.ncols() as u64).to_le_bytes());
    out.push(element.code());
    for &v in matrix.iter() {
        match element {
            ElementType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ElementType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn read_feature_matrix(path: &Path) -> Result<(FeatureHeader, Array2<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_matrix(&bytes)
}

pub fn write_feature_matrix(path: &Path, matrix: &Array2<f64>, element: ElementType) -> Result<()> {
    fs::write(path, encode_feature_matrix(matrix, element)).map_err(|e| Error::io(path, e))
}

/// Reads a feature file and places its rows on `range`; every other vertex
/// is featureless.
pub fn load_features(
    path: &Path,
    modality: ModalityId,
    expected_dim: usize,
    range: VertexRange,
    num_users: usize,
    num_items: usize,
) -> Result<FeatureStore> {
    let (header, matrix) = read_feature_matrix(path)?;
    place_features(matrix, header, modality, expected_dim, range, num_users, num_items)
}

fn place_features(
    matrix: Array2<f64>,
    header: FeatureHeader,
    modality: ModalityId,
    expected_dim: usize,
    range: VertexRange,
    num_users: usize,
    num_items: usize,
) -> Result<FeatureStore> {
    if header.cols as usize != expected_dim {
        return Err(Error::FeatureDim {
            declared: expected_dim,
            found: header.cols as usize,
        });
    }
    let (start, rows) = range.span(num_users, num_items);
    if header.rows as usize != rows {
        return Err(Error::FeatureRows {
            expected: rows,
            found: header.rows as usize,
        });
    }
    FeatureStore::for_range(modality, num_users + num_items, start, matrix)
}
