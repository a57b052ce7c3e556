//! Per-modality inputs: raw feature stores, MLP encoders and the learnable
//! embedding table.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Standard deviation of the embedding table initializer.
pub const EMBEDDING_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityId {
    Embedding,
    Text,
    Visual,
    Other(String),
}

impl ModalityId {
    pub fn tag(&self) -> &str {
        match self {
            ModalityId::Embedding => "embedding",
            ModalityId::Text => "text",
            ModalityId::Visual => "visual",
            ModalityId::Other(s) => s,
        }
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModalityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "embedding" | "emb" | "e" => ModalityId::Embedding,
            "text" | "t" => ModalityId::Text,
            "visual" | "v" | "image" => ModalityId::Visual,
            "" => return Err(Error::InvalidConfig("empty modality tag".into())),
            other if other.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') => {
                ModalityId::Other(other.to_string())
            }
            other => return Err(Error::InvalidConfig(format!("bad modality tag `{other}`"))),
        })
    }
}

/// Raw features of one modality. Only featured vertices store a row; every
/// other vertex reads as an exact zero row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    modality: ModalityId,
    num_vertices: usize,
    vertices: Vec<usize>,
    rows: Array2<f64>,
}

impl FeatureStore {
    /// `vertices` must be strictly increasing and below `num_vertices`;
    /// row `r` of `rows` belongs to `vertices[r]`.
    pub fn new(modality: ModalityId, num_vertices: usize, vertices: Vec<usize>, rows: Array2<f64>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(Error::InvalidConfig(format!("{modality} features have zero dimension")));
        }
        if rows.nrows() != vertices.len() {
            return Err(Error::shape("feature store", format!("{} rows", vertices.len()), format!("{} rows", rows.nrows())));
        }
        if vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("feature vertices must be strictly increasing".into()));
        }
        if let Some(&v) = vertices.last() {
            if v >= num_vertices {
                return Err(Error::VertexOutOfRange {
                    vertex: v,
                    num_vertices,
                });
            }
        }
        Ok(Self {
            modality,
            num_vertices,
            vertices,
            rows,
        })
    }

    /// Features for a contiguous vertex range, e.g. all items.
    pub fn for_range(modality: ModalityId, num_vertices: usize, start: usize, rows: Array2<f64>) -> Result<Self> {
        let vertices = (start..start + rows.nrows()).collect();
        Self::new(modality, num_vertices, vertices, rows)
    }

    /// From a full `|N| x dim` matrix and mask; masked-out rows are dropped.
    pub fn from_dense(modality: ModalityId, dense: ArrayView2<f64>, has_feature: &[bool]) -> Result<Self> {
        if has_feature.len() != dense.nrows() {
            return Err(Error::shape("feature mask", dense.nrows(), has_feature.len()));
        }
        let vertices: Vec<usize> = (0..dense.nrows()).filter(|&v| has_feature[v]).collect();
        let rows = dense.select(Axis(0), &vertices);
        Self::new(modality, dense.nrows(), vertices, rows)
    }

    pub fn modality(&self) -> &ModalityId {
        &self.modality
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    /// Featured vertices, ascending.
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// Stored rows, aligned with [`vertices`](Self::vertices).
    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn has_feature(&self, vertex: usize) -> bool {
        self.vertices.binary_search(&vertex).is_ok()
    }

    pub fn has_feature_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_vertices];
        for &v in &self.vertices {
            mask[v] = true;
        }
        mask
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_vertices, self.dim()));
        for (r, &v) in self.vertices.iter().enumerate() {
            out.row_mut(v).assign(&self.rows.row(r));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Affine layers with `tanh` between consecutive layers (none after the
/// last one).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<DenseLayer>,
}

impl EncoderParams {
    pub fn validate(&self, in_dim: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one layer".into()));
        }
        let mut width = in_dim;
        for layer in &self.layers {
            if layer.in_dim() != width {
                return Err(Error::shape("encoder layer input", width, layer.in_dim()));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape("encoder bias", layer.out_dim(), layer.bias.len()));
            }
            width = layer.out_dim();
        }
        Ok(())
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::out_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Array2<f64>,
}

/// Hidden activations kept for the backward pass: `hidden[l]` is the tanh
/// output feeding layer `l + 1`.
#[derive(Clone, Debug)]
pub(crate) struct EncoderTrace {
    pub hidden: Vec<Array2<f64>>,
}

/// Runs the layers on the stored (featured) rows only and returns the
/// compact `|featured| x d` output.
pub(crate) fn encode_rows(
    inputs: ArrayView2<f64>,
    layers: &[(ArrayView2<f64>, ArrayView1<f64>)],
) -> (Array2<f64>, EncoderTrace) {
    let mut hidden = Vec::with_capacity(layers.len().saturating_sub(1));
    let mut current: Option<Array2<f64>> = None;
    for (l, (weight, bias)) in layers.iter().enumerate() {
        let input = current.as_ref().map(|a| a.view()).unwrap_or(inputs);
        let mut pre = input.dot(weight);
        pre += bias;
        if l + 1 < layers.len() {
            pre.mapv_inplace(f64::tanh);
            hidden.push(pre.clone());
        }
        current = Some(pre);
    }
    (current.expect("at least one layer"), EncoderTrace { hidden })
}

/// Backward through [`encode_rows`]. `grad_out` is the compact output
/// gradient; returns `(d_weight, d_bias)` per layer.
pub(crate) fn encode_rows_backward(
    inputs: ArrayView2<f64>,
    layers: &[(ArrayView2<f64>, ArrayView1<f64>)],
    trace: &EncoderTrace,
    grad_out: Array2<f64>,
) -> Vec<(Array2<f64>, Array1<f64>)> {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g = grad_out;
    for l in (0..layers.len()).rev() {
        let input = if l == 0 { inputs } else { trace.hidden[l - 1].view() };
        let d_weight = input.t().dot(&g);
        let d_bias = g.sum_axis(Axis(0));
        if l > 0 {
            let mut back = g.dot(&layers[l].0.t());
            back.zip_mut_with(&trace.hidden[l - 1], |b, &h| *b *= 1.0 - h * h);
            g = back;
        }
        grads.push((d_weight, d_bias));
    }
    grads.reverse();
    grads
}

pub(crate) fn scatter_rows(num_vertices: usize, vertices: &[usize], compact: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((num_vertices, compact.ncols()));
    for (r, &v) in vertices.iter().enumerate() {
        out.row_mut(v).assign(&compact.row(r));
    }
    out
}

/// `MLP(X)` with featureless rows forced to exactly zero after encoding, so
/// a nonzero bias never leaks into them.
pub fn encode_modality(store: &FeatureStore, params: &EncoderParams) -> Result<Array2<f64>> {
    params.validate(store.dim())?;
    let layers: Vec<_> = params.layers.iter().map(|l| (l.weight.view(), l.bias.view())).collect();
    let (compact, _) = encode_rows(store.rows(), &layers);
    Ok(scatter_rows(store.num_vertices(), store.vertices(), compact.view()))
}

/// The embedding modality needs no encoder; its input is the table itself.
pub fn encode_embedding(table: &EmbeddingTable) -> Array2<f64> {
    table.table.clone()
}

/// Scaled-uniform (Glorot) bound.
pub fn glorot_bound(in_dim: usize, out_dim: usize) -> f64 {
    (6.0 / (in_dim + out_dim) as f64).sqrt()
}

pub fn init_weight<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Array2<f64>> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::InvalidConfig(format!("zero weight dimension {in_dim}x{out_dim}")));
    }
    let bound = glorot_bound(in_dim, out_dim);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Ok(Array2::from_shape_simple_fn((in_dim, out_dim), || dist.sample(rng)))
}

/// Layer widths `in_dim -> [hidden ->] out_dim`; biases start at zero.
pub fn init_encoder<R: Rng + ?Sized>(
    in_dim: usize,
    hidden: Option<usize>,
    out_dim: usize,
    rng: &mut R,
) -> Result<EncoderParams> {
    let widths: Vec<usize> = match hidden {
        Some(h) => vec![in_dim, h, out_dim],
        None => vec![in_dim, out_dim],
    };
    let layers = widths
        .windows(2)
        .map(|w| {
            Ok(DenseLayer {
                weight: init_weight(w[0], w[1], rng)?,
                bias: Array1::zeros(w[1]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncoderParams { layers })
}

pub fn init_embedding<R: Rng + ?Sized>(num_vertices: usize, d: usize, rng: &mut R) -> Result<EmbeddingTable> {
    if num_vertices == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!("zero embedding shape {num_vertices}x{d}")));
    }
    let dist = Normal::new(0.0, EMBEDDING_INIT_STD).expect("positive std");
    Ok(EmbeddingTable {
        table: Array2::from_shape_simple_fn((num_vertices, d), || dist.sample(rng)),
    })
}
