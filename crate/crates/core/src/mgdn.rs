//! Per-modality K-hop propagation with normalized mixing coefficients, and
//! sum-pooling across modalities.

use ndarray::{Array2, ArrayView2};

use crate::encoding::{encode_embedding, encode_modality, EmbeddingTable, EncoderParams, FeatureStore, ModalityId};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;

/// Largest receptive field searched by default.
pub const DEFAULT_MAX_HOPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationConfig {
    /// Weight of the initial features re-injected at every hop.
    pub alpha: f64,
    /// Weight of the propagated features.
    pub beta: f64,
    pub k_hops: usize,
}

impl PropagationConfig {
    pub fn new(alpha: f64, beta: f64, k_hops: usize) -> Result<Self> {
        let cfg = Self { alpha, beta, k_hops };
        cfg.validate(DEFAULT_MAX_HOPS)?;
        Ok(cfg)
    }

    pub fn validate(&self, max_hops: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha and beta must be finite and nonnegative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.alpha + self.beta <= 0.0 {
            return Err(Error::InvalidConfig("alpha + beta must be positive".into()));
        }
        if self.k_hops > max_hops {
            return Err(Error::InvalidConfig(format!("k_hops {} exceeds maximum {max_hops}", self.k_hops)));
        }
        Ok(())
    }
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            k_hops: 2,
        }
    }
}

/// `β^K + Σ_{k<K} α β^k`.
pub fn gamma(config: &PropagationConfig) -> f64 {
    let mut power = 1.0;
    let mut sum = 0.0;
    for _ in 0..config.k_hops {
        sum += config.alpha * power;
        power *= config.beta;
    }
    power + sum
}

/// Weights of `Â^0 X, …, Â^K X` in the propagated output.
pub fn coefficients(config: &PropagationConfig) -> Vec<f64> {
    let norm = gamma(config);
    let mut out = Vec::with_capacity(config.k_hops + 1);
    let mut power = 1.0;
    for _ in 0..config.k_hops {
        out.push(config.alpha * power / norm);
        power *= config.beta;
    }
    out.push(power / norm);
    out
}

/// Step-wise form: `H⁰ = X`, `Hᵏ = β Â Hᵏ⁻¹ + α H⁰`, output `Hᴷ / Γ`.
pub fn propagate(adjacency: &NormalizedAdjacency, encoded: ArrayView2<f64>, config: &PropagationConfig) -> Result<Array2<f64>> {
    if encoded.nrows() != adjacency.num_vertices() {
        return Err(Error::shape("propagate", adjacency.num_vertices(), encoded.nrows()));
    }
    let mut h = encoded.to_owned();
    for _ in 0..config.k_hops {
        let mut next = adjacency.spmm(h.view())?;
        next.zip_mut_with(&encoded, |n, &x0| *n = config.beta * *n + config.alpha * x0);
        h = next;
    }
    if config.k_hops > 0 {
        let norm = gamma(config);
        h.mapv_inplace(|v| v / norm);
    }
    Ok(h)
}

/// Adjoint of [`propagate`]; `Â` is symmetric so its transpose is itself.
pub(crate) fn propagate_adjoint(
    adjacency: &NormalizedAdjacency,
    grad_out: ArrayView2<f64>,
    config: &PropagationConfig,
) -> Result<Array2<f64>> {
    if config.k_hops == 0 {
        return Ok(grad_out.to_owned());
    }
    let norm = gamma(config);
    let mut g = grad_out.mapv(|v| v / norm);
    let mut initial = Array2::<f64>::zeros(g.raw_dim());
    for _ in 0..config.k_hops {
        initial.scaled_add(config.alpha, &g);
        g = adjacency.spmm(g.view())?;
        g.mapv_inplace(|v| config.beta * v);
    }
    g += &initial;
    Ok(g)
}

/// Sum-pooling of per-modality outputs.
pub fn fuse(outputs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let (first, rest) = outputs
        .split_first()
        .ok_or_else(|| Error::InvalidConfig("fuse needs at least one modality".into()))?;
    let mut out = first.clone();
    for z in rest {
        if z.dim() != out.dim() {
            return Err(Error::shape("fuse", format!("{:?}", out.dim()), format!("{:?}", z.dim())));
        }
        out += z;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModalityEncoder {
    Embedding(EmbeddingTable),
    Mlp(EncoderParams),
}

/// One modality's full pipeline: encoder, features and receptive field.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBundle {
    pub modality: ModalityId,
    pub config: PropagationConfig,
    pub encoder: ModalityEncoder,
    pub store: Option<FeatureStore>,
}

impl ModalityBundle {
    pub fn validate(&self) -> Result<()> {
        match (&self.encoder, &self.store) {
            (ModalityEncoder::Embedding(_), None) => Ok(()),
            (ModalityEncoder::Mlp(params), Some(store)) => params.validate(store.dim()),
            _ => Err(Error::InvalidConfig(format!(
                "modality {} needs exactly one of an embedding table or an encoder with features",
                self.modality
            ))),
        }
    }

    pub fn encode(&self) -> Result<Array2<f64>> {
        self.validate()?;
        match (&self.encoder, &self.store) {
            (ModalityEncoder::Embedding(table), _) => Ok(encode_embedding(table)),
            (ModalityEncoder::Mlp(params), Some(store)) => encode_modality(store, params),
            _ => unreachable!("validated"),
        }
    }

    /// `Z^(M)` for this modality.
    pub fn represent(&self, adjacency: &NormalizedAdjacency) -> Result<Array2<f64>> {
        propagate(adjacency, self.encode()?.view(), &self.config)
    }
}
