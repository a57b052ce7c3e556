//! Sampling-based global attention.
//!
//! Each vertex is stacked with `C` vertices drawn uniformly (with
//! replacement) from the whole fused representation matrix, and a single
//! simplified attention block is run over the stack:
//!
//! ```text
//! T = (1 - γ) · softmax(S Wq (S Wk)ᵀ / √d) · S + γ · S
//! ```
//!
//! There is no value projection and the logits are scaled by the model
//! width `d`, not the attention width. Row 0 of `T` is the vertex's final
//! representation; the other rows only feed the unsmoothing regularizer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Rng as StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub gamma: f64,
    pub c_samples: usize,
}

impl AttentionParams {
    pub fn d(&self) -> usize {
        self.w_query.nrows()
    }

    pub fn d_att(&self) -> usize {
        self.w_query.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.w_query.dim() != self.w_key.dim() {
            return Err(Error::shape("attention projections", format!("{:?}", self.w_query.dim()), format!("{:?}", self.w_key.dim())));
        }
        if self.d_att() == 0 {
            return Err(Error::InvalidConfig("attention width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBlock {
    pub anchor: usize,
    pub sampled: Vec<usize>,
    /// `S`: row 0 is the anchor, rows `1..=C` the sampled vertices.
    pub stacked: Array2<f64>,
    /// `T`, once [`SampledBlock::attend`] has run.
    pub output: Option<Array2<f64>>,
}

impl SampledBlock {
    pub fn attend(&mut self, params: &AttentionParams) -> Result<&Array2<f64>> {
        let out = attend(self.stacked.view(), params)?;
        Ok(self.output.insert(out))
    }
}

/// Draws `c` vertex indices uniformly with replacement.
pub fn draw_samples<R: Rng + ?Sized>(num_vertices: usize, c: usize, rng: &mut R) -> Vec<usize> {
    (0..c).map(|_| rng.random_range(0..num_vertices)).collect()
}

/// Stacks the anchor and the given sampled vertices.
pub fn stack_block(fused: ArrayView2<f64>, anchor: usize, sampled: Vec<usize>) -> Result<SampledBlock> {
    let n = fused.nrows();
    if let Some(&bad) = std::iter::once(&anchor).chain(&sampled).find(|&&v| v >= n) {
        return Err(Error::VertexOutOfRange {
            vertex: bad,
            num_vertices: n,
        });
    }
    let mut rows = Vec::with_capacity(sampled.len() + 1);
    rows.push(anchor);
    rows.extend_from_slice(&sampled);
    Ok(SampledBlock {
        anchor,
        sampled,
        stacked: fused.select(Axis(0), &rows),
        output: None,
    })
}

pub fn sample_block<R: Rng + ?Sized>(fused: ArrayView2<f64>, anchor: usize, c: usize, rng: &mut R) -> Result<SampledBlock> {
    if anchor >= fused.nrows() {
        return Err(Error::VertexOutOfRange {
            vertex: anchor,
            num_vertices: fused.nrows(),
        });
    }
    let sampled = draw_samples(fused.nrows(), c, rng);
    stack_block(fused, anchor, sampled)
}

/// Intermediates of one attention block kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct AttentionTrace {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub probs: Array2<f64>,
    pub output: Array2<f64>,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn attend_trace(
    stacked: ArrayView2<f64>,
    w_query: ArrayView2<f64>,
    w_key: ArrayView2<f64>,
    gamma: f64,
) -> AttentionTrace {
    let scale = (stacked.ncols() as f64).sqrt();
    let queries = stacked.dot(&w_query);
    let keys = stacked.dot(&w_key);
    let mut probs = queries.dot(&keys.t());
    probs.mapv_inplace(|v| v / scale);
    softmax_rows(&mut probs);
    // (1-γ)T + γS written as a correction of S, so T = S leaves S untouched
    let mut output = probs.dot(&stacked);
    output.zip_mut_with(&stacked, |t, &s| *t = s + (1.0 - gamma) * (*t - s));
    AttentionTrace {
        queries,
        keys,
        probs,
        output,
    }
}

/// Gradients of one block w.r.t. `(S, Wq, Wk)` given `dL/dT`.
pub(crate) fn attend_backward(
    stacked: ArrayView2<f64>,
    w_query: ArrayView2<f64>,
    w_key: ArrayView2<f64>,
    gamma: f64,
    trace: &AttentionTrace,
    grad_output: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = (stacked.ncols() as f64).sqrt();
    let probs = &trace.probs;

    // T = (1-γ) P S + γ S
    let mut d_stacked = grad_output.mapv(|g| gamma * g);
    d_stacked.scaled_add(1.0 - gamma, &probs.t().dot(&grad_output));
    let mut d_probs = grad_output.dot(&stacked.t());
    d_probs.mapv_inplace(|v| (1.0 - gamma) * v);

    // row-wise softmax backward, then the 1/√d scaling
    let mut d_logits = d_probs;
    for (mut dl, p) in d_logits.rows_mut().into_iter().zip(probs.rows()) {
        let inner = dl.dot(&p);
        dl.zip_mut_with(&p, |g, &pv| *g = pv * (*g - inner) / scale);
    }

    let d_queries = d_logits.dot(&trace.keys);
    let d_keys = d_logits.t().dot(&trace.queries);
    let d_w_query = stacked.t().dot(&d_queries);
    let d_w_key = stacked.t().dot(&d_keys);
    d_stacked += &d_queries.dot(&w_query.t());
    d_stacked += &d_keys.dot(&w_key.t());
    (d_stacked, d_w_query, d_w_key)
}

pub fn attend(stacked: ArrayView2<f64>, params: &AttentionParams) -> Result<Array2<f64>> {
    params.validate()?;
    if stacked.ncols() != params.d() {
        return Err(Error::shape("attend", params.d(), stacked.ncols()));
    }
    Ok(attend_trace(stacked, params.w_query.view(), params.w_key.view(), params.gamma).output)
}

/// Row 0 of the block output.
pub fn final_representation(block: &SampledBlock) -> Result<Array1<f64>> {
    block
        .output
        .as_ref()
        .map(|t| t.row(0).to_owned())
        .ok_or_else(|| Error::InvalidConfig(format!("block for vertex {} has not been attended", block.anchor)))
}

/// Deterministic inference-time representations: each vertex averages its
/// final representation over `repeats` blocks drawn from a generator seeded
/// by `(eval_seed, vertex)`.
pub fn evaluate_representations(
    fused: ArrayView2<f64>,
    params: &AttentionParams,
    eval_seed: u64,
    repeats: usize,
) -> Result<Array2<f64>> {
    params.validate()?;
    if repeats == 0 {
        return Err(Error::InvalidConfig("evaluation repeats must be at least 1".into()));
    }
    if fused.ncols() != params.d() {
        return Err(Error::shape("evaluate_representations", params.d(), fused.ncols()));
    }
    if params.gamma == 1.0 {
        // T = S for every block, whatever was sampled
        return Ok(fused.to_owned());
    }
    let n = fused.nrows();
    let rows: Vec<Array1<f64>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut rng = StreamRng::seed_from_u64(rng::derive_seed(eval_seed, v as u64));
            let mut acc = Array1::<f64>::zeros(fused.ncols());
            for _ in 0..repeats {
                let sampled = draw_samples(n, params.c_samples, &mut rng);
                let block = stack_block(fused, v, sampled).expect("indices in range");
                let trace = attend_trace(block.stacked.view(), params.w_query.view(), params.w_key.view(), params.gamma);
                acc += &trace.output.row(0);
            }
            if repeats > 1 {
                acc.mapv_inplace(|x| x / repeats as f64);
            }
            acc
        })
        .collect();
    let mut out = Array2::zeros(fused.raw_dim());
    for (v, row) in rows.into_iter().enumerate() {
        out.row_mut(v).assign(&row);
    }
    Ok(out)
}
