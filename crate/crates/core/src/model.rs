//! The full model: encode → propagate → fuse → sampled attention, with a
//! recorded forward pass and its reverse-mode backward.
//!
//! The operator vocabulary is fixed (affine/tanh encoder, sparse product,
//! softmax attention, softplus, dot products), so the backward pass replays
//! a record of the forward intermediates through hand-written adjoints
//! rather than a general tape.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::encoding::{
    encode_rows, encode_rows_backward, init_embedding, init_encoder, init_weight, scatter_rows, DenseLayer,
    EmbeddingTable, EncoderParams, EncoderTrace, FeatureStore, ModalityId,
};
use crate::error::{Error, Result};
use crate::graph::{build_bipartite_adjacency, normalize_adjacency, InteractionSet, NormalizedAdjacency};
use crate::mgdn::{propagate, propagate_adjoint, ModalityBundle, ModalityEncoder, PropagationConfig};
use crate::objective::{bpr_backward, bpr_loss, combined_loss, l2_loss, tur_term, tur_term_backward, LossBreakdown, TrainingTriple};
use crate::params::{ParameterStore, Slot};
use crate::sgt::{attend_backward, attend_trace, draw_samples, evaluate_representations, AttentionParams, AttentionTrace};
use crate::train::TrainConfig;

#[derive(Clone, Debug)]
enum Source {
    Embedding(Slot),
    Features { store: FeatureStore, layers: Vec<(Slot, Slot)> },
}

#[derive(Clone, Debug)]
struct ModalityPlan {
    modality: ModalityId,
    config: PropagationConfig,
    source: Source,
}

/// One vertex whose final representation is needed this step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedBlock {
    pub vertex: usize,
    pub sampled: Vec<usize>,
}

/// All randomness of one training step, fixed up front so the forward pass
/// is a deterministic function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub triples: Vec<TrainingTriple>,
    /// Batch vertices first (first-appearance order), then extra TUR
    /// neighbors.
    pub blocks: Vec<PlannedBlock>,
    /// Block indices of `(user, positive, negative)` per triple.
    pub triple_blocks: Vec<[usize; 3]>,
    /// `(anchor block, neighbor block)` pairs for the unsmoothing loss.
    pub tur_pairs: Vec<(usize, usize)>,
    pub skipped_anchors: usize,
}

/// Forward intermediates needed by [`Model::backward`].
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    plan: BatchPlan,
    encoder_traces: Vec<Option<EncoderTrace>>,
    stacked: Vec<Array2<f64>>,
    attention: Vec<AttentionTrace>,
    finals: Array2<f64>,
    loss: LossBreakdown,
}

impl ForwardRecord {
    pub fn loss(&self) -> LossBreakdown {
        self.loss
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    /// Final representations of the planned blocks, one row per block.
    pub fn finals(&self) -> ArrayView2<'_, f64> {
        self.finals.view()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    num_users: usize,
    num_items: usize,
    d: usize,
    gamma: f64,
    c_samples: usize,
    psi_l2: f64,
    bypass_sgt: bool,
    adjacency: NormalizedAdjacency,
    neighbors: Vec<Vec<usize>>,
    modalities: Vec<ModalityPlan>,
    params: ParameterStore,
    w_query: Slot,
    w_key: Slot,
}

impl Model {
    /// Builds the graph from `train` and initializes every tensor from
    /// `rng`. The attention projections are drawn even when SGT is
    /// bypassed so both variants consume the init stream identically.
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, train: &InteractionSet, features: &[FeatureStore], rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = train.num_vertices();
        let adjacency_raw = build_bipartite_adjacency(train);
        let neighbors = (0..n).map(|v| adjacency_raw.neighbors_of(v)).collect::<Result<Vec<_>>>()?;
        let adjacency = normalize_adjacency(&adjacency_raw)?;

        let mut params = ParameterStore::new();
        let mut modalities = Vec::with_capacity(features.len() + 1);
        let table = init_embedding(n, config.d, rng)?;
        let slot = params.push("embedding", table.table);
        modalities.push(ModalityPlan {
            modality: ModalityId::Embedding,
            config: config.propagation_for(&ModalityId::Embedding),
            source: Source::Embedding(slot),
        });
        for store in features {
            if store.num_vertices() != n {
                return Err(Error::shape("feature store vertices", n, store.num_vertices()));
            }
            let modality = store.modality().clone();
            if modalities.iter().any(|m| m.modality == modality) {
                return Err(Error::InvalidConfig(format!("modality {modality} given twice")));
            }
            let encoder = init_encoder(store.dim(), config.encoder_hidden, config.d, rng)?;
            let layers = encoder
                .layers
                .into_iter()
                .enumerate()
                .map(|(l, layer)| {
                    let w = params.push(format!("encoder.{modality}.{l}.weight"), layer.weight);
                    let b = params.push(format!("encoder.{modality}.{l}.bias"), layer.bias.insert_axis(Axis(0)));
                    (w, b)
                })
                .collect();
            modalities.push(ModalityPlan {
                config: config.propagation_for(&modality),
                modality,
                source: Source::Features {
                    store: store.clone(),
                    layers,
                },
            });
        }
        let w_query = params.push("attention.w_query", init_weight(config.d, config.d_att, rng)?);
        let w_key = params.push("attention.w_key", init_weight(config.d, config.d_att, rng)?);

        Ok(Self {
            num_users: train.num_users(),
            num_items: train.num_items(),
            d: config.d,
            gamma: config.gamma,
            c_samples: config.c_samples,
            psi_l2: config.psi_l2,
            bypass_sgt: config.bypass_sgt,
            adjacency,
            neighbors,
            modalities,
            params,
            w_query,
            w_key,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_vertices(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adjacency
    }

    pub fn modalities(&self) -> Vec<(ModalityId, PropagationConfig)> {
        self.modalities.iter().map(|m| (m.modality.clone(), m.config)).collect()
    }

    pub fn set_propagation(&mut self, modality: &ModalityId, config: PropagationConfig) -> Result<()> {
        let plan = self
            .modalities
            .iter_mut()
            .find(|m| &m.modality == modality)
            .ok_or_else(|| Error::InvalidConfig(format!("model has no {modality} modality")))?;
        plan.config = config;
        Ok(())
    }

    pub fn attention_params(&self) -> AttentionParams {
        AttentionParams {
            w_query: self.params.get(self.w_query).value.clone(),
            w_key: self.params.get(self.w_key).value.clone(),
            gamma: self.gamma,
            c_samples: self.c_samples,
        }
    }

    /// Owned snapshot of each modality's pipeline.
    pub fn bundles(&self) -> Vec<ModalityBundle> {
        self.modalities
            .iter()
            .map(|m| {
                let (encoder, store) = match &m.source {
                    Source::Embedding(slot) => (
                        ModalityEncoder::Embedding(EmbeddingTable {
                            table: self.params.get(*slot).value.clone(),
                        }),
                        None,
                    ),
                    Source::Features { store, layers } => (
                        ModalityEncoder::Mlp(EncoderParams {
                            layers: layers
                                .iter()
                                .map(|&(w, b)| DenseLayer {
                                    weight: self.params.get(w).value.clone(),
                                    bias: self.params.get(b).value.row(0).to_owned(),
                                })
                                .collect(),
                        }),
                        Some(store.clone()),
                    ),
                };
                ModalityBundle {
                    modality: m.modality.clone(),
                    config: m.config,
                    encoder,
                    store,
                }
            })
            .collect()
    }

    fn layer_views(&self, layers: &[(Slot, Slot)]) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        layers
            .iter()
            .map(|&(w, b)| (self.params.get(w).value.view(), self.params.get(b).value.row(0)))
            .collect()
    }

    fn encode(&self, plan: &ModalityPlan) -> (Array2<f64>, Option<EncoderTrace>) {
        match &plan.source {
            Source::Embedding(slot) => (self.params.get(*slot).value.clone(), None),
            Source::Features { store, layers } => {
                let views = self.layer_views(layers);
                let (compact, trace) = encode_rows(store.rows(), &views);
                (scatter_rows(self.num_vertices(), store.vertices(), compact.view()), Some(trace))
            }
        }
    }

    /// `Z^(M)` for every modality, in model order.
    pub fn modality_outputs(&self) -> Result<Vec<(ModalityId, Array2<f64>)>> {
        self.modalities
            .par_iter()
            .map(|m| {
                let (x, _) = self.encode(m);
                Ok((m.modality.clone(), propagate(&self.adjacency, x.view(), &m.config)?))
            })
            .collect()
    }

    fn fused_with_traces(&self) -> Result<(Array2<f64>, Vec<Option<EncoderTrace>>)> {
        let per: Vec<(Array2<f64>, Option<EncoderTrace>)> = self
            .modalities
            .par_iter()
            .map(|m| {
                let (x, trace) = self.encode(m);
                Ok((propagate(&self.adjacency, x.view(), &m.config)?, trace))
            })
            .collect::<Result<_>>()?;
        let mut traces = Vec::with_capacity(per.len());
        let mut fused: Option<Array2<f64>> = None;
        for (z, trace) in per {
            match fused.as_mut() {
                None => fused = Some(z),
                Some(f) => *f += &z,
            }
            traces.push(trace);
        }
        Ok((fused.expect("embedding modality always present"), traces))
    }

    /// Sum-pooled multimodal representations `Z`.
    pub fn fused(&self) -> Result<Array2<f64>> {
        Ok(self.fused_with_traces()?.0)
    }

    /// Representations used for ranking.
    pub fn final_representations(&self, eval_seed: u64, repeats: usize) -> Result<Array2<f64>> {
        let fused = self.fused()?;
        if self.bypass_sgt {
            return Ok(fused);
        }
        evaluate_representations(fused.view(), &self.attention_params(), eval_seed, repeats)
    }

    /// Fixes the SGT samples and TUR neighbors for a batch. `sgt_rng` and
    /// `tur_rng` are untouched when SGT is bypassed.
    pub fn plan_batch<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &self,
        triples: Vec<TrainingTriple>,
        sgt_rng: &mut R1,
        tur_rng: &mut R2,
    ) -> Result<BatchPlan> {
        let n = self.num_vertices();
        let mut blocks = Vec::new();
        let mut block_of: HashMap<usize, usize> = HashMap::new();
        let mut block_for = |v: usize, blocks: &mut Vec<PlannedBlock>| {
            *block_of.entry(v).or_insert_with(|| {
                blocks.push(PlannedBlock { vertex: v, sampled: Vec::new() });
                blocks.len() - 1
            })
        };
        let mut triple_blocks = Vec::with_capacity(triples.len());
        for t in &triples {
            if t.user >= self.num_users || t.pos_item >= self.num_items || t.neg_item >= self.num_items {
                return Err(Error::InteractionOutOfRange {
                    user: t.user,
                    item: t.pos_item.max(t.neg_item),
                    num_users: self.num_users,
                    num_items: self.num_items,
                });
            }
            let u = block_for(t.user, &mut blocks);
            let p = block_for(self.num_users + t.pos_item, &mut blocks);
            let q = block_for(self.num_users + t.neg_item, &mut blocks);
            triple_blocks.push([u, p, q]);
        }

        let mut tur_pairs = Vec::new();
        let mut skipped_anchors = 0;
        if !self.bypass_sgt {
            let anchors = blocks.len();
            for b in 0..anchors {
                let nbrs = &self.neighbors[blocks[b].vertex];
                if nbrs.is_empty() {
                    skipped_anchors += 1;
                    continue;
                }
                let k = nbrs[tur_rng.random_range(0..nbrs.len())];
                let kb = block_for(k, &mut blocks);
                tur_pairs.push((b, kb));
            }
            for block in &mut blocks {
                block.sampled = draw_samples(n, self.c_samples, sgt_rng);
            }
        }
        Ok(BatchPlan {
            triples,
            blocks,
            triple_blocks,
            tur_pairs,
            skipped_anchors,
        })
    }

    fn gather(finals: &Array2<f64>, triple_blocks: &[[usize; 3]], which: usize) -> Array2<f64> {
        let idx: Vec<usize> = triple_blocks.iter().map(|t| t[which]).collect();
        finals.select(Axis(0), &idx)
    }

    pub fn forward(&self, plan: &BatchPlan) -> Result<(LossBreakdown, ForwardRecord)> {
        let (fused, encoder_traces) = self.fused_with_traces()?;
        let d = self.d;
        let nb = plan.blocks.len();
        let mut finals = Array2::zeros((nb, d));
        let mut stacked = Vec::new();
        let mut attention = Vec::new();
        if self.bypass_sgt {
            for (b, block) in plan.blocks.iter().enumerate() {
                finals.row_mut(b).assign(&fused.row(block.vertex));
            }
        } else {
            let wq = self.params.get(self.w_query).value.view();
            let wk = self.params.get(self.w_key).value.view();
            let per: Vec<(Array2<f64>, AttentionTrace)> = plan
                .blocks
                .par_iter()
                .map(|block| {
                    let mut rows = Vec::with_capacity(block.sampled.len() + 1);
                    rows.push(block.vertex);
                    rows.extend_from_slice(&block.sampled);
                    let s = fused.select(Axis(0), &rows);
                    let trace = attend_trace(s.view(), wq, wk, self.gamma);
                    (s, trace)
                })
                .collect();
            for (b, (s, trace)) in per.into_iter().enumerate() {
                finals.row_mut(b).assign(&trace.output.row(0));
                stacked.push(s);
                attention.push(trace);
            }
        }

        let users = Self::gather(&finals, &plan.triple_blocks, 0);
        let pos = Self::gather(&finals, &plan.triple_blocks, 1);
        let neg = Self::gather(&finals, &plan.triple_blocks, 2);
        let bpr = bpr_loss(users.view(), pos.view(), neg.view())?;
        let all = ndarray::concatenate(Axis(0), &[users.view(), pos.view(), neg.view()]).expect("same width");
        let l2 = l2_loss(all.view());
        let mut tur = 0.0;
        if !plan.tur_pairs.is_empty() {
            let sum: f64 = plan
                .tur_pairs
                .iter()
                .map(|&(a, k)| tur_term(attention[a].output.view(), finals.row(k)))
                .sum();
            tur = sum / plan.tur_pairs.len() as f64;
        }
        let loss = combined_loss(bpr, tur, l2, self.psi_l2)?;
        let record = ForwardRecord {
            plan: plan.clone(),
            encoder_traces,
            stacked,
            attention,
            finals,
            loss,
        };
        Ok((loss, record))
    }

    /// Total loss for a fixed plan, without keeping the record.
    pub fn loss(&self, plan: &BatchPlan) -> Result<LossBreakdown> {
        Ok(self.forward(plan)?.0)
    }

    /// Accumulates `d total / d θ` into the parameter store's gradients.
    pub fn backward(&mut self, record: &ForwardRecord) -> Result<()> {
        self.backward_scaled(record, 1.0)
    }

    /// As [`backward`](Self::backward) for `scale · total`.
    pub fn backward_scaled(&mut self, record: &ForwardRecord, scale: f64) -> Result<()> {
        let plan = &record.plan;
        if record.finals.nrows() != plan.blocks.len() || (!self.bypass_sgt && record.attention.len() != plan.blocks.len()) {
            return Err(Error::InvalidConfig("forward record does not match this model".into()));
        }
        let d = self.d;
        let nb = plan.blocks.len();
        let batch = plan.triples.len();
        let finals = &record.finals;

        // dL/d z̃ per block from BPR and L2
        let mut d_finals = Array2::<f64>::zeros((nb, d));
        let users = Self::gather(finals, &plan.triple_blocks, 0);
        let pos = Self::gather(finals, &plan.triple_blocks, 1);
        let neg = Self::gather(finals, &plan.triple_blocks, 2);
        let (du, dp, dn) = bpr_backward(users.view(), pos.view(), neg.view())?;
        let l2_weight = self.psi_l2 / (3 * batch.max(1)) as f64;
        for (r, tb) in plan.triple_blocks.iter().enumerate() {
            for (j, grads) in [&du, &dp, &dn].into_iter().enumerate() {
                let mut row = d_finals.row_mut(tb[j]);
                row.scaled_add(scale, &grads.row(r));
                row.scaled_add(scale * l2_weight, &finals.row(tb[j]));
            }
        }

        // unsmoothing loss: gradients into whole block outputs and neighbors
        let mut d_outputs: Vec<Option<Array2<f64>>> = vec![None; if self.bypass_sgt { 0 } else { nb }];
        if !plan.tur_pairs.is_empty() {
            let weight = scale / plan.tur_pairs.len() as f64;
            for &(a, k) in &plan.tur_pairs {
                let t = &record.attention[a].output;
                let (d_out, d_nbr) = tur_term_backward(t.view(), finals.row(k), weight);
                match d_outputs[a].as_mut() {
                    Some(acc) => *acc += &d_out,
                    None => d_outputs[a] = Some(d_out),
                }
                let mut row = d_finals.row_mut(k);
                row += &d_nbr;
            }
        }

        let n = self.num_vertices();
        let mut d_fused = Array2::<f64>::zeros((n, d));
        if self.bypass_sgt {
            for (b, block) in plan.blocks.iter().enumerate() {
                let mut row = d_fused.row_mut(block.vertex);
                row += &d_finals.row(b);
            }
        } else {
            let wq = self.params.get(self.w_query).value.view();
            let wk = self.params.get(self.w_key).value.view();
            let gamma = self.gamma;
            let per: Vec<(Array2<f64>, Array2<f64>, Array2<f64>)> = d_outputs
                .into_par_iter()
                .enumerate()
                .map(|(b, d_out)| {
                    let c1 = plan.blocks[b].sampled.len() + 1;
                    let mut d_out = d_out.unwrap_or_else(|| Array2::zeros((c1, d)));
                    let mut first = d_out.row_mut(0);
                    first += &d_finals.row(b);
                    attend_backward(record.stacked[b].view(), wq, wk, gamma, &record.attention[b], d_out.view())
                })
                .collect();
            let mut d_wq = Array2::<f64>::zeros(wq.raw_dim());
            let mut d_wk = Array2::<f64>::zeros(wk.raw_dim());
            for (b, (d_s, g_q, g_k)) in per.into_iter().enumerate() {
                let block = &plan.blocks[b];
                let mut row = d_fused.row_mut(block.vertex);
                row += &d_s.row(0);
                for (j, &v) in block.sampled.iter().enumerate() {
                    let mut row = d_fused.row_mut(v);
                    row += &d_s.row(j + 1);
                }
                d_wq += &g_q;
                d_wk += &g_k;
            }
            self.params.get_mut(self.w_query).grad += &d_wq;
            self.params.get_mut(self.w_key).grad += &d_wk;
        }

        // sum-pooling hands the same gradient to every modality
        let per_modality: Vec<Array2<f64>> = self
            .modalities
            .par_iter()
            .map(|m| propagate_adjoint(&self.adjacency, d_fused.view(), &m.config))
            .collect::<Result<_>>()?;
        for (m_idx, d_x) in per_modality.into_iter().enumerate() {
            match &self.modalities[m_idx].source {
                Source::Embedding(slot) => {
                    self.params.get_mut(*slot).grad += &d_x;
                }
                Source::Features { store, layers } => {
                    let trace = record.encoder_traces[m_idx]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidConfig("missing encoder trace".into()))?;
                    let compact = d_x.select(Axis(0), store.vertices());
                    let grads = {
                        let views = self.layer_views(layers);
                        encode_rows_backward(store.rows(), &views, trace, compact)
                    };
                    for (&(w, b), (d_w, d_b)) in layers.iter().zip(grads) {
                        self.params.get_mut(w).grad += &d_w;
                        let mut bias_grad = self.params.get_mut(b).grad.slice_mut(s![0, ..]);
                        bias_grad += &d_b;
                    }
                }
            }
        }
        Ok(())
    }

    /// Forward, backward and one Adam update.
    pub fn train_step(&mut self, plan: &BatchPlan, learning_rate: f64) -> Result<LossBreakdown> {
        let (loss, record) = self.forward(plan)?;
        self.backward(&record)?;
        self.params.adam_step(learning_rate)?;
        Ok(loss)
    }
}

/// Relative error used by the finite-difference checks:
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference gradient of the total loss for a fixed plan, one
/// coordinate at a time. Intended for small models.
pub fn numeric_gradient(model: &Model, plan: &BatchPlan, step: f64) -> Result<Vec<f64>> {
    let base = model.params.flat_values();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + step;
        probe.params.set_flat_values(&theta)?;
        let plus = probe.loss(plan)?.total;
        theta[i] = base[i] - step;
        probe.params.set_flat_values(&theta)?;
        let minus = probe.loss(plan)?.total;
        theta[i] = base[i];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Analytic gradient of the total loss for a fixed plan.
pub fn analytic_gradient(model: &Model, plan: &BatchPlan) -> Result<Vec<f64>> {
    let mut m = model.clone();
    m.params.zero_grad();
    let (_, record) = m.forward(plan)?;
    m.backward(&record)?;
    Ok(m.params.flat_grads())
}
