//! Hyperparameters, the epoch loop with early stopping, and evaluation of a
//! trained model on the validation or test split.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::encoding::{FeatureStore, ModalityId};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSplit, MetricReport, DEFAULT_KS};
use crate::graph::InteractionSet;
use crate::mgdn::{PropagationConfig, DEFAULT_MAX_HOPS};
use crate::model::Model;
use crate::objective::{sample_negative, InteractionIndex, LossBreakdown, TrainingTriple};
use crate::rng::RngStreams;

/// The cutoff early stopping and model selection look at.
pub const SELECTION_K: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub psi_l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub c_samples: usize,
    pub gamma: f64,
    pub d: usize,
    pub d_att: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Hops per modality tag; modalities not listed use `default_hops`.
    pub hops: BTreeMap<String, usize>,
    pub default_hops: usize,
    pub max_hops: usize,
    /// Width of an optional tanh hidden layer in the feature encoders.
    pub encoder_hidden: Option<usize>,
    /// SGT blocks averaged per vertex at evaluation time.
    pub eval_repeats: usize,
    /// Skip the transformer entirely (final representation = fused row).
    pub bypass_sgt: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            psi_l2: 1e-4,
            batch_size: 2048,
            max_epochs: 200,
            patience: 10,
            c_samples: 10,
            gamma: 0.9,
            d: 64,
            d_att: 64,
            alpha: 1.0,
            beta: 1.0,
            hops: BTreeMap::new(),
            default_hops: 2,
            max_hops: DEFAULT_MAX_HOPS,
            encoder_hidden: None,
            eval_repeats: 1,
            bypass_sgt: false,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("cannot parse `{value}` for `{key}` as a boolean"))),
    }
}

impl TrainConfig {
    pub fn hops_for(&self, modality: &ModalityId) -> usize {
        self.hops.get(modality.tag()).copied().unwrap_or(self.default_hops)
    }

    pub fn propagation_for(&self, modality: &ModalityId) -> PropagationConfig {
        PropagationConfig {
            alpha: self.alpha,
            beta: self.beta,
            k_hops: self.hops_for(modality),
        }
    }

    pub fn with_hops(mut self, modality: &ModalityId, k: usize) -> Self {
        self.hops.insert(modality.tag().to_string(), k);
        self
    }

    /// A zero learning rate is accepted so a frozen run can exercise the
    /// stopping rule.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if !(self.psi_l2.is_finite() && self.psi_l2 >= 0.0) {
            return bad(format!("psi_l2 must be finite and nonnegative, got {}", self.psi_l2));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 || self.d == 0 || self.d_att == 0 {
            return bad("batch_size, d and d_att must be positive".into());
        }
        if self.eval_repeats == 0 {
            return bad("eval_repeats must be at least 1".into());
        }
        if self.encoder_hidden == Some(0) {
            return bad("encoder_hidden must be positive when set".into());
        }
        let probe = PropagationConfig {
            alpha: self.alpha,
            beta: self.beta,
            k_hops: self.default_hops,
        };
        probe.validate(self.max_hops)?;
        for (tag, &k) in &self.hops {
            if k > self.max_hops {
                return bad(format!("k_{tag} = {k} exceeds max_hops {}", self.max_hops));
            }
        }
        Ok(())
    }

    /// Sets one hyperparameter from its text form. Keys match
    /// [`entries`](Self::entries); `k_<tag>` sets the hops of a modality.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "psi_l2" => self.psi_l2 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "c_samples" => self.c_samples = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "d_att" => self.d_att = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "k_default" => self.default_hops = parse(key, value)?,
            "max_hops" => self.max_hops = parse(key, value)?,
            "encoder_hidden" => {
                self.encoder_hidden = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eval_repeats" => self.eval_repeats = parse(key, value)?,
            "bypass_sgt" => self.bypass_sgt = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => match key.strip_prefix("k_") {
                Some(tag) if !tag.is_empty() => {
                    self.hops.insert(tag.to_string(), parse(key, value)?);
                }
                _ => return Err(Error::InvalidConfig(format!("unknown training key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Whether [`set`](Self::set) recognizes `key`.
    pub fn is_key(key: &str) -> bool {
        const KEYS: [&str; 17] = [
            "learning_rate",
            "psi_l2",
            "batch_size",
            "max_epochs",
            "patience",
            "c_samples",
            "gamma",
            "d",
            "d_att",
            "alpha",
            "beta",
            "k_default",
            "max_hops",
            "encoder_hidden",
            "eval_repeats",
            "bypass_sgt",
            "seed",
        ];
        KEYS.contains(&key) || key.strip_prefix("k_").is_some_and(|tag| !tag.is_empty())
    }

    /// Canonical `(key, value)` pairs; feeding them back through
    /// [`set`](Self::set) reproduces the config exactly.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("learning_rate".into(), format!("{:?}", self.learning_rate)),
            ("psi_l2".into(), format!("{:?}", self.psi_l2)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("c_samples".into(), self.c_samples.to_string()),
            ("gamma".into(), format!("{:?}", self.gamma)),
            ("d".into(), self.d.to_string()),
            ("d_att".into(), self.d_att.to_string()),
            ("alpha".into(), format!("{:?}", self.alpha)),
            ("beta".into(), format!("{:?}", self.beta)),
            ("k_default".into(), self.default_hops.to_string()),
            ("max_hops".into(), self.max_hops.to_string()),
            (
                "encoder_hidden".into(),
                self.encoder_hidden.map_or_else(|| "none".to_string(), |h| h.to_string()),
            ),
            ("eval_repeats".into(), self.eval_repeats.to_string()),
            ("bypass_sgt".into(), self.bypass_sgt.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        out.extend(self.hops.iter().map(|(tag, k)| (format!("k_{tag}"), k.to_string())));
        out
    }
}

/// Interaction splits over one vertex set, plus the side features.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: InteractionSet,
    pub valid: InteractionSet,
    pub test: InteractionSet,
    pub features: Vec<FeatureStore>,
}

impl TrainData {
    pub fn validate(&self) -> Result<()> {
        let dims = (self.train.num_users(), self.train.num_items());
        for set in [&self.valid, &self.test] {
            if (set.num_users(), set.num_items()) != dims {
                return Err(Error::shape(
                    "split dimensions",
                    format!("{}x{}", dims.0, dims.1),
                    format!("{}x{}", set.num_users(), set.num_items()),
                ));
            }
        }
        if self.train.is_empty() {
            return Err(Error::EmptyTrainingSplit);
        }
        Ok(())
    }

    /// Validation truth with training interactions masked.
    pub fn validation_split(&self) -> Result<EvalSplit> {
        EvalSplit::new(&self.valid, &self.train)
    }

    /// Test truth with training and validation interactions masked.
    pub fn test_split(&self) -> Result<EvalSplit> {
        EvalSplit::new(&self.test, &self.train.union(&self.valid)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bpr: f64,
    pub tur: f64,
    pub l2: f64,
    pub total: f64,
    #[serde(rename = "val_recall@10")]
    pub val_recall_10: f64,
    #[serde(rename = "val_recall@20")]
    pub val_recall_20: f64,
    #[serde(rename = "val_ndcg@10")]
    pub val_ndcg_10: f64,
    #[serde(rename = "val_ndcg@20")]
    pub val_ndcg_20: f64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Holds the best-validation parameters (the initial ones if no epoch ran).
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_validation: Option<MetricReport>,
}

/// Scores `split` with the deterministic inference-time representations.
pub fn evaluate_model(model: &Model, config: &TrainConfig, split: &EvalSplit) -> Result<MetricReport> {
    evaluate(ranking_representations(model, config)?.view(), split, &DEFAULT_KS)
}

/// Final representations with the run's evaluation stream, as used for
/// scoring.
pub fn ranking_representations(model: &Model, config: &TrainConfig) -> Result<Array2<f64>> {
    model.final_representations(RngStreams::new(config.seed).eval_seed, config.eval_repeats)
}

/// Builds a model with the run's init stream without training it.
pub fn init_model(config: &TrainConfig, data: &TrainData) -> Result<Model> {
    data.validate()?;
    let mut streams = RngStreams::new(config.seed);
    Model::new(config, &data.train, &data.features, &mut streams.init)
}

pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    train_with_callback(config, data, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch's record is made.
pub fn train_with_callback(
    config: &TrainConfig,
    data: &TrainData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let mut streams = RngStreams::new(config.seed);
    let mut model = Model::new(config, &data.train, &data.features, &mut streams.init)?;
    let valid = data.validation_split()?;
    let index = InteractionIndex::new(&data.train);
    let mut edges: Vec<(usize, usize)> = data.train.pairs().to_vec();
    let start = Instant::now();

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, MetricReport, crate::params::ParameterStore)> = None;
    let mut stale = 0usize;
    for epoch in 1..=config.max_epochs {
        edges.shuffle(&mut streams.shuffle);
        let mut sums = LossBreakdown::default();
        for chunk in edges.chunks(config.batch_size) {
            let triples = chunk
                .iter()
                .map(|&(user, pos_item)| {
                    Ok(TrainingTriple {
                        user,
                        pos_item,
                        neg_item: sample_negative(&index, user, &mut streams.negative)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let plan = model.plan_batch(triples, &mut streams.sgt, &mut streams.tur)?;
            let loss = model.train_step(&plan, config.learning_rate)?;
            let w = chunk.len() as f64;
            sums.bpr += w * loss.bpr;
            sums.tur += w * loss.tur;
            sums.l2 += w * loss.l2;
            sums.total += w * loss.total;
        }
        let n = edges.len() as f64;
        let metrics = evaluate_model(&model, config, &valid)?;
        let ndcg = metrics.ndcg(SELECTION_K).unwrap_or(0.0);
        let record = EpochRecord {
            epoch,
            bpr: sums.bpr / n,
            tur: sums.tur / n,
            l2: sums.l2 / n,
            total: sums.total / n,
            val_recall_10: metrics.recall(10).unwrap_or(0.0),
            val_recall_20: metrics.recall(20).unwrap_or(0.0),
            val_ndcg_10: metrics.ndcg(10).unwrap_or(0.0),
            val_ndcg_20: ndcg,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        };
        debug!("epoch {epoch}: total {:.6} val ndcg@20 {ndcg:.6}", record.total);
        on_epoch(&record);
        log.push(record);

        if best.as_ref().is_none_or(|(score, ..)| ndcg > *score) {
            best = Some((ndcg, epoch, metrics, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                info!("stopping after epoch {epoch}: no validation gain in {stale} epochs");
                break;
            }
        }
    }

    let (best_epoch, best_validation) = match best {
        Some((_, epoch, metrics, params)) => {
            *model.params_mut() = params;
            (Some(epoch), Some(metrics))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_validation,
    })
}
