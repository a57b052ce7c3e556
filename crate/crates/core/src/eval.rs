//! Full-ranking top-K evaluation.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::InteractionSet;

pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Held-out truth and the items excluded from ranking, per user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSplit {
    num_users: usize,
    num_items: usize,
    ground_truth: Vec<Vec<usize>>,
    mask: Vec<Vec<usize>>,
}

impl EvalSplit {
    pub fn new(truth: &InteractionSet, mask: &InteractionSet) -> Result<Self> {
        if truth.num_users() != mask.num_users() || truth.num_items() != mask.num_items() {
            return Err(Error::shape(
                "evaluation split",
                format!("{}x{}", truth.num_users(), truth.num_items()),
                format!("{}x{}", mask.num_users(), mask.num_items()),
            ));
        }
        let ground_truth = truth.items_by_user();
        let mask_lists = mask.items_by_user();
        for (user, (t, m)) in ground_truth.iter().zip(&mask_lists).enumerate() {
            if let Some(&item) = t.iter().find(|i| m.binary_search(i).is_ok()) {
                return Err(Error::InvalidConfig(format!(
                    "user {user} item {item} is both held out and masked"
                )));
            }
        }
        Ok(Self {
            num_users: truth.num_users(),
            num_items: truth.num_items(),
            ground_truth,
            mask: mask_lists,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn ground_truth(&self, user: usize) -> &[usize] {
        &self.ground_truth[user]
    }

    pub fn mask(&self, user: usize) -> &[usize] {
        &self.mask[user]
    }
}

/// Mean recall and NDCG per cutoff over users with held-out items.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub users_evaluated: usize,
}

impl MetricReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ndcg_at.get(&k).copied()
    }

    /// Flat `recall@K` / `ndcg@K` pairs, recall first.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.recall_at.iter().map(|(k, v)| (format!("recall@{k}"), *v)).collect();
        out.extend(self.ndcg_at.iter().map(|(k, v)| (format!("ndcg@{k}"), *v)));
        out
    }
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self.entries();
        let mut map = serializer.serialize_map(Some(entries.len() + 1))?;
        for (k, v) in &entries {
            map.serialize_entry(k, v)?;
        }
        map.serialize_entry("users_evaluated", &self.users_evaluated)?;
        map.end()
    }
}

/// Top-`k` items among those not in `masked`, by descending score with
/// ties broken by ascending index. `masked` must be sorted.
pub fn rank_scores(scores: ArrayView1<f64>, masked: &[usize], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|i| masked.binary_search(i).is_err()).collect();
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(order);
    candidates
}

/// Like [`rank_scores`] but refuses a `k` larger than the candidate count.
pub fn rank_items(scores: ArrayView1<f64>, masked: &[usize], k: usize) -> Result<Vec<usize>> {
    let available = scores.len() - masked.iter().filter(|&&i| i < scores.len()).count();
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    Ok(rank_scores(scores, masked, k))
}

/// `|top_k ∩ truth| / |truth|`; `truth` sorted.
pub fn recall_at_k(ranked: &[usize], truth: &[usize], k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| truth.binary_search(i).is_ok()).count();
    hits as f64 / truth.len() as f64
}

/// Binary-relevance NDCG with the ideal ranking truncated at
/// `min(k, |truth|)`; `truth` sorted.
pub fn ndcg_at_k(ranked: &[usize], truth: &[usize], k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| truth.binary_search(i).is_ok())
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

fn check_ks(ks: &[usize]) -> Result<usize> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig(format!("cutoffs must be positive and non-empty: {ks:?}")));
    }
    Ok(*ks.iter().max().expect("non-empty"))
}

fn aggregate(per_user: Vec<Option<(Vec<f64>, Vec<f64>)>>, ks: &[usize]) -> Result<MetricReport> {
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    let mut users = 0usize;
    for (r, n) in per_user.into_iter().flatten() {
        users += 1;
        for j in 0..ks.len() {
            recall[j] += r[j];
            ndcg[j] += n[j];
        }
    }
    if users == 0 {
        return Err(Error::NoEvaluableUsers);
    }
    let mut report = MetricReport {
        users_evaluated: users,
        ..Default::default()
    };
    for (j, &k) in ks.iter().enumerate() {
        report.recall_at.insert(k, recall[j] / users as f64);
        report.ndcg_at.insert(k, ndcg[j] / users as f64);
    }
    Ok(report)
}

fn user_metrics(ranked: &[usize], truth: &[usize], ks: &[usize]) -> (Vec<f64>, Vec<f64>) {
    (
        ks.iter().map(|&k| recall_at_k(ranked, truth, k)).collect(),
        ks.iter().map(|&k| ndcg_at_k(ranked, truth, k)).collect(),
    )
}

/// Scores every item for every user with a held-out item by inner product
/// of final representations (users first, then items).
pub fn evaluate(final_reps: ArrayView2<f64>, split: &EvalSplit, ks: &[usize]) -> Result<MetricReport> {
    let max_k = check_ks(ks)?;
    let (nu, ni) = (split.num_users, split.num_items);
    if final_reps.nrows() != nu + ni {
        return Err(Error::shape("final representations", nu + ni, final_reps.nrows()));
    }
    let items = final_reps.slice(ndarray::s![nu.., ..]);
    let per_user: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..nu)
        .into_par_iter()
        .map(|u| {
            let truth = &split.ground_truth[u];
            if truth.is_empty() {
                return None;
            }
            let scores = items.dot(&final_reps.row(u));
            let ranked = rank_scores(scores.view(), &split.mask[u], max_k);
            Some(user_metrics(&ranked, truth, ks))
        })
        .collect();
    aggregate(per_user, ks)
}

/// Reference implementation over a precomputed `users x items` score
/// matrix: full sort per user, no partial selection, no parallelism.
pub fn brute_force_metrics_oracle(scores: ArrayView2<f64>, split: &EvalSplit, ks: &[usize]) -> Result<MetricReport> {
    check_ks(ks)?;
    if scores.dim() != (split.num_users, split.num_items) {
        return Err(Error::shape(
            "score matrix",
            format!("{}x{}", split.num_users, split.num_items),
            format!("{:?}", scores.dim()),
        ));
    }
    let mut per_user = Vec::with_capacity(split.num_users);
    for u in 0..split.num_users {
        let truth = &split.ground_truth[u];
        if truth.is_empty() {
            per_user.push(None);
            continue;
        }
        let row = scores.row(u);
        let mut order: Vec<usize> = (0..split.num_items).filter(|i| !split.mask[u].contains(i)).collect();
        order.sort_by(|a, b| row[*b].partial_cmp(&row[*a]).expect("finite scores").then(a.cmp(b)));
        per_user.push(Some(user_metrics(&order, truth, ks)));
    }
    aggregate(per_user, ks)
}
