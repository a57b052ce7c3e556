//! Training losses and the samplers that feed them.
//!
//! All losses are batch means. Each `*_backward` returns gradients of the
//! corresponding mean loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::InteractionSet;
use crate::sgt::SampledBlock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrainingTriple {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub tur: f64,
    pub l2: f64,
    pub total: f64,
    pub l2_coefficient: f64,
}

/// Per-user sorted training items, for rejection sampling.
#[derive(Clone, Debug)]
pub struct InteractionIndex {
    num_items: usize,
    items: Vec<Vec<usize>>,
}

impl InteractionIndex {
    pub fn new(interactions: &InteractionSet) -> Self {
        Self {
            num_items: interactions.num_items(),
            items: interactions.items_by_user(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn items_of(&self, user: usize) -> &[usize] {
        &self.items[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.items[user].binary_search(&item).is_ok()
    }
}

/// Uniform over the items `user` has not interacted with.
pub fn sample_negative<R: Rng + ?Sized>(index: &InteractionIndex, user: usize, rng: &mut R) -> Result<usize> {
    if user >= index.items.len() {
        return Err(Error::VertexOutOfRange {
            vertex: user,
            num_vertices: index.items.len(),
        });
    }
    if index.items[user].len() >= index.num_items {
        return Err(Error::NoNegative(user));
    }
    loop {
        let item = rng.random_range(0..index.num_items);
        if !index.contains(user, item) {
            return Ok(item);
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_batch(users: &ArrayView2<f64>, pos: &ArrayView2<f64>, neg: &ArrayView2<f64>) -> Result<()> {
    if users.dim() != pos.dim() || users.dim() != neg.dim() {
        return Err(Error::shape(
            "bpr batch",
            format!("{:?}", users.dim()),
            format!("{:?} / {:?}", pos.dim(), neg.dim()),
        ));
    }
    Ok(())
}

fn margins(users: ArrayView2<f64>, pos: ArrayView2<f64>, neg: ArrayView2<f64>) -> Vec<f64> {
    users
        .rows()
        .into_iter()
        .zip(pos.rows())
        .zip(neg.rows())
        .map(|((u, p), n)| u.dot(&p) - u.dot(&n))
        .collect()
}

/// Mean of `softplus(-(u·p - u·n))` over the batch.
pub fn bpr_loss(users: ArrayView2<f64>, pos: ArrayView2<f64>, neg: ArrayView2<f64>) -> Result<f64> {
    check_batch(&users, &pos, &neg)?;
    if users.nrows() == 0 {
        return Ok(0.0);
    }
    let m = margins(users, pos, neg);
    Ok(m.iter().map(|&x| softplus(-x)).sum::<f64>() / m.len() as f64)
}

/// Gradients of [`bpr_loss`] w.r.t. `(users, pos, neg)`.
pub fn bpr_backward(
    users: ArrayView2<f64>,
    pos: ArrayView2<f64>,
    neg: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    check_batch(&users, &pos, &neg)?;
    let b = users.nrows().max(1) as f64;
    let m = margins(users, pos, neg);
    let mut du = Array2::zeros(users.raw_dim());
    let mut dp = Array2::zeros(users.raw_dim());
    let mut dn = Array2::zeros(users.raw_dim());
    for (r, &margin) in m.iter().enumerate() {
        let coef = -sigmoid(-margin) / b;
        Zip::from(du.row_mut(r))
            .and(pos.row(r))
            .and(neg.row(r))
            .for_each(|d, &p, &n| *d = coef * (p - n));
        dp.row_mut(r).assign(&users.row(r).mapv(|u| coef * u));
        dn.row_mut(r).assign(&users.row(r).mapv(|u| -coef * u));
    }
    Ok((du, dp, dn))
}

/// `(1/2) · mean ‖z‖²` over the rows.
pub fn l2_loss(reps: ArrayView2<f64>) -> f64 {
    if reps.nrows() == 0 {
        return 0.0;
    }
    0.5 * reps.iter().map(|v| v * v).sum::<f64>() / reps.nrows() as f64
}

pub fn l2_backward(reps: ArrayView2<f64>) -> Array2<f64> {
    let b = reps.nrows().max(1) as f64;
    reps.mapv(|v| v / b)
}

/// One unsmoothing term: `logsumexp_j(z_k·T_j) - z_k·T_0`.
pub fn tur_term(block_output: ArrayView2<f64>, neighbor: ArrayView1<f64>) -> f64 {
    let logits = block_output.dot(&neighbor);
    logsumexp(logits.view()) - logits[0]
}

fn logsumexp(x: ArrayView1<f64>) -> f64 {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Gradients of one term w.r.t. `(T, z_k)`, scaled by `weight`.
pub fn tur_term_backward(block_output: ArrayView2<f64>, neighbor: ArrayView1<f64>, weight: f64) -> (Array2<f64>, Array1<f64>) {
    let logits = block_output.dot(&neighbor);
    let lse = logsumexp(logits.view());
    let mut d_logits = logits.mapv(|l| (l - lse).exp() * weight);
    d_logits[0] -= weight;
    let mut d_output = Array2::zeros(block_output.raw_dim());
    for (mut row, &g) in d_output.rows_mut().into_iter().zip(d_logits.iter()) {
        row.assign(&neighbor.mapv(|z| g * z));
    }
    let d_neighbor = block_output.t().dot(&d_logits);
    (d_output, d_neighbor)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TurOutcome {
    pub loss: f64,
    pub anchors: usize,
    /// Anchors without any neighbor contribute nothing.
    pub skipped: usize,
}

/// Mean unsmoothing loss over anchors that have a sampled neighbor.
pub fn tur_loss(blocks: &[SampledBlock], neighbor_reps: &[Option<Array1<f64>>]) -> Result<TurOutcome> {
    if blocks.len() != neighbor_reps.len() {
        return Err(Error::shape("tur_loss", blocks.len(), neighbor_reps.len()));
    }
    let mut out = TurOutcome::default();
    let mut sum = 0.0;
    for (block, neighbor) in blocks.iter().zip(neighbor_reps) {
        let Some(neighbor) = neighbor else {
            out.skipped += 1;
            continue;
        };
        let t = block
            .output
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("block for vertex {} has not been attended", block.anchor)))?;
        if neighbor.len() != t.ncols() {
            return Err(Error::shape("tur neighbor", t.ncols(), neighbor.len()));
        }
        sum += tur_term(t.view(), neighbor.view());
        out.anchors += 1;
    }
    if out.anchors > 0 {
        out.loss = sum / out.anchors as f64;
    }
    Ok(out)
}

/// `bpr + tur + psi_l2 · l2`.
pub fn combined_loss(bpr: f64, tur: f64, l2: f64, psi_l2: f64) -> Result<LossBreakdown> {
    for (component, value) in [("bpr", bpr), ("tur", tur), ("l2", l2), ("l2 coefficient", psi_l2)] {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { component, value });
        }
    }
    Ok(LossBreakdown {
        bpr,
        tur,
        l2,
        total: bpr + tur + psi_l2 * l2,
        l2_coefficient: psi_l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use std::f64::consts::LN_2;

    fn block_with_output(output: Array2<f64>) -> SampledBlock {
        SampledBlock {
            anchor: 0,
            sampled: vec![0; output.nrows() - 1],
            stacked: output.clone(),
            output: Some(output),
        }
    }

    #[test]
    fn negative_sampling_forced_choice() {
        let set = InteractionSet::new(1, 2, vec![(0, 0)]).unwrap();
        let index = InteractionIndex::new(&set);
        let mut rng = rng::stream(0, 0);
        for _ in 0..50 {
            assert_eq!(sample_negative(&index, 0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn negative_sampling_reproducible() {
        let set = InteractionSet::new(1, 20, vec![(0, 3)]).unwrap();
        let index = InteractionIndex::new(&set);
        let a = sample_negative(&index, 0, &mut rng::stream(5, 3)).unwrap();
        let b = sample_negative(&index, 0, &mut rng::stream(5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_sampling_uniform() {
        let set = InteractionSet::new(1, 10, vec![(0, 4)]).unwrap();
        let index = InteractionIndex::new(&set);
        let mut rng = rng::stream(21, 3);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_negative(&index, 0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[4], 0);
        for (i, &c) in counts.iter().enumerate().filter(|&(i, _)| i != 4) {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 9.0).abs() <= 0.01, "item {i}: {freq}");
        }
    }

    #[test]
    fn negative_sampling_exhausted_user() {
        let set = InteractionSet::new(1, 2, vec![(0, 0), (0, 1)]).unwrap();
        let index = InteractionIndex::new(&set);
        assert!(matches!(sample_negative(&index, 0, &mut rng::stream(0, 0)), Err(Error::NoNegative(0))));
    }

    #[test]
    fn bpr_examples() {
        let z = Array2::<f64>::zeros((1, 3));
        assert_abs_diff_eq!(bpr_loss(z.view(), z.view(), z.view()).unwrap(), LN_2, epsilon = 1e-15);
        let u = array![[1.0, 0.0]];
        let p = array![[20.0, 0.0]];
        let n = array![[0.0, 0.0]];
        let loss = bpr_loss(u.view(), p.view(), n.view()).unwrap();
        assert_abs_diff_eq!(loss, 2.061_153_620_314_381e-9, epsilon = 1e-22);
        let z2 = Array2::<f64>::zeros((2, 4));
        assert_abs_diff_eq!(bpr_loss(z2.view(), z2.view(), z2.view()).unwrap(), LN_2, epsilon = 1e-15);
        assert!(bpr_loss(z2.view(), z.view(), z2.view()).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_abs_diff_eq!(softplus(0.0), LN_2, epsilon = 1e-16);
    }

    #[test]
    fn tur_examples() {
        let t = array![[0.5, 1.0]];
        let out = tur_loss(&[block_with_output(t)], &[Some(array![2.0, -3.0])]).unwrap();
        assert_eq!(out.loss, 0.0);

        let same = Array2::from_shape_fn((4, 2), |(_, j)| j as f64 + 0.5);
        let out = tur_loss(&[block_with_output(same)], &[Some(array![0.3, 0.9])]).unwrap();
        assert_abs_diff_eq!(out.loss, 4f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(out.loss, 1.386294, epsilon = 1e-6);

        let ortho = array![[1.0, 0.0], [2.0, 0.0]];
        let out = tur_loss(&[block_with_output(ortho)], &[Some(array![0.0, 1.0])]).unwrap();
        assert_abs_diff_eq!(out.loss, LN_2, epsilon = 1e-15);
    }

    #[test]
    fn tur_skips_isolated_anchors() {
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let out = tur_loss(
            &[block_with_output(t.clone()), block_with_output(t)],
            &[None, Some(array![0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.anchors, 1);
        assert_abs_diff_eq!(out.loss, LN_2, epsilon = 1e-15);
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_loss(Array2::<f64>::zeros((3, 2)).view()), 0.0);
        assert_eq!(l2_loss(array![[3.0, 4.0]].view()), 12.5);
        assert_eq!(l2_loss(array![[1.0, 0.0], [0.0, 3.0]].view()), 2.5);
    }

    #[test]
    fn combined_examples() {
        let l = combined_loss(0.693, 0.0, 0.0, 1e-4).unwrap();
        assert_eq!(l.total, 0.693);
        let l = combined_loss(0.5, 0.2, 10.0, 1e-4).unwrap();
        assert_abs_diff_eq!(l.total, 0.701, epsilon = 1e-12);
        assert_eq!(combined_loss(0.0, 0.0, 0.0, 1e-5).unwrap().total, 0.0);
        let err = combined_loss(0.1, f64::NAN, 0.0, 1e-4).unwrap_err();
        assert!(err.to_string().contains("tur"), "{err}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::testing::{assert_grad_close, numeric_grad};
        let u = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 + 1.0) * 0.2 - j as f64 * 0.3);
        let p = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) % 3) as f64 * 0.5 - 0.4);
        let n = Array2::from_shape_fn((3, 4), |(i, j)| (i * j) as f64 * 0.1 - 0.2);
        let (du, dp, dn) = bpr_backward(u.view(), p.view(), n.view()).unwrap();
        assert_grad_close(&du, &numeric_grad(&u, 1e-5, |x| bpr_loss(x.view(), p.view(), n.view()).unwrap()), "bpr users");
        assert_grad_close(&dp, &numeric_grad(&p, 1e-5, |x| bpr_loss(u.view(), x.view(), n.view()).unwrap()), "bpr pos");
        assert_grad_close(&dn, &numeric_grad(&n, 1e-5, |x| bpr_loss(u.view(), p.view(), x.view()).unwrap()), "bpr neg");

        assert_grad_close(&l2_backward(u.view()), &numeric_grad(&u, 1e-5, |x| l2_loss(x.view())), "l2");

        let t = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.5) * (j as f64 + 0.5) * 0.4);
        let z = Array2::from_shape_fn((1, 3), |(_, j)| 0.3 - j as f64 * 0.45);
        let (dt, dz) = tur_term_backward(t.view(), z.row(0), 0.7);
        assert_grad_close(&dt, &numeric_grad(&t, 1e-5, |x| 0.7 * tur_term(x.view(), z.row(0))), "tur output");
        let dz = dz.insert_axis(ndarray::Axis(0));
        assert_grad_close(&dz, &numeric_grad(&z, 1e-5, |x| 0.7 * tur_term(t.view(), x.row(0))), "tur neighbor");
    }
}
