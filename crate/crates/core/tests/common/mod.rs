#![allow(dead_code)]

use miggt::encoding::{FeatureStore, ModalityId};
use miggt::graph::InteractionSet;
use miggt::io::split::{split_interactions, SplitSpec};
use miggt::io::synthetic::{generate, SyntheticSpec};
use miggt::model::{BatchPlan, Model};
use miggt::objective::TrainingTriple;
use miggt::rng::stream;
use miggt::train::{TrainConfig, TrainData};
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// Splits a synthetic dataset; item features cover the item range.
pub fn synthetic_data(spec: &SyntheticSpec, split_seed: u64) -> TrainData {
    let data = generate(spec).unwrap();
    let (nu, ni) = (spec.num_users(), spec.num_items());
    let features = data
        .features
        .iter()
        .map(|(m, x)| FeatureStore::for_range(m.clone(), nu + ni, nu, x.clone()).unwrap())
        .collect();
    let (train, valid, test) = split_interactions(
        &data.interactions,
        &SplitSpec {
            seed: split_seed,
            ..Default::default()
        },
    )
    .unwrap();
    TrainData {
        train,
        valid,
        test,
        features,
    }
}

/// Desk-scale dataset: two groups of 100 users and 100 items each.
pub fn desk_spec(seed: u64, global_likes: usize) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        global_likes,
        ..Default::default()
    }
}

pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        d: 32,
        d_att: 32,
        learning_rate: 0.01,
        psi_l2: 1e-4,
        max_epochs: 50,
        seed,
        ..Default::default()
    }
}

/// A random model of at most 10 vertices with embedding, text and visual
/// modalities, plus a fixed batch plan over it.
pub fn random_instance(seed: u64, c_samples: usize) -> (Model, BatchPlan) {
    let mut rng = stream(seed, 900);
    let nu = rng.random_range(1..=4);
    let ni = rng.random_range(2..=(10 - nu).min(6));
    let mut pairs = Vec::new();
    for u in 0..nu {
        let mut items: Vec<usize> = (0..ni).collect();
        let k = rng.random_range(1..ni);
        for &i in items.partial_shuffle(&mut rng, k).0.iter() {
            pairs.push((u, i));
        }
    }
    let train = InteractionSet::new(nu, ni, pairs.clone()).unwrap();
    let n = nu + ni;

    let text_dim = rng.random_range(1..=4);
    let text_items: Vec<usize> = (nu..n).filter(|_| rng.random_bool(0.8)).collect();
    let text = FeatureStore::new(
        ModalityId::Text,
        n,
        text_items.clone(),
        Array2::from_shape_simple_fn((text_items.len(), text_dim), || rng.random_range(-1.0..1.0)),
    )
    .unwrap();
    let visual_dim = rng.random_range(1..=5);
    let visual_rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let visual = FeatureStore::new(
        ModalityId::Visual,
        n,
        visual_rows.clone(),
        Array2::from_shape_simple_fn((visual_rows.len(), visual_dim), || rng.random_range(-1.0..1.0)),
    )
    .unwrap();

    let alpha = rng.random_range(0.0..2.0);
    let config = TrainConfig {
        d: rng.random_range(2..=6),
        d_att: rng.random_range(1..=4),
        c_samples,
        gamma: rng.random_range(0.0..1.0),
        psi_l2: rng.random_range(0.0..0.5),
        alpha,
        beta: rng.random_range(0.1..2.0),
        encoder_hidden: if rng.random_bool(0.5) { Some(rng.random_range(1..=3)) } else { None },
        seed,
        ..Default::default()
    }
    .with_hops(&ModalityId::Embedding, rng.random_range(0..=4))
    .with_hops(&ModalityId::Text, rng.random_range(0..=4))
    .with_hops(&ModalityId::Visual, rng.random_range(0..=4));

    let mut init = stream(seed, 901);
    let mut model = Model::new(&config, &train, &[text, visual], &mut init).unwrap();
    // unit-scale values everywhere so no term vanishes next to the others
    let n_scalars = model.params().num_scalars();
    let scale: Vec<f64> = (0..n_scalars).map(|_| rng.random_range(-1.0..1.0)).collect();
    model.params_mut().set_flat_values(&scale).unwrap();

    let index = train.items_by_user();
    let batch = rng.random_range(1..=4);
    let triples = (0..batch)
        .map(|_| {
            let &(user, pos_item) = pairs.choose(&mut rng).unwrap();
            let negatives: Vec<usize> = (0..ni).filter(|i| index[user].binary_search(i).is_err()).collect();
            TrainingTriple {
                user,
                pos_item,
                neg_item: *negatives.choose(&mut rng).unwrap(),
            }
        })
        .collect();
    let plan = model
        .plan_batch(triples, &mut stream(seed, 902), &mut stream(seed, 903))
        .unwrap();
    (model, plan)
}
