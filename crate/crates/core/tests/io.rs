mod common;

use std::fs;

use miggt::encoding::ModalityId;
use miggt::error::Error;
use miggt::io::config::{load_dataset, DatasetManifest, RunConfig};
use miggt::io::features::{read_feature_matrix, write_feature_matrix, ElementType};
use miggt::io::params_file::{load_params, save_params};
use miggt::io::synthetic::{generate, write_synthetic, SyntheticSpec};
use miggt::train::{init_model, train, TrainConfig};
use ndarray::Array2;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        users_per_group: 12,
        items_per_group: 10,
        feature_dims: vec![(ModalityId::Text, 5), (ModalityId::Visual, 3)],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn written_synthetic_dataset_loads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let manifest_path = write_synthetic(&spec, dir.path()).unwrap();
    let generated = generate(&spec).unwrap();

    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    assert_eq!(manifest.num_interactions, Some(generated.interactions.len()));
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.interactions.pairs(), generated.interactions.pairs());
    assert_eq!(loaded.duplicates, 0);
    assert_eq!(loaded.users.len(), spec.num_users());
    assert_eq!(loaded.items.ids()[3], "i3");

    let nu = spec.num_users();
    for ((m, x), store) in generated.features.iter().zip(&loaded.features) {
        assert_eq!(store.modality(), m);
        let dense = store.to_dense();
        assert_eq!(dense.slice(ndarray::s![nu.., ..]), x.view());
        assert!(dense.slice(ndarray::s![..nu, ..]).iter().all(|&v| v == 0.0));
        assert!((0..nu).all(|u| !store.has_feature(u)));
    }
}

#[test]
fn declared_counts_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_synthetic(&small_spec(), dir.path()).unwrap();
    let mut manifest = DatasetManifest::load(&manifest_path).unwrap();
    let n = manifest.num_interactions.unwrap();
    manifest.num_interactions = Some(n + 1);
    match load_dataset(&manifest) {
        Err(Error::CountMismatch { what, declared, found }) => {
            assert_eq!((what, declared, found), ("interactions", n + 1, n));
        }
        other => panic!("expected a count mismatch, got {other:?}"),
    }
    // manifests survive their own text form
    let text_path = dir.path().join("again.txt");
    fs::write(&text_path, manifest.to_text()).unwrap();
    assert_eq!(DatasetManifest::load(&text_path).unwrap(), manifest);
}

#[test]
fn interaction_ids_outside_the_frozen_lists_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_synthetic(&small_spec(), dir.path()).unwrap();
    let inter = dir.path().join("interactions.tsv");
    let mut text = fs::read_to_string(&inter).unwrap();
    text.push_str("stranger\ti0\n");
    fs::write(&inter, text).unwrap();
    let mut manifest = DatasetManifest::load(&manifest_path).unwrap();
    manifest.num_interactions = None;
    assert!(load_dataset(&manifest).is_err());
}

#[test]
fn feature_files_round_trip_in_both_widths() {
    let dir = tempfile::tempdir().unwrap();
    let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 + 0.1) * (j as f64 - 1.3));
    let p64 = dir.path().join("x64.mmft");
    write_feature_matrix(&p64, &x, ElementType::F64).unwrap();
    assert_eq!(read_feature_matrix(&p64).unwrap().1, x);

    let p32 = dir.path().join("x32.mmft");
    write_feature_matrix(&p32, &x, ElementType::F32).unwrap();
    let (header, y) = read_feature_matrix(&p32).unwrap();
    assert_eq!((header.rows, header.cols), (4, 3));
    assert_eq!(y, x.mapv(|v| v as f32 as f64));

    let bytes = fs::read(&p64).unwrap();
    fs::write(&p64, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_feature_matrix(&p64), Err(Error::TruncatedFeatures { .. })));
}

#[test]
fn trained_parameters_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::synthetic_data(&small_spec(), 2);
    let cfg = TrainConfig { d: 6, d_att: 4, c_samples: 2, max_epochs: 2, learning_rate: 0.01, ..Default::default() };
    let trained = train(&cfg, &data).unwrap().model;
    let path = dir.path().join("p.mmpr");
    save_params(&path, &trained.params().named_values()).unwrap();

    let mut fresh = init_model(&TrainConfig { seed: 99, ..cfg.clone() }, &data).unwrap();
    assert_ne!(fresh.params().flat_values(), trained.params().flat_values());
    fresh.params_mut().load_values(&load_params(&path).unwrap()).unwrap();
    assert_eq!(fresh.params().flat_values(), trained.params().flat_values());

    // a model with a different shape refuses the file
    let mut other = init_model(&TrainConfig { d: 7, ..cfg }, &data).unwrap();
    assert!(other.params_mut().load_values(&load_params(&path).unwrap()).is_err());

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_params(&path), Err(Error::ParamFile(_))));
}

#[test]
fn run_config_text_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&small_spec(), dir.path()).unwrap();
    let path = dir.path().join("custom.cfg");
    fs::write(
        &path,
        "# comment\nmanifest = manifest.txt\nsplit_seed = 4\nk_text = 3\nencoder_hidden = 7\ngamma = 0.5\n",
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.manifest, dir.path().join("manifest.txt"));
    assert_eq!(cfg.output_dir, dir.path().join("out"));
    assert_eq!(cfg.split.seed, 4);
    assert_eq!(cfg.train.hops_for(&ModalityId::Text), 3);
    assert_eq!(cfg.train.encoder_hidden, Some(7));

    let again = dir.path().join("again.cfg");
    fs::write(&again, cfg.to_text()).unwrap();
    assert_eq!(RunConfig::load(&again).unwrap(), cfg);

    fs::write(&path, "manifest = manifest.txt\nlearning_rate = 0.1\nlearning_rate = 0.2\n").unwrap();
    assert!(RunConfig::load(&path).is_err());
    fs::write(&path, "manifest = manifest.txt\nmystery = 1\n").unwrap();
    assert!(RunConfig::load(&path).is_err());
}
