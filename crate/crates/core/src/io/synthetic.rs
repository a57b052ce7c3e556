//! Block-structured synthetic datasets with group-clustered item features.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::encoding::ModalityId;
use crate::error::{Error, Result};
use crate::graph::InteractionSet;
use crate::io::config::{DatasetManifest, FeatureEntry};
use crate::io::features::{write_feature_matrix, ElementType, VertexRange};
use crate::io::interactions::{write_interactions, IdMap};
use crate::rng::stream;

const STREAM_EDGES: u64 = 101;
const STREAM_GLOBAL: u64 = 102;
const STREAM_FEATURES: u64 = 103;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_user_groups: usize,
    pub num_item_groups: usize,
    pub users_per_group: usize,
    pub items_per_group: usize,
    /// Share of a user's expected edges that land in its own item group.
    pub affinity: f64,
    /// Scales every edge probability; 1 makes in-group probability equal
    /// `affinity`.
    pub density: f64,
    /// Extra items each user likes, drawn uniformly from the whole catalog.
    pub global_likes: usize,
    pub feature_dims: Vec<(ModalityId, usize)>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_user_groups: 2,
            num_item_groups: 2,
            users_per_group: 100,
            items_per_group: 100,
            affinity: 0.9,
            density: 1.0,
            global_likes: 0,
            feature_dims: vec![(ModalityId::Text, 24), (ModalityId::Visual, 48)],
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_users(&self) -> usize {
        self.num_user_groups * self.users_per_group
    }

    pub fn num_items(&self) -> usize {
        self.num_item_groups * self.items_per_group
    }

    /// Item group a user group prefers.
    pub fn preferred_group(&self, user_group: usize) -> usize {
        user_group % self.num_item_groups
    }

    pub fn in_group_probability(&self) -> f64 {
        self.density * self.affinity
    }

    pub fn out_group_probability(&self) -> f64 {
        if self.num_item_groups < 2 {
            0.0
        } else {
            self.density * (1.0 - self.affinity) / (self.num_item_groups - 1) as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_user_groups == 0 || self.num_item_groups == 0 || self.users_per_group == 0 || self.items_per_group == 0 {
            return bad("group counts and sizes must be positive".into());
        }
        if !(self.affinity > 0.5 && self.affinity <= 1.0) {
            return bad(format!("affinity must lie in (0.5, 1], got {}", self.affinity));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density must lie in (0, 1], got {}", self.density));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and nonnegative, got {}", self.noise));
        }
        if self.global_likes >= self.num_items() {
            return bad("global_likes must be below the item count".into());
        }
        for (i, (m, dim)) in self.feature_dims.iter().enumerate() {
            if *dim == 0 || *m == ModalityId::Embedding || self.feature_dims[..i].iter().any(|(o, _)| o == m) {
                return bad(format!("bad feature modality `{m}` (dim {dim})"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub interactions: InteractionSet,
    pub user_groups: Vec<usize>,
    pub item_groups: Vec<usize>,
    /// Item feature matrices (`num_items x dim`) per modality.
    pub features: Vec<(ModalityId, Array2<f64>)>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (nu, ni) = (spec.num_users(), spec.num_items());
    let user_groups: Vec<usize> = (0..nu).map(|u| u / spec.users_per_group).collect();
    let item_groups: Vec<usize> = (0..ni).map(|i| i / spec.items_per_group).collect();
    let (p_in, p_out) = (spec.in_group_probability(), spec.out_group_probability());

    let mut edges = stream(spec.seed, STREAM_EDGES);
    let mut global = stream(spec.seed, STREAM_GLOBAL);
    let mut pairs = Vec::new();
    let mut liked = vec![false; ni];
    for (u, &group) in user_groups.iter().enumerate() {
        liked.fill(false);
        let preferred = spec.preferred_group(group);
        for i in 0..ni {
            let p = if item_groups[i] == preferred { p_in } else { p_out };
            if edges.random::<f64>() < p {
                liked[i] = true;
                pairs.push((u, i));
            }
        }
        let free: Vec<usize> = (0..ni).filter(|&i| !liked[i]).collect();
        for &i in free.choose_multiple(&mut global, spec.global_likes) {
            pairs.push((u, i));
        }
    }

    let mut feat_rng = stream(spec.seed, STREAM_FEATURES);
    let features = spec
        .feature_dims
        .iter()
        .map(|(m, dim)| {
            let centroids: Array2<f64> =
                Array2::from_shape_simple_fn((spec.num_item_groups, *dim), || StandardNormal.sample(&mut feat_rng));
            let mut x = Array2::zeros((ni, *dim));
            for (i, mut row) in x.rows_mut().into_iter().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    let eps: f64 = StandardNormal.sample(&mut feat_rng);
                    *v = centroids[[item_groups[i], j]] + spec.noise * eps;
                }
            }
            (m.clone(), x)
        })
        .collect();

    Ok(SyntheticData {
        interactions: InteractionSet::new(nu, ni, pairs)?,
        user_groups,
        item_groups,
        features,
    })
}

/// Writes `interactions.tsv`, id lists, one `.mmft` per modality,
/// `manifest.txt` and a starter `run.cfg` into `dir`; returns the manifest
/// path.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    let data = generate(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let users = IdMap::from_ids((0..spec.num_users()).map(|u| format!("u{u}")).collect())?;
    let items = IdMap::from_ids((0..spec.num_items()).map(|i| format!("i{i}")).collect())?;
    write_interactions(&dir.join("interactions.tsv"), &data.interactions, &users, &items)?;
    users.write(&dir.join("users.txt"))?;
    items.write(&dir.join("items.txt"))?;
    let mut features = Vec::new();
    for (m, x) in &data.features {
        let file = format!("{m}.mmft");
        write_feature_matrix(&dir.join(&file), x, ElementType::F64)?;
        features.push(FeatureEntry {
            modality: m.clone(),
            path: PathBuf::from(file),
            dim: x.ncols(),
            covers: VertexRange::Items,
        });
    }
    let manifest = DatasetManifest {
        name: format!("synthetic-{}", spec.seed),
        interactions: PathBuf::from("interactions.tsv"),
        user_ids: Some(PathBuf::from("users.txt")),
        item_ids: Some(PathBuf::from("items.txt")),
        num_users: Some(spec.num_users()),
        num_items: Some(spec.num_items()),
        num_interactions: Some(data.interactions.len()),
        features,
    };
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest.to_text()).map_err(|e| Error::io(&manifest_path, e))?;
    let run = "manifest = manifest.txt\noutput_dir = out\nd = 32\nd_att = 32\nlearning_rate = 0.01\n\
               psi_l2 = 0.0001\nbatch_size = 2048\nmax_epochs = 50\n";
    let run_path = dir.join("run.cfg");
    fs::write(&run_path, run).map_err(|e| Error::io(&run_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_affinity_without_noise_is_block_diagonal() {
        let spec = SyntheticSpec {
            affinity: 1.0,
            noise: 0.0,
            users_per_group: 5,
            items_per_group: 4,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        assert_eq!(data.interactions.len(), 2 * 5 * 4);
        for &(u, i) in data.interactions.pairs() {
            assert_eq!(data.user_groups[u], data.item_groups[i]);
        }
        for (_, x) in &data.features {
            assert_eq!(x.row(0), x.row(3));
            assert_ne!(x.row(0), x.row(4));
        }
    }

    #[test]
    fn global_likes_add_exactly_that_many() {
        let spec = SyntheticSpec {
            affinity: 1.0,
            global_likes: 1,
            users_per_group: 3,
            items_per_group: 4,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        for items in data.interactions.items_by_user() {
            assert_eq!(items.len(), 5);
        }
    }

    #[test]
    fn parameter_checks() {
        for spec in [
            SyntheticSpec { affinity: 0.5, ..Default::default() },
            SyntheticSpec { users_per_group: 0, ..Default::default() },
            SyntheticSpec { noise: -1.0, ..Default::default() },
            SyntheticSpec { density: 0.0, ..Default::default() },
        ] {
            assert!(generate(&spec).is_err());
        }
    }
}
