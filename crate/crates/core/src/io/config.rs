//! Flat `key = value` documents: dataset manifests and run configs.
//!
//! Relative paths resolve against the directory of the file they appear in.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::encoding::{FeatureStore, ModalityId};
use crate::error::{Error, Result};
use crate::graph::InteractionSet;
use crate::io::features::{load_features, VertexRange};
use crate::io::interactions::{load_interactions_with, IdMap};
use crate::io::split::{split_interactions, SplitSpec};
use crate::train::{TrainConfig, TrainData};

/// Ordered pairs from a `key = value` document. `#` starts a comment;
/// repeated keys are an error.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(err(format!("key `{key}` repeated")));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn parse_count(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}` must be a count, got `{value}`")))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEntry {
    pub modality: ModalityId,
    pub path: PathBuf,
    pub dim: usize,
    pub covers: VertexRange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub interactions: PathBuf,
    pub user_ids: Option<PathBuf>,
    pub item_ids: Option<PathBuf>,
    /// Declared counts, checked against the loaded data when present.
    pub num_users: Option<usize>,
    pub num_items: Option<usize>,
    pub num_interactions: Option<usize>,
    pub features: Vec<FeatureEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let base = parent_dir(source);
        let mut name = None;
        let mut interactions = None;
        let mut manifest = Self {
            name: String::new(),
            interactions: PathBuf::new(),
            user_ids: None,
            item_ids: None,
            num_users: None,
            num_items: None,
            num_interactions: None,
            features: Vec::new(),
        };
        // feature entries are assembled field by field in first-seen order
        let mut partial: Vec<(ModalityId, Option<PathBuf>, Option<usize>, VertexRange)> = Vec::new();
        for (key, value) in parse_key_values(text, source)? {
            match key.as_str() {
                "name" => name = Some(value),
                "interactions" => interactions = Some(resolve(&base, &value)),
                "user_ids" => manifest.user_ids = Some(resolve(&base, &value)),
                "item_ids" => manifest.item_ids = Some(resolve(&base, &value)),
                "num_users" => manifest.num_users = Some(parse_count(&key, &value)?),
                "num_items" => manifest.num_items = Some(parse_count(&key, &value)?),
                "num_interactions" => manifest.num_interactions = Some(parse_count(&key, &value)?),
                _ => {
                    let rest = key
                        .strip_prefix("feature.")
                        .ok_or_else(|| Error::InvalidConfig(format!("unknown manifest key `{key}`")))?;
                    let (tag, field) = rest
                        .rsplit_once('.')
                        .ok_or_else(|| Error::InvalidConfig(format!("feature key `{key}` needs a field")))?;
                    let modality: ModalityId = tag.parse()?;
                    if modality == ModalityId::Embedding {
                        return Err(Error::InvalidConfig("the embedding modality takes no feature file".into()));
                    }
                    let idx = match partial.iter().position(|p| p.0 == modality) {
                        Some(i) => i,
                        None => {
                            partial.push((modality, None, None, VertexRange::Items));
                            partial.len() - 1
                        }
                    };
                    match field {
                        "path" => partial[idx].1 = Some(resolve(&base, &value)),
                        "dim" => partial[idx].2 = Some(parse_count(&key, &value)?),
                        "covers" => partial[idx].3 = value.parse()?,
                        _ => return Err(Error::InvalidConfig(format!("unknown feature field in `{key}`"))),
                    }
                }
            }
        }
        manifest.name = name.unwrap_or_default();
        manifest.interactions = interactions.ok_or_else(|| Error::InvalidConfig("manifest needs `interactions`".into()))?;
        for (modality, path, dim, covers) in partial {
            let path = path.ok_or_else(|| Error::InvalidConfig(format!("feature.{modality}.path missing")))?;
            let dim = dim.ok_or_else(|| Error::InvalidConfig(format!("feature.{modality}.dim missing")))?;
            if dim == 0 {
                return Err(Error::InvalidConfig(format!("feature.{modality}.dim must be positive")));
            }
            manifest.features.push(FeatureEntry {
                modality,
                path,
                dim,
                covers,
            });
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Serializes with paths written as stored.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("name = {}", self.name),
            format!("interactions = {}", self.interactions.display()),
        ];
        if let Some(p) = &self.user_ids {
            lines.push(format!("user_ids = {}", p.display()));
        }
        if let Some(p) = &self.item_ids {
            lines.push(format!("item_ids = {}", p.display()));
        }
        for (key, v) in [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_interactions", self.num_interactions),
        ] {
            if let Some(v) = v {
                lines.push(format!("{key} = {v}"));
            }
        }
        for f in &self.features {
            lines.push(format!("feature.{}.path = {}", f.modality, f.path.display()));
            lines.push(format!("feature.{}.dim = {}", f.modality, f.dim));
            lines.push(format!("feature.{}.covers = {}", f.modality, f.covers.as_str()));
        }
        lines.join("\n") + "\n"
    }
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub name: String,
    pub interactions: InteractionSet,
    pub users: IdMap,
    pub items: IdMap,
    pub duplicates: usize,
    pub features: Vec<FeatureStore>,
}

fn check_count(what: &'static str, declared: Option<usize>, found: usize) -> Result<()> {
    match declared {
        Some(d) if d != found => Err(Error::CountMismatch { what, declared: d, found }),
        _ => Ok(()),
    }
}

/// Loads interactions (against the sidecar id lists when given) and every
/// feature file, checking declared counts.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset> {
    let users = manifest.user_ids.as_deref().map(IdMap::read).transpose()?;
    let items = manifest.item_ids.as_deref().map(IdMap::read).transpose()?;
    let frozen = users.is_some() && items.is_some();
    let loaded = load_interactions_with(
        &manifest.interactions,
        users.unwrap_or_default(),
        items.unwrap_or_default(),
        frozen,
    )?;
    let (nu, ni) = (loaded.interactions.num_users(), loaded.interactions.num_items());
    check_count("users", manifest.num_users, nu)?;
    check_count("items", manifest.num_items, ni)?;
    check_count("interactions", manifest.num_interactions, loaded.interactions.len())?;
    info!(
        "dataset `{}`: {nu} users, {ni} items, {} interactions",
        manifest.name,
        loaded.interactions.len()
    );
    let features = manifest
        .features
        .iter()
        .map(|f| load_features(&f.path, f.modality.clone(), f.dim, f.covers, nu, ni))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        name: manifest.name.clone(),
        interactions: loaded.interactions,
        users: loaded.users,
        items: loaded.items,
        duplicates: loaded.duplicates,
        features,
    })
}

/// A dataset, how to split it, how to train on it and where results go.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub split: SplitSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let base = parent_dir(source);
        let mut manifest = None;
        let mut output_dir = None;
        let mut split = SplitSpec::default();
        let mut train = TrainConfig::default();
        for (key, value) in parse_key_values(text, source)? {
            let real = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::InvalidConfig(format!("`{key}` must be a number, got `{v}`")))
            };
            match key.as_str() {
                "manifest" => manifest = Some(resolve(&base, &value)),
                "output_dir" => output_dir = Some(resolve(&base, &value)),
                "split_train" => split.train = real(&value)?,
                "split_valid" => split.valid = real(&value)?,
                "split_test" => split.test = real(&value)?,
                "split_seed" => split.seed = parse_count(&key, &value)? as u64,
                _ => train.set(&key, &value)?,
            }
        }
        split.validate()?;
        train.validate()?;
        Ok(Self {
            manifest: manifest.ok_or_else(|| Error::InvalidConfig("run config needs `manifest`".into()))?,
            output_dir: output_dir.unwrap_or_else(|| base.join("out")),
            split,
            train,
        })
    }

    /// Parses and checks that the manifest exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        if !cfg.manifest.is_file() {
            return Err(Error::InvalidConfig(format!("manifest {} does not exist", cfg.manifest.display())));
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("manifest = {}", self.manifest.display()),
            format!("output_dir = {}", self.output_dir.display()),
            format!("split_train = {:?}", self.split.train),
            format!("split_valid = {:?}", self.split.valid),
            format!("split_test = {:?}", self.split.test),
            format!("split_seed = {}", self.split.seed),
        ];
        lines.extend(self.train.entries().into_iter().map(|(k, v)| format!("{k} = {v}")));
        lines.join("\n") + "\n"
    }

    /// Loads the manifest's dataset and splits it.
    pub fn load_data(&self) -> Result<(LoadedDataset, TrainData)> {
        let dataset = load_dataset(&DatasetManifest::load(&self.manifest)?)?;
        let (train, valid, test) = split_interactions(&dataset.interactions, &self.split)?;
        let data = TrainData {
            train,
            valid,
            test,
            features: dataset.features.clone(),
        };
        Ok((dataset, data))
    }
}
