//! Tab-separated interaction files and the string-id sidecar maps.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::graph::InteractionSet;

/// Original string ids in contiguous index order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut map = Self::new();
        for id in ids {
            if map.index.contains_key(&id) {
                return Err(Error::InvalidConfig(format!("id `{id}` listed twice")));
            }
            map.get_or_insert(&id);
        }
        Ok(map)
    }

    pub fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// One id per line; blank lines and `#` comments are skipped.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ids = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self::from_ids(ids)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for id in &self.ids {
            text.push_str(id);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct LoadedInteractions {
    pub interactions: InteractionSet,
    pub users: IdMap,
    pub items: IdMap,
    pub duplicates: usize,
}

/// Loads with id maps built in first-appearance order.
pub fn load_interactions(path: &Path) -> Result<LoadedInteractions> {
    load_interactions_with(path, IdMap::new(), IdMap::new(), false)
}

/// Loads against pre-seeded id maps. With `frozen`, an id missing from a
/// map is an error instead of being appended.
pub fn load_interactions_with(path: &Path, users: IdMap, items: IdMap, frozen: bool) -> Result<LoadedInteractions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, path, users, items, frozen)
}

pub fn parse_interactions(text: &str, path: &Path, mut users: IdMap, mut items: IdMap, frozen: bool) -> Result<LoadedInteractions> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    let mut duplicates = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        // tab is the separator; whitespace is accepted for hand-written files
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let [user, item] = fields[..] else {
            return Err(parse_err(n + 1, format!("expected `user<TAB>item`, got {} fields", fields.len())));
        };
        if user.is_empty() || item.is_empty() {
            return Err(parse_err(n + 1, "empty id".into()));
        }
        let (u, i) = if frozen {
            let u = users.get(user).ok_or_else(|| parse_err(n + 1, format!("unknown user id `{user}`")))?;
            let i = items.get(item).ok_or_else(|| parse_err(n + 1, format!("unknown item id `{item}`")))?;
            (u, i)
        } else {
            (users.get_or_insert(user), items.get_or_insert(item))
        };
        if seen.insert((u, i)) {
            pairs.push((u, i));
        } else {
            duplicates += 1;
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInteractions(path.to_path_buf()));
    }
    if duplicates > 0 {
        info!("{}: dropped {duplicates} duplicate interactions", path.display());
    }
    let interactions = InteractionSet::new(users.len(), items.len(), pairs)?;
    Ok(LoadedInteractions {
        interactions,
        users,
        items,
        duplicates,
    })
}

/// Writes `user<TAB>item` lines in set order using the original ids.
pub fn write_interactions(path: &Path, set: &InteractionSet, users: &IdMap, items: &IdMap) -> Result<()> {
    if users.len() != set.num_users() || items.len() != set.num_items() {
        return Err(Error::shape(
            "id maps",
            format!("{}x{}", set.num_users(), set.num_items()),
            format!("{}x{}", users.len(), items.len()),
        ));
    }
    let mut text = String::with_capacity(set.len() * 12);
    for &(u, i) in set.pairs() {
        text.push_str(&users.ids()[u]);
        text.push('\t');
        text.push_str(&items.ids()[i]);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedInteractions> {
        parse_interactions(text, Path::new("mem"), IdMap::new(), IdMap::new(), false)
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let l = parse("u1\ti1\nu1\ti1\n").unwrap();
        assert_eq!((l.interactions.num_users(), l.interactions.num_items(), l.interactions.len()), (1, 1, 1));
        assert_eq!(l.duplicates, 1);
    }

    #[test]
    fn first_appearance_order() {
        let l = parse("# header\nu2\ti9\nu1\ti9\n\nu2\ti3\n").unwrap();
        assert_eq!(l.users.get("u2"), Some(0));
        assert_eq!(l.items.ids(), &["i9".to_string(), "i3".to_string()]);
        assert_eq!(l.interactions.pairs(), &[(0, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("u1\ti1\nu2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse("# nothing\n"), Err(Error::EmptyInteractions(_))));
    }

    #[test]
    fn frozen_maps_reject_unknown_ids() {
        let users = IdMap::from_ids(vec!["a".into(), "b".into()]).unwrap();
        let items = IdMap::from_ids(vec!["x".into()]).unwrap();
        let l = parse_interactions("b\tx\n", Path::new("mem"), users.clone(), items.clone(), true).unwrap();
        assert_eq!(l.interactions.num_users(), 2);
        assert_eq!(l.interactions.pairs(), &[(1, 0)]);
        assert!(parse_interactions("c\tx\n", Path::new("mem"), users, items, true).is_err());
        assert!(IdMap::from_ids(vec!["a".into(), "a".into()]).is_err());
    }
}
