//! Semantic class filtering and merging.
//!
//! A [`ClassMergeMap`] sends every class of a many-class source taxonomy to
//! one target class or drops it, so an auxiliary dataset ends up with the
//! same class list (names and order) as the target dataset. That is what
//! lets the classifier trained on it be maintained afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Granularity, SceneDataset};
use crate::error::{Error, Result};

/// Sentinel for dropped classes in merge-map files.
pub const DROP: &str = "DROP";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeTarget {
    Class(String),
    Drop,
}

/// Source class → target class or [`MergeTarget::Drop`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMergeMap {
    targets: Vec<String>,
    map: BTreeMap<String, MergeTarget>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeMapFile {
    targets: Vec<String>,
    map: BTreeMap<String, String>,
}

impl ClassMergeMap {
    /// Validates that referenced targets exist, target names are unique and
    /// every target receives at least one source.
    pub fn new(targets: Vec<String>, map: BTreeMap<String, MergeTarget>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("merge-map targets"));
        }
        let names: BTreeSet<&str> = targets.iter().map(String::as_str).collect();
        if names.len() != targets.len() {
            return Err(Error::invalid("merge-map targets contain duplicates"));
        }
        let mut covered = BTreeSet::new();
        for (source, target) in &map {
            if let MergeTarget::Class(t) = target {
                if !names.contains(t.as_str()) {
                    return Err(Error::invalid(format!(
                        "source `{source}` maps to `{t}`, which is not a target class"
                    )));
                }
                covered.insert(t.as_str());
            }
        }
        if let Some(t) = targets.iter().find(|t| !covered.contains(t.as_str())) {
            return Err(Error::invalid(format!("target `{t}` has no source class")));
        }
        Ok(Self { targets, map })
    }

    /// Each class maps to itself.
    pub fn identity(classes: &[String]) -> Result<Self> {
        Self::new(
            classes.to_vec(),
            classes
                .iter()
                .map(|c| (c.clone(), MergeTarget::Class(c.clone())))
                .collect(),
        )
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn get(&self, source: &str) -> Option<&MergeTarget> {
        self.map.get(source)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn dropped(&self) -> impl Iterator<Item = &str> {
        self.map
            .iter()
            .filter(|(_, t)| **t == MergeTarget::Drop)
            .map(|(s, _)| s.as_str())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: MergeMapFile = toml::from_str(text)?;
        let map = file
            .map
            .into_iter()
            .map(|(s, t)| {
                let t = if t == DROP {
                    MergeTarget::Drop
                } else {
                    MergeTarget::Class(t)
                };
                (s, t)
            })
            .collect();
        Self::new(file.targets, map)
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = MergeMapFile {
            targets: self.targets.clone(),
            map: self
                .map
                .iter()
                .map(|(s, t)| {
                    let t = match t {
                        MergeTarget::Class(c) => c.clone(),
                        MergeTarget::Drop => DROP.to_string(),
                    };
                    (s.clone(), t)
                })
                .collect(),
        };
        Ok(toml::to_string(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// The shipped 20 → 4 map for the default auxiliary generator.
    pub fn default_auxiliary() -> Self {
        Self::from_toml(DEFAULT_MAP).expect("shipped merge map is valid")
    }
}

const DEFAULT_MAP: &str = r#"
targets = ["Vehicle", "Home", "Restaurant", "Workplace"]

[map]
dining_room = "Home"
living_room = "Home"
kitchen = "Home"
restaurant = "Restaurant"
cafeteria = "Restaurant"
food_court = "Restaurant"
office = "Workplace"
conference_room = "Workplace"
computer_room = "Workplace"
car_interior = "Vehicle"
bus_interior = "Vehicle"
train_interior = "Vehicle"
beach = "DROP"
forest_path = "DROP"
mountain = "DROP"
ocean = "DROP"
desert = "DROP"
field = "DROP"
waterfall = "DROP"
glacier = "DROP"
"#;

/// Drops sequences whose class maps to `DROP`, relabels the rest to their
/// target class and replaces the class list with the map's targets. Frame
/// contents and sequence order are untouched.
pub fn apply_merge_map(dataset: &SceneDataset, map: &ClassMergeMap) -> Result<SceneDataset> {
    let mut relabel = Vec::with_capacity(dataset.classes().len());
    for class in dataset.classes() {
        let target = match map.get(class) {
            None => None,
            Some(MergeTarget::Drop) => Some(None),
            Some(MergeTarget::Class(t)) => {
                Some(Some(map.targets.iter().position(|x| x == t).unwrap()))
            }
        };
        relabel.push(target);
    }
    let mut sequences = Vec::with_capacity(dataset.sequences().len());
    for s in dataset.sequences() {
        match relabel[s.label()] {
            None => return Err(Error::UnmappedLabel(dataset.classes()[s.label()].clone())),
            Some(None) => {}
            Some(Some(t)) => sequences.push(s.clone().relabel(t)),
        }
    }
    SceneDataset::new(
        map.targets.clone(),
        sequences,
        dataset.height(),
        dataset.width(),
        format!("{} | merged", dataset.provenance()),
    )
}

/// Largest class count over smallest, at sequence or frame granularity.
pub fn imbalance_ratio(dataset: &SceneDataset, granularity: Granularity) -> Result<f64> {
    let counts = dataset.class_counts(granularity);
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(dataset.classes()[i].clone()));
    }
    let max = *counts.iter().max().unwrap();
    let min = *counts.iter().min().unwrap();
    Ok(max as f64 / min as f64)
}
