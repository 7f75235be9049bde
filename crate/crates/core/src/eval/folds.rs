use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol {
    /// Leave one actor out.
    Loao,
    Kfold {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Fixed actor-disjoint train/validation/test split.
    Fixed {
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_holdout")]
        validation: usize,
        #[serde(default = "default_holdout")]
        test: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_k() -> usize {
    10
}
fn default_train() -> usize {
    40
}
fn default_holdout() -> usize {
    5
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Loao
    }
}

/// Video ids of one fold's parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub test_actors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub protocol: Protocol,
    pub folds: Vec<Fold>,
    /// Actors left out of every part (fixed splits only).
    pub unused_actors: Vec<String>,
}

impl FoldPlan {
    pub fn build(manifest: &DatasetManifest, protocol: Protocol) -> Result<Self> {
        match protocol {
            Protocol::Loao => make_loao_folds(manifest),
            Protocol::Kfold { k, seed } => make_kfold(manifest, k, seed),
            Protocol::Fixed {
                train,
                validation,
                test,
                seed,
            } => make_fixed_split(manifest, train, validation, test, seed),
        }
    }
}

fn videos_of(manifest: &DatasetManifest, actors: &HashSet<&str>) -> Vec<String> {
    manifest
        .entries
        .iter()
        .filter(|e| actors.contains(e.actor_id.as_str()))
        .map(|e| e.video_id.clone())
        .collect()
}

fn fold_for_group(manifest: &DatasetManifest, group: &[String]) -> Fold {
    let test: HashSet<&str> = group.iter().map(String::as_str).collect();
    let (test_videos, train): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .partition(|e| test.contains(e.actor_id.as_str()));
    Fold {
        train: train.into_iter().map(|e| e.video_id.clone()).collect(),
        validation: Vec::new(),
        test: test_videos.into_iter().map(|e| e.video_id.clone()).collect(),
        test_actors: group.to_vec(),
    }
}

/// One fold per actor, in sorted actor order.
pub fn make_loao_folds(manifest: &DatasetManifest) -> Result<FoldPlan> {
    let actors = manifest.actors();
    if actors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-actor-out needs at least 2 actors, manifest has {}",
            actors.len()
        )));
    }
    Ok(FoldPlan {
        protocol: Protocol::Loao,
        folds: actors
            .iter()
            .map(|a| fold_for_group(manifest, std::slice::from_ref(a)))
            .collect(),
        unused_actors: Vec::new(),
    })
}

/// Actor-disjoint k-fold: actors are shuffled with `seed` and dealt into `k`
/// groups whose sizes differ by at most one. Folds are ordered by their
/// smallest actor id.
pub fn make_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let mut actors = manifest.actors();
    if k < 2 || k > actors.len() {
        return Err(Error::InsufficientData(format!(
            "{k}-fold split needs 2 <= k <= actors ({})",
            actors.len()
        )));
    }
    actors.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (actors.len() / k, actors.len() % k);
    let mut groups = Vec::with_capacity(k);
    let mut at = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        let mut group = actors[at..at + size].to_vec();
        group.sort();
        groups.push(group);
        at += size;
    }
    groups.sort();
    Ok(FoldPlan {
        protocol: Protocol::Kfold { k, seed },
        folds: groups.iter().map(|g| fold_for_group(manifest, g)).collect(),
        unused_actors: Vec::new(),
    })
}

/// Disjoint actor groups of the requested sizes; remaining actors are unused.
pub fn make_fixed_split(
    manifest: &DatasetManifest,
    train: usize,
    validation: usize,
    test: usize,
    seed: u64,
) -> Result<FoldPlan> {
    let mut actors = manifest.actors();
    let needed = train + validation + test;
    if train == 0 || test == 0 || actors.len() < needed {
        return Err(Error::InsufficientData(format!(
            "fixed split of {train}/{validation}/{test} actors needs {needed}, manifest has {}",
            actors.len()
        )));
    }
    actors.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| {
        let mut v = actors[range].to_vec();
        v.sort();
        v
    };
    let train_actors = pick(0..train);
    let val_actors = pick(train..train + validation);
    let test_actors = pick(train + validation..needed);
    let unused = pick(needed..actors.len());
    if !unused.is_empty() {
        log::info!("fixed split leaves {} actors unused: {unused:?}", unused.len());
    }
    Ok(FoldPlan {
        protocol: Protocol::Fixed {
            train,
            validation,
            test,
            seed,
        },
        folds: vec![Fold {
            train: videos_of(manifest, &set(&train_actors)),
            validation: videos_of(manifest, &set(&val_actors)),
            test: videos_of(manifest, &set(&test_actors)),
            test_actors,
        }],
        unused_actors: unused,
    })
}

fn set(actors: &[String]) -> HashSet<&str> {
    actors.iter().map(String::as_str).collect()
}
