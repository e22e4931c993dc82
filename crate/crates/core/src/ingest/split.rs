//! Stratified test hold-out and stratified k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Composition, GasGroup, SensorGraph};

/// Stratum used for splitting: composition within a gas group.
pub type ClassKey = (GasGroup, Composition);

// Mixed into the split seed so fold shuffles are independent of the hold-out.
const FOLD_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub test_ratio: f64,
    /// Indices into the graph list, ascending.
    pub train_val: Vec<usize>,
    pub test: Vec<usize>,
    /// Partition of `train_val`; each fold ascending.
    pub folds: Vec<Vec<usize>>,
}

impl DatasetSplit {
    /// Training and validation indices for fold `k`.
    pub fn fold(&self, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let val = self
            .folds
            .get(k)
            .ok_or_else(|| Error::Domain(format!("fold {k} out of range ({} folds)", self.folds.len())))?;
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect::<Vec<_>>();
        let mut train = train;
        train.sort_unstable();
        Ok((train, val.clone()))
    }
}

fn group_by_class(graphs: &[SensorGraph], indices: &[usize]) -> BTreeMap<ClassKey, Vec<usize>> {
    let mut classes: BTreeMap<ClassKey, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let g = &graphs[i];
        classes.entry((g.group(), g.composition())).or_default().push(i);
    }
    classes
}

/// Samples per (group, composition) class.
pub fn class_counts(graphs: &[SensorGraph], indices: &[usize]) -> BTreeMap<ClassKey, usize> {
    group_by_class(graphs, indices)
        .into_iter()
        .map(|(k, v)| (k, v.len()))
        .collect()
}

/// Hold-out size for a class: `ceil(ratio · count)`, kept in `[1, count - 1]`.
fn test_count(count: usize, ratio: f64) -> usize {
    let raw = (ratio * count as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, count - 1)
}

/// Holds out `test_ratio` of every class for testing. Deterministic in `seed`.
pub fn stratified_split(graphs: &[SensorGraph], test_ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(Error::Domain(format!("test ratio must be in (0, 1), got {test_ratio}")));
    }
    let all: Vec<usize> = (0..graphs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_val = Vec::new();
    let mut test = Vec::new();
    for ((group, comp), mut members) in group_by_class(graphs, &all) {
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {} in group {group} has {} sample(s); need at least 2 to split",
                comp.label(group),
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_test = test_count(members.len(), test_ratio);
        test.extend_from_slice(&members[..n_test]);
        train_val.extend_from_slice(&members[n_test..]);
    }
    train_val.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        seed,
        test_ratio,
        train_val,
        test,
        folds: Vec::new(),
    })
}

/// Stratified partition of `indices` into `k` folds.
///
/// Members of each class are shuffled and dealt round-robin, continuing the
/// deal across classes, so fold sizes differ by at most one and each class is
/// spread as evenly as its size allows.
pub fn kfold(graphs: &[SensorGraph], indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Domain(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > indices.len() {
        return Err(Error::Domain(format!(
            "k = {k} exceeds the {} available samples",
            indices.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ FOLD_SEED_SALT);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for ((group, comp), mut members) in group_by_class(graphs, indices) {
        if members.len() < k {
            log::warn!(
                "class {} in group {group} has {} samples for {k} folds; stratification is best-effort",
                comp.label(group),
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for m in members {
            folds[next % k].push(m);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

impl DatasetSplit {
    /// Fills `folds` with a stratified `k`-fold partition of `train_val`.
    pub fn assign_folds(&mut self, graphs: &[SensorGraph], k: usize) -> Result<()> {
        self.folds = kfold(graphs, &self.train_val, k, self.seed)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_rule_reproduces_reference_hold_out_counts() {
        let sizes = [71, 111, 100, 76, 89, 86];
        let tests = [12, 18, 16, 13, 15, 14];
        for (n, t) in sizes.iter().zip(tests) {
            assert_eq!(test_count(*n, 0.16), t, "class of {n}");
        }
        assert_eq!(sizes.iter().map(|&n| test_count(n, 0.16)).sum::<usize>(), 88);
    }

    #[test]
    fn test_count_stays_inside_class() {
        assert_eq!(test_count(2, 0.9), 1);
        assert_eq!(test_count(2, 0.01), 1);
    }
}
