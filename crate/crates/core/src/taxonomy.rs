//! Cross-task categories, task specificity and family aggregates.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lexicon::{family_members, ColumnLayout, Family};
use crate::numeric::pearson;
use crate::stats::Status;

/// Edge threshold of the redundancy graph.
pub const REDUNDANCY_R: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Universal,
    TaskSpecific,
    ModelSpecific,
    EncodedOnly,
    NotEncoded,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Universal => "universal",
            Category::TaskSpecific => "task-specific",
            Category::ModelSpecific => "model-specific",
            Category::EncodedOnly => "encoded-only",
            Category::NotEncoded => "not-encoded",
        }
    }
}

/// One (task, model) status of a feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStatus {
    pub task: String,
    pub model: String,
    pub status: Status,
}

/// Tasks where every model of that task is representation-causal.
pub fn strong_tasks(grid: &[CellStatus]) -> BTreeSet<String> {
    let tasks: BTreeSet<&str> = grid.iter().map(|c| c.task.as_str()).collect();
    tasks
        .into_iter()
        .filter(|t| {
            grid.iter()
                .filter(|c| c.task == *t)
                .all(|c| c.status == Status::RepresentationCausal)
        })
        .map(str::to_owned)
        .collect()
}

pub fn classify(grid: &[CellStatus]) -> Category {
    let strong = strong_tasks(grid).len();
    let any = |s: Status| grid.iter().any(|c| c.status == s);
    if strong >= 2 {
        Category::Universal
    } else if strong == 1 {
        Category::TaskSpecific
    } else if any(Status::RepresentationCausal) {
        Category::ModelSpecific
    } else if any(Status::EncodedOnly) {
        Category::EncodedOnly
    } else {
        Category::NotEncoded
    }
}

/// Mean of effects clipped at zero.
pub fn task_mean_effect(deltas: &[f64]) -> f64 {
    if deltas.is_empty() {
        return 0.0;
    }
    deltas.iter().map(|d| d.max(0.0)).sum::<f64>() / deltas.len() as f64
}

/// Largest share of the per-task mean effects (each clipped at zero).
pub fn tsi(task_means: &[f64]) -> f64 {
    let clipped: Vec<f64> = task_means.iter().map(|d| d.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    clipped.iter().fold(0.0f64, |a, &b| a.max(b)) / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyRecord {
    pub feature: String,
    pub grid: Vec<CellStatus>,
    pub strong_tasks: Vec<String>,
    pub category: Category,
    pub tsi: f64,
}

fn union_find_root(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Connected components of the `|r| ≥ threshold` graph, in order of the
/// smallest member.
pub fn correlation_components(reps: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let n = reps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&reps[i], &reps[j]).unwrap_or(0.0);
            if r.abs() >= threshold {
                let (a, b) = (union_find_root(&mut parent, i), union_find_root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = union_find_root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Row-mean of each feature's expansion columns.
pub fn representatives(train: &DMatrix<f64>, features: &[usize]) -> Vec<Vec<f64>> {
    let layout = ColumnLayout::registry();
    features
        .iter()
        .map(|&q| {
            let cols = layout.range(q);
            let k = cols.len() as f64;
            (0..train.nrows())
                .map(|r| cols.clone().map(|c| train[(r, c)]).sum::<f64>() / k)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAggregate {
    pub family: Family,
    pub encoded_rate: f64,
    pub causal_rate: f64,
    pub effect_mass: f64,
    pub controlled_mass: f64,
    pub clusters: Vec<Vec<String>>,
}

/// Family aggregate of one cell. `train` is the expanded training feature
/// matrix; `delta` and `status` are indexed by registry position.
pub fn family_aggregate(
    family: Family,
    train: &DMatrix<f64>,
    status: &[Status],
    delta: &[f64],
) -> FamilyAggregate {
    family_aggregate_at(family, train, status, delta, REDUNDANCY_R)
}

/// [`family_aggregate`] with an explicit redundancy threshold.
pub fn family_aggregate_at(
    family: Family,
    train: &DMatrix<f64>,
    status: &[Status],
    delta: &[f64],
    redundancy_r: f64,
) -> FamilyAggregate {
    let members: Vec<usize> = family_members(family).collect();
    let n = members.len() as f64;
    let confirmed = |q: usize| status[q] == Status::RepresentationCausal;
    let encoded = members.iter().filter(|&&q| status[q] != Status::NotEncoded).count();
    let causal = members.iter().filter(|&&q| confirmed(q)).count();
    let effect_mass: f64 = members
        .iter()
        .filter(|&&q| confirmed(q))
        .map(|&q| delta[q].max(0.0))
        .sum();
    let comps = correlation_components(&representatives(train, &members), redundancy_r);
    let controlled_mass = comps
        .iter()
        .map(|c| {
            c.iter()
                .map(|&i| members[i])
                .filter(|&q| confirmed(q))
                .map(|q| delta[q].max(0.0))
                .fold(0.0f64, f64::max)
        })
        .sum();
    FamilyAggregate {
        family,
        encoded_rate: encoded as f64 / n,
        causal_rate: causal as f64 / n,
        effect_mass,
        controlled_mass,
        clusters: comps
            .iter()
            .map(|c| c.iter().map(|&i| crate::lexicon::REGISTRY[members[i]].id.to_owned()).collect())
            .collect(),
    }
}
