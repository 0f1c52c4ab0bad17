use serde::{Deserialize, Serialize};

/// Feature family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    T,
    F,
    TF,
    C,
    X,
    R,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::T,
        Family::F,
        Family::TF,
        Family::C,
        Family::X,
        Family::R,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::T => "T",
            Family::F => "F",
            Family::TF => "TF",
            Family::C => "C",
            Family::X => "X",
            Family::R => "R",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How raw values are produced before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerChannel,
    PerPair,
    Global,
}

impl Scope {
    pub fn statistics(self) -> &'static [&'static str] {
        match self {
            Scope::PerChannel => &CHANNEL_STATS,
            Scope::PerPair => &PAIR_STATS,
            Scope::Global => &["value"],
        }
    }

    pub fn expansion_dim(self) -> usize {
        self.statistics().len()
    }
}

pub const CHANNEL_STATS: [&str; 6] = ["mean", "std", "median", "q25", "q75", "max"];
pub const PAIR_STATS: [&str; 5] = ["mean", "std", "median", "q75", "top10_mean"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub id: &'static str,
    pub name: &'static str,
    pub family: Family,
    pub scope: Scope,
}

impl FeatureSpec {
    /// Raw columns per epoch before aggregation (per channel, per pair, or 1).
    pub fn raw_dim(&self) -> usize {
        1
    }

    pub fn expansion_dim(&self) -> usize {
        self.scope.expansion_dim()
    }
}

const fn spec(id: &'static str, name: &'static str, family: Family, scope: Scope) -> FeatureSpec {
    FeatureSpec {
        id,
        name,
        family,
        scope,
    }
}

use Family::*;
use Scope::*;

/// The frozen 63-feature registry, in column order.
pub static REGISTRY: [FeatureSpec; 63] = [
    spec("T001", "Hjorth activity", T, PerChannel),
    spec("T002", "Hjorth mobility", T, PerChannel),
    spec("T003", "Hjorth complexity", T, PerChannel),
    spec("T004", "standard deviation", T, PerChannel),
    spec("T005", "root-mean-square", T, PerChannel),
    spec("T006", "kurtosis", T, PerChannel),
    spec("T007", "zero-crossing rate", T, PerChannel),
    spec("T008", "line length", T, PerChannel),
    spec("T009", "derivative std", T, PerChannel),
    spec("T010", "peak-to-peak amplitude", T, PerChannel),
    spec("F001", "log delta energy", F, PerChannel),
    spec("F002", "log theta energy", F, PerChannel),
    spec("F003", "log alpha energy", F, PerChannel),
    spec("F004", "log beta energy", F, PerChannel),
    spec("F005", "log gamma energy", F, PerChannel),
    spec("F006", "relative delta energy", F, PerChannel),
    spec("F007", "relative theta energy", F, PerChannel),
    spec("F008", "relative alpha energy", F, PerChannel),
    spec("F009", "relative beta energy", F, PerChannel),
    spec("F010", "relative gamma energy", F, PerChannel),
    spec("F011", "log theta/beta ratio", F, PerChannel),
    spec("F012", "log delta/alpha ratio", F, PerChannel),
    spec("F013", "log theta/alpha ratio", F, PerChannel),
    spec("F014", "normalized spectral entropy", F, PerChannel),
    spec("F015", "spectral centroid", F, PerChannel),
    spec("F016", "spectral edge 95%", F, PerChannel),
    spec("TF001", "normalized subband entropy", TF, PerChannel),
    spec("TF002", "detail variance L1", TF, PerChannel),
    spec("TF003", "detail variance L2", TF, PerChannel),
    spec("TF004", "detail variance L3", TF, PerChannel),
    spec("TF005", "detail variance L4", TF, PerChannel),
    spec("TF006", "detail variance L5", TF, PerChannel),
    spec("TF007", "envelope CV delta", TF, PerChannel),
    spec("TF008", "envelope CV theta", TF, PerChannel),
    spec("TF009", "envelope CV alpha", TF, PerChannel),
    spec("TF010", "envelope CV beta", TF, PerChannel),
    spec("TF011", "envelope CV gamma", TF, PerChannel),
    spec("C001", "normalized permutation entropy", C, PerChannel),
    spec("C002", "derivative-irregularity proxy", C, PerChannel),
    spec("C003", "transition-rate / two-bit entropy proxy", C, PerChannel),
    spec("C004", "lag-difference slope proxy", C, PerChannel),
    spec("C005", "DFA-style exponent proxy", C, PerChannel),
    spec("C006", "normalized 1/e ACF lag", C, PerChannel),
    spec("C007", "normalized first-zero ACF lag", C, PerChannel),
    spec("X001", "MI delta->beta", X, PerChannel),
    spec("X002", "MI theta->gamma", X, PerChannel),
    spec("X003", "MI alpha->gamma", X, PerChannel),
    spec("X004", "AAC theta,gamma", X, PerChannel),
    spec("X005", "AAC delta,gamma", X, PerChannel),
    spec("R001", "abs correlation mean", R, Global),
    spec("R002", "abs correlation std", R, Global),
    spec("R003", "normalized eigenvalue entropy", R, Global),
    spec("R004", "participation ratio", R, Global),
    spec("R005", "coherence proxy delta", R, PerPair),
    spec("R006", "coherence proxy theta", R, PerPair),
    spec("R007", "coherence proxy alpha", R, PerPair),
    spec("R008", "coherence proxy beta", R, PerPair),
    spec("R009", "coherence proxy gamma", R, PerPair),
    spec("R010", "PLI delta", R, PerPair),
    spec("R011", "PLI theta", R, PerPair),
    spec("R012", "PLI alpha", R, PerPair),
    spec("R013", "PLI beta", R, PerPair),
    spec("R014", "PLI gamma", R, PerPair),
];

pub fn feature_index(id: &str) -> Option<usize> {
    REGISTRY.iter().position(|f| f.id == id)
}

pub fn family_members(family: Family) -> impl Iterator<Item = usize> {
    REGISTRY
        .iter()
        .enumerate()
        .filter(move |(_, f)| f.family == family)
        .map(|(i, _)| i)
}

/// One expansion column: a (feature, statistic) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub feature: String,
    pub statistic: String,
}

/// Column layout of the expanded feature matrix, derived from the registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnLayout {
    /// Half-open column range per registry entry.
    ranges: Vec<std::ops::Range<usize>>,
    columns: Vec<ColumnMeta>,
}

impl ColumnLayout {
    pub fn registry() -> Self {
        let mut ranges = Vec::with_capacity(REGISTRY.len());
        let mut columns = Vec::new();
        for f in &REGISTRY {
            let start = columns.len();
            for stat in f.scope.statistics() {
                columns.push(ColumnMeta {
                    feature: f.id.to_owned(),
                    statistic: (*stat).to_owned(),
                });
            }
            ranges.push(start..columns.len());
        }
        Self { ranges, columns }
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn range(&self, feature: usize) -> std::ops::Range<usize> {
        self.ranges[feature].clone()
    }

    /// Column indices of several features, in registry order of the input.
    pub fn columns_of(&self, features: &[usize]) -> Vec<usize> {
        features.iter().flat_map(|&f| self.range(f)).collect()
    }
}
