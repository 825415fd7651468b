//! Taxonomy registry and dataset record schema.
//!
//! The registry lists the six object families, the five quality dimensions
//! and, for each task (family × dimension), its checkbox options. Records are
//! the option-level binary judgments produced by [`crate::aggregation`].

mod pairs;
mod records;
mod registry;

pub use pairs::{parse_pairs, read_pairs, write_pairs, ImagePair};
pub use records::{
    parse_records, read_records, write_records, BinaryRecord, RecordKey, RecordSet, Split,
    SplitCounts, RECORDS_FORMAT, VOTE_FRACTION_TOLERANCE,
};
pub use registry::{load_registry, OptionDef, Polarity, QualityDimension, Registry, TaskFamily};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry: {0}")]
    MalformedRegistry(String),
    #[error("duplicate option id {option_id:?} in task {task}")]
    DuplicateOption { task: TaskCode, option_id: String },
    #[error("pass-polarity option {option_id:?} in task {task} is marked actionable")]
    ActionablePass { task: TaskCode, option_id: String },
    #[error("actionable option {option_id:?} in task {task} has no resolvable template key {key:?}")]
    UnresolvedTemplate {
        task: TaskCode,
        option_id: String,
        key: String,
    },
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: unknown option {option_id:?} for task {task}")]
    UnknownOption {
        line: usize,
        task: TaskCode,
        option_id: String,
    },
    #[error("line {line}: vote_fraction {fraction} does not equal {votes_for}/{votes_total}")]
    FractionMismatch {
        line: usize,
        fraction: f64,
        votes_for: u32,
        votes_total: u32,
    },
    #[error("line {line}: duplicate record for ({pair_id}, {task}, {option_id})")]
    DuplicateRecord {
        line: usize,
        pair_id: String,
        task: TaskCode,
        option_id: String,
    },
    #[error("line {line}: pair {pair_id} task {task} appears in both {first} and {second} splits")]
    SplitMismatch {
        line: usize,
        pair_id: String,
        task: TaskCode,
        first: Split,
        second: Split,
    },
    #[error("pairs file: {0}")]
    MalformedPairs(String),
}

impl CorpusError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One of the six object families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FamilyCode {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
}

impl FamilyCode {
    pub const ALL: [FamilyCode; 6] = [
        FamilyCode::F1,
        FamilyCode::F2,
        FamilyCode::F3,
        FamilyCode::F4,
        FamilyCode::F5,
        FamilyCode::F6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyCode::F1 => "F1",
            FamilyCode::F2 => "F2",
            FamilyCode::F3 => "F3",
            FamilyCode::F4 => "F4",
            FamilyCode::F5 => "F5",
            FamilyCode::F6 => "F6",
        }
    }
}

impl fmt::Display for FamilyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FamilyCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown family code {s:?}"))
    }
}

/// One of the five quality dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    /// View match.
    QV,
    /// Required parts.
    QP,
    /// Identity and background.
    QB,
    /// Texture separation.
    QT,
    /// Line quality.
    QL,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::QV,
        Dimension::QP,
        Dimension::QB,
        Dimension::QT,
        Dimension::QL,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::QV => "QV",
            Dimension::QP => "QP",
            Dimension::QB => "QB",
            Dimension::QT => "QT",
            Dimension::QL => "QL",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dimension code {s:?}"))
    }
}

/// A task code such as `F1QL`: family code followed by dimension code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskCode {
    pub family: FamilyCode,
    pub dimension: Dimension,
}

impl TaskCode {
    pub const fn new(family: FamilyCode, dimension: Dimension) -> Self {
        TaskCode { family, dimension }
    }

    /// All 30 task codes in family-major order.
    pub fn all() -> impl Iterator<Item = TaskCode> {
        FamilyCode::ALL
            .into_iter()
            .flat_map(|f| Dimension::ALL.into_iter().map(move |d| TaskCode::new(f, d)))
    }
}

impl fmt::Display for TaskCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.family, self.dimension)
    }
}

impl FromStr for TaskCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 4 || !s.is_ascii() {
            return Err(format!("malformed task code {s:?}"));
        }
        let (family, dimension) = s.split_at(2);
        Ok(TaskCode::new(family.parse()?, dimension.parse()?))
    }
}

impl Serialize for TaskCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_code_round_trips_through_text() {
        for task in TaskCode::all() {
            let text = task.to_string();
            assert_eq!(text.parse::<TaskCode>().unwrap(), task);
        }
        assert_eq!(TaskCode::all().count(), 30);
    }

    #[test]
    fn malformed_task_codes_are_rejected() {
        for bad in ["", "F1", "F7QL", "F1QX", "f1ql", "F1QLX"] {
            assert!(bad.parse::<TaskCode>().is_err(), "{bad}");
        }
    }
}
