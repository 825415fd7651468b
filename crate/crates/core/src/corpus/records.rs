use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Registry, TaskCode};

/// Value of the `format` key on the first line of a records file.
pub const RECORDS_FORMAT: &str = "tactile-eval/records";

/// Largest accepted |vote_fraction - votes_for/votes_total| when parsing.
pub const VOTE_FRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

/// One consensus-backed option-level judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryRecord {
    pub pair_id: String,
    pub task: TaskCode,
    pub option_id: String,
    pub option_desc: String,
    pub label: bool,
    pub vote_fraction: f64,
    pub votes_for: u32,
    pub votes_total: u32,
    pub split: Split,
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl BinaryRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            pair_id: self.pair_id.clone(),
            task: self.task,
            option_id: self.option_id.clone(),
        }
    }
}

/// Identity of a record: one per (pair, task, option).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub pair_id: String,
    pub task: TaskCode,
    pub option_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(records: &[BinaryRecord]) -> Self {
        let mut counts = SplitCounts::default();
        for r in records {
            counts.add(r.split);
        }
        counts
    }

    pub fn add(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone)]
pub struct RecordSet {
    pub records: Vec<BinaryRecord>,
    pub counts: SplitCounts,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Parses a records file: an optional header line, then one JSON record per
/// line. Every record is validated against `registry`.
pub fn parse_records(reader: impl BufRead, registry: &Registry) -> Result<RecordSet, CorpusError> {
    let mut records = Vec::new();
    let mut counts = SplitCounts::default();
    let mut seen: HashSet<RecordKey> = HashSet::new();
    let mut pair_splits: HashMap<(String, TaskCode), Split> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            if let Ok(header) = serde_json::from_str::<Header>(&line) {
                if header.format != RECORDS_FORMAT || header.version != 1 {
                    return Err(CorpusError::MalformedRecord {
                        line: 1,
                        message: format!(
                            "unsupported records header {}/{}",
                            header.format, header.version
                        ),
                    });
                }
                continue;
            }
        }
        let record: BinaryRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        validate(&record, registry, line_no)?;

        let key = record.key();
        if !seen.insert(key) {
            return Err(CorpusError::DuplicateRecord {
                line: line_no,
                pair_id: record.pair_id,
                task: record.task,
                option_id: record.option_id,
            });
        }
        match pair_splits.entry((record.pair_id.clone(), record.task)) {
            std::collections::hash_map::Entry::Occupied(e) if *e.get() != record.split => {
                return Err(CorpusError::SplitMismatch {
                    line: line_no,
                    pair_id: record.pair_id,
                    task: record.task,
                    first: *e.get(),
                    second: record.split,
                });
            }
            std::collections::hash_map::Entry::Occupied(_) => {}
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(record.split);
            }
        }
        counts.add(record.split);
        records.push(record);
    }
    Ok(RecordSet { records, counts })
}

fn validate(record: &BinaryRecord, registry: &Registry, line: usize) -> Result<(), CorpusError> {
    if record.pair_id.is_empty() {
        return Err(CorpusError::MalformedRecord {
            line,
            message: "empty pair_id".into(),
        });
    }
    if registry.option(record.task, &record.option_id).is_none() {
        return Err(CorpusError::UnknownOption {
            line,
            task: record.task,
            option_id: record.option_id.clone(),
        });
    }
    if record.votes_total == 0 || record.votes_for > record.votes_total {
        return Err(CorpusError::MalformedRecord {
            line,
            message: format!(
                "vote counts {}/{} out of range",
                record.votes_for, record.votes_total
            ),
        });
    }
    let expected = f64::from(record.votes_for) / f64::from(record.votes_total);
    if !record.vote_fraction.is_finite()
        || (record.vote_fraction - expected).abs() > VOTE_FRACTION_TOLERANCE
    {
        return Err(CorpusError::FractionMismatch {
            line,
            fraction: record.vote_fraction,
            votes_for: record.votes_for,
            votes_total: record.votes_total,
        });
    }
    Ok(())
}

pub fn read_records(path: &Path, registry: &Registry) -> Result<RecordSet, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_records(std::io::BufReader::new(file), registry)
}

/// Writes the header line followed by one record per line.
pub fn write_records(records: &[BinaryRecord], mut out: impl Write) -> std::io::Result<()> {
    let header = Header {
        format: RECORDS_FORMAT.to_string(),
        version: 1,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
