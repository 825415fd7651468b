//! Ballot export and gold key readers.
//!
//! Ballot rows: `worker_id, assignment_id, pair_id, task, selected, status,
//! gold_pair_id_1, gold_selected_1, gold_pair_id_2, gold_selected_2, ...`.
//! Option lists are `;`-joined. Gold key rows: `gold_pair_id, task,
//! correct_options`.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use super::{AggregationError, Ballot, BallotStatus, GoldAnswer, GoldKey};
use crate::corpus::TaskCode;

fn malformed(what: &'static str, message: impl Into<String>) -> AggregationError {
    AggregationError::Malformed {
        what,
        message: message.into(),
    }
}

fn split_options(field: &str) -> BTreeSet<String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_status(field: &str) -> BallotStatus {
    match field.trim().to_ascii_lowercase().as_str() {
        "approved" => BallotStatus::Approved,
        "rejected" => BallotStatus::Rejected,
        _ => BallotStatus::Unknown,
    }
}

pub fn parse_ballots(reader: impl Read) -> Result<Vec<Ballot>, AggregationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed("ballot", e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed("ballot", format!("missing column {name:?}")))
    };
    let worker = col("worker_id")?;
    let assignment = col("assignment_id")?;
    let pair = col("pair_id")?;
    let task = col("task")?;
    let selected = col("selected")?;
    let status = col("status")?;

    let mut gold_cols = Vec::new();
    for n in 1.. {
        let id = headers.iter().position(|h| h == format!("gold_pair_id_{n}"));
        let sel = headers.iter().position(|h| h == format!("gold_selected_{n}"));
        match (id, sel) {
            (Some(i), Some(s)) => gold_cols.push((i, s)),
            (None, None) => break,
            _ => return Err(malformed("ballot", format!("incomplete gold column pair {n}"))),
        }
    }

    let mut ballots = Vec::new();
    for (row_idx, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| malformed("ballot", e.to_string()))?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let task_code: TaskCode = get(task)
            .parse()
            .map_err(|e: String| malformed("ballot", format!("row {}: {e}", row_idx + 2)))?;
        let mut gold_answers = Vec::new();
        for &(id_col, sel_col) in &gold_cols {
            let gold_id = get(id_col);
            if gold_id.is_empty() {
                continue;
            }
            gold_answers.push(GoldAnswer {
                gold_pair_id: gold_id.to_string(),
                selected: split_options(get(sel_col)),
            });
        }
        ballots.push(Ballot {
            worker_id: get(worker).to_string(),
            assignment_id: get(assignment).to_string(),
            pair_id: get(pair).to_string(),
            task: task_code,
            selected: split_options(get(selected)),
            gold_answers,
            status: parse_status(get(status)),
        });
    }
    Ok(ballots)
}

pub fn read_ballots(path: &Path) -> Result<Vec<Ballot>, AggregationError> {
    let file = std::fs::File::open(path).map_err(|source| AggregationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ballots(file)
}

pub fn parse_gold_key(reader: impl Read) -> Result<GoldKey, AggregationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut key = GoldKey::new();
    for row in rdr.records() {
        let row = row.map_err(|e| malformed("gold key", e.to_string()))?;
        if row.len() < 3 {
            return Err(malformed("gold key", format!("expected 3 columns, got {}", row.len())));
        }
        let task: TaskCode = row[1].parse().map_err(|e: String| malformed("gold key", e))?;
        key.insert(task, &row[0], split_options(&row[2]));
    }
    Ok(key)
}

pub fn read_gold_key(path: &Path) -> Result<GoldKey, AggregationError> {
    let file = std::fs::File::open(path).map_err(|source| AggregationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_gold_key(file)
}
