//! Crowd ballot aggregation.
//!
//! Turns raw per-worker ballots into [`BinaryRecord`]s:
//! gold audit, two-stage consensus filter, vote counting, per-dimension
//! thresholding and pair-level split assignment.
//!
//! Thresholds are evaluated on exact vote counts. In the default
//! [`ThresholdMode::MajorityVotes`] mode a non-texture option is true when at
//! least ⌈n/2⌉ of the n counted ballots select it, so 4 of 7 passes. Texture
//! (QT) options use a strict `fraction > 0.4` rule in every mode.

mod io;

pub use io::{parse_ballots, parse_gold_key, read_ballots, read_gold_key};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{BinaryRecord, Dimension, OptionDef, Registry, Split, TaskCode};

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("ballot {assignment_id}: unknown gold pair {gold_pair_id:?} for task {task}")]
    UnknownGold {
        assignment_id: String,
        task: TaskCode,
        gold_pair_id: String,
    },
    #[error("cannot count votes over an empty ballot list")]
    EmptyBallots,
    #[error("ballot {assignment_id}: task {task} is not in the registry")]
    UnknownTask { assignment_id: String, task: TaskCode },
    #[error("ballot {assignment_id}: option {option_id:?} is not defined for task {task}")]
    UnknownOption {
        assignment_id: String,
        task: TaskCode,
        option_id: String,
    },
    #[error("split proportions must be non-negative and sum to 1, got {0:?}")]
    BadProportions([f64; 3]),
    #[error("malformed {what} file: {message}")]
    Malformed { what: &'static str, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallotStatus {
    Approved,
    Rejected,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnswer {
    pub gold_pair_id: String,
    pub selected: BTreeSet<String>,
}

/// One worker's submission for one (pair, task).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ballot {
    pub worker_id: String,
    pub assignment_id: String,
    pub pair_id: String,
    pub task: TaskCode,
    pub selected: BTreeSet<String>,
    pub gold_answers: Vec<GoldAnswer>,
    pub status: BallotStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Non-texture options need at least ⌈n/2⌉ votes.
    MajorityVotes,
    /// Non-texture options need `fraction >= default_fraction`.
    RawFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    pub default_fraction: f64,
    /// Texture options need `fraction > texture_fraction` (strict).
    pub texture_fraction: f64,
    pub workers_expected: u32,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            mode: ThresholdMode::MajorityVotes,
            default_fraction: 0.6,
            texture_fraction: 0.4,
            workers_expected: 7,
        }
    }
}

/// Correct answers for gold questions, keyed by (task, gold pair id).
#[derive(Debug, Clone, Default)]
pub struct GoldKey {
    answers: BTreeMap<(TaskCode, String), BTreeSet<String>>,
}

impl GoldKey {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: TaskCode, gold_pair_id: impl Into<String>, correct: BTreeSet<String>) {
        self.answers.insert((task, gold_pair_id.into()), correct);
    }

    pub fn get(&self, task: TaskCode, gold_pair_id: &str) -> Option<&BTreeSet<String>> {
        self.answers.get(&(task, gold_pair_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldScore {
    pub passed: bool,
    pub correct: usize,
    pub total: usize,
    /// (gold pair id, exact match) in ballot order.
    pub per_gold: Vec<(String, bool)>,
}

/// Scores a ballot's gold answers by exact option-set match.
///
/// A ballot without gold answers passes.
pub fn score_gold(
    ballot: &Ballot,
    key: &GoldKey,
    pass_fraction: f64,
) -> Result<GoldScore, AggregationError> {
    let mut per_gold = Vec::with_capacity(ballot.gold_answers.len());
    for answer in &ballot.gold_answers {
        let correct = key.get(ballot.task, &answer.gold_pair_id).ok_or_else(|| {
            AggregationError::UnknownGold {
                assignment_id: ballot.assignment_id.clone(),
                task: ballot.task,
                gold_pair_id: answer.gold_pair_id.clone(),
            }
        })?;
        per_gold.push((answer.gold_pair_id.clone(), *correct == answer.selected));
    }
    let correct = per_gold.iter().filter(|(_, ok)| *ok).count();
    let total = per_gold.len();
    let passed = total == 0 || correct as f64 / total as f64 >= pass_fraction;
    Ok(GoldScore {
        passed,
        correct,
        total,
        per_gold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCount {
    pub votes_for: u32,
    pub votes_total: u32,
}

impl VoteCount {
    pub fn fraction(&self) -> f64 {
        f64::from(self.votes_for) / f64::from(self.votes_total)
    }
}

/// Counts votes for every registry option of the ballots' task, including
/// options nobody selected. `votes_total` is the number of ballots given.
pub fn vote_fractions(
    ballots: &[Ballot],
    options: &[OptionDef],
) -> Result<BTreeMap<String, VoteCount>, AggregationError> {
    if ballots.is_empty() {
        return Err(AggregationError::EmptyBallots);
    }
    let votes_total = ballots.len() as u32;
    Ok(options
        .iter()
        .map(|opt| {
            let votes_for = ballots
                .iter()
                .filter(|b| b.selected.contains(&opt.option_id))
                .count() as u32;
            (
                opt.option_id.clone(),
                VoteCount {
                    votes_for,
                    votes_total,
                },
            )
        })
        .collect())
}

/// Consensus label of one option given its vote counts.
pub fn majority_label(option: &OptionDef, votes_for: u32, votes_total: u32, policy: &ThresholdPolicy) -> bool {
    label_for_dimension(option.task.dimension, votes_for, votes_total, policy)
}

pub fn label_for_dimension(
    dimension: Dimension,
    votes_for: u32,
    votes_total: u32,
    policy: &ThresholdPolicy,
) -> bool {
    debug_assert!(votes_total >= 1);
    let fraction = f64::from(votes_for) / f64::from(votes_total);
    if dimension == Dimension::QT {
        return fraction > policy.texture_fraction;
    }
    match policy.mode {
        ThresholdMode::MajorityVotes => votes_for >= votes_total.div_ceil(2),
        ThresholdMode::RawFraction => fraction >= policy.default_fraction,
    }
}

/// True when the vote fraction sits exactly on the decision boundary of the
/// active rule (for example 3 of 6 under the majority rule).
pub fn is_boundary_tie(dimension: Dimension, votes_for: u32, votes_total: u32, policy: &ThresholdPolicy) -> bool {
    let fraction = f64::from(votes_for) / f64::from(votes_total);
    if dimension == Dimension::QT {
        return fraction == policy.texture_fraction;
    }
    match policy.mode {
        ThresholdMode::MajorityVotes => u64::from(votes_for) * 2 == u64::from(votes_total),
        ThresholdMode::RawFraction => fraction == policy.default_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Ballots sharing an identical selection needed for promotion.
    pub promote_min_agreement: usize,
    /// Options counted over fewer ballots than this are dropped.
    pub min_support: u32,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            promote_min_agreement: 5,
            min_support: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsensusOutcome {
    /// Approved ballots followed by promoted ones, in input order.
    pub kept: Vec<Ballot>,
    /// Selection vectors that brought in at least one non-approved ballot.
    pub promoted: Vec<BTreeSet<String>>,
    pub promoted_ballots: usize,
    /// Options excluded from record emission (tied or under-supported).
    pub dropped: BTreeSet<String>,
}

/// Two-stage consensus filter over the ballots of one (pair, task).
///
/// Stage 1 keeps approved ballots. Stage 2 promotes every full selection
/// vector shared by at least `promote_min_agreement` ballots of any status.
/// Options whose counts over the kept ballots sit exactly on the threshold
/// boundary, or that are counted over fewer than `min_support` ballots, are
/// dropped.
pub fn consensus_filter(
    ballots: &[Ballot],
    options: &[OptionDef],
    policy: &ThresholdPolicy,
    config: &ConsensusConfig,
) -> ConsensusOutcome {
    if ballots.is_empty() {
        return ConsensusOutcome::default();
    }
    let mut by_vector: BTreeMap<&BTreeSet<String>, Vec<usize>> = BTreeMap::new();
    for (i, b) in ballots.iter().enumerate() {
        by_vector.entry(&b.selected).or_default().push(i);
    }

    let mut keep = vec![false; ballots.len()];
    for (i, b) in ballots.iter().enumerate() {
        keep[i] = b.status == BallotStatus::Approved;
    }
    let mut promoted = Vec::new();
    let mut promoted_ballots = 0;
    for (vector, members) in &by_vector {
        if members.len() < config.promote_min_agreement {
            continue;
        }
        let newcomers: Vec<usize> = members.iter().copied().filter(|&i| !keep[i]).collect();
        if newcomers.is_empty() {
            continue;
        }
        for &i in &newcomers {
            keep[i] = true;
        }
        promoted_ballots += newcomers.len();
        promoted.push((*vector).clone());
    }

    let kept: Vec<Ballot> = ballots
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(b, _)| b.clone())
        .collect();

    let mut dropped = BTreeSet::new();
    let votes_total = kept.len() as u32;
    for opt in options {
        if votes_total < config.min_support.max(1) {
            dropped.insert(opt.option_id.clone());
            continue;
        }
        let votes_for = kept.iter().filter(|b| b.selected.contains(&opt.option_id)).count() as u32;
        if is_boundary_tie(opt.task.dimension, votes_for, votes_total, policy) {
            dropped.insert(opt.option_id.clone());
        }
    }

    ConsensusOutcome {
        kept,
        promoted,
        promoted_ballots,
        dropped,
    }
}

/// Train/validation/test proportions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitProportions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitProportions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, AggregationError> {
        let p = SplitProportions { train, val, test };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        let parts = [self.train, self.val, self.test];
        let ok = parts.iter().all(|x| x.is_finite() && *x >= 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(AggregationError::BadProportions(parts))
        }
    }
}

impl Default for SplitProportions {
    /// Roughly the proportions of the released dataset (11,348 / 1,341 / 1,406).
    fn default() -> Self {
        SplitProportions {
            train: 0.805,
            val: 0.095,
            test: 0.100,
        }
    }
}

/// Maps a pair id to [0, 1) through the first 8 bytes of its SHA-256.
pub fn pair_hash_unit(pair_id: &str) -> f64 {
    let digest = Sha256::digest(pair_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    // 53 high bits give an exactly representable value in [0, 1).
    (u64::from_be_bytes(head) >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic split of a pair: all of its records land in the same split.
pub fn assign_split(pair_id: &str, proportions: &SplitProportions) -> Split {
    let u = pair_hash_unit(pair_id);
    if u < proportions.train {
        Split::Train
    } else if u < proportions.train + proportions.val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub policy: ThresholdPolicy,
    pub consensus: ConsensusConfig,
    /// Fraction of gold answers that must match exactly.
    pub gold_pass_fraction: f64,
    pub proportions: SplitProportions,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            policy: ThresholdPolicy::default(),
            consensus: ConsensusConfig::default(),
            gold_pass_fraction: 1.0,
            proportions: SplitProportions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub ballots: usize,
    pub gold_rejected: usize,
    pub status_kept: usize,
    pub promoted_ballots: usize,
    pub promoted_vectors: usize,
    pub dropped_options: usize,
    pub groups: usize,
    pub records: usize,
}

/// Full aggregation pipeline: gold audit, consensus filter, vote counting,
/// thresholding and split assignment.
///
/// Ballots failing the gold audit are removed before the consensus filter
/// and cannot be promoted. Output is sorted by (pair_id, task, option_id).
pub fn build_dataset(
    ballots: &[Ballot],
    registry: &Registry,
    gold_key: &GoldKey,
    config: &BuildConfig,
) -> Result<(Vec<BinaryRecord>, BuildSummary), AggregationError> {
    config.proportions.validate()?;
    let mut summary = BuildSummary {
        ballots: ballots.len(),
        ..Default::default()
    };

    let mut groups: BTreeMap<(&str, TaskCode), Vec<Ballot>> = BTreeMap::new();
    for ballot in ballots {
        check_ballot(ballot, registry)?;
        if !score_gold(ballot, gold_key, config.gold_pass_fraction)?.passed {
            summary.gold_rejected += 1;
            continue;
        }
        groups
            .entry((ballot.pair_id.as_str(), ballot.task))
            .or_default()
            .push(ballot.clone());
    }

    let mut records = Vec::new();
    for ((pair_id, task), group) in &groups {
        summary.groups += 1;
        summary.status_kept += group
            .iter()
            .filter(|b| b.status == BallotStatus::Approved)
            .count();
        let options = registry.options(*task);
        let outcome = consensus_filter(group, options, &config.policy, &config.consensus);
        summary.promoted_ballots += outcome.promoted_ballots;
        summary.promoted_vectors += outcome.promoted.len();
        summary.dropped_options += outcome.dropped.len();
        if outcome.kept.is_empty() {
            continue;
        }
        let counts = vote_fractions(&outcome.kept, options)?;
        let split = assign_split(pair_id, &config.proportions);
        let mut assignments: Vec<&str> = outcome.kept.iter().map(|b| b.assignment_id.as_str()).collect();
        assignments.sort_unstable();
        let assignments = assignments.join(";");

        for opt in options {
            if outcome.dropped.contains(&opt.option_id) {
                continue;
            }
            let count = counts[&opt.option_id];
            let mut provenance = BTreeMap::new();
            provenance.insert("assignments".to_string(), assignments.clone().into());
            provenance.insert("promoted_ballots".to_string(), outcome.promoted_ballots.into());
            provenance.insert("group_ballots".to_string(), group.len().into());
            records.push(BinaryRecord {
                pair_id: pair_id.to_string(),
                task: *task,
                option_id: opt.option_id.clone(),
                option_desc: opt.description.clone(),
                label: majority_label(opt, count.votes_for, count.votes_total, &config.policy),
                vote_fraction: count.fraction(),
                votes_for: count.votes_for,
                votes_total: count.votes_total,
                split,
                provenance,
            });
        }
    }
    records.sort_by(|a, b| {
        (a.pair_id.as_str(), a.task, a.option_id.as_str()).cmp(&(b.pair_id.as_str(), b.task, b.option_id.as_str()))
    });
    summary.records = records.len();
    Ok((records, summary))
}

fn check_ballot(ballot: &Ballot, registry: &Registry) -> Result<(), AggregationError> {
    let options = registry.options(ballot.task);
    if options.is_empty() {
        return Err(AggregationError::UnknownTask {
            assignment_id: ballot.assignment_id.clone(),
            task: ballot.task,
        });
    }
    for id in &ballot.selected {
        if !options.iter().any(|o| &o.option_id == id) {
            return Err(AggregationError::UnknownOption {
                assignment_id: ballot.assignment_id.clone(),
                task: ballot.task,
                option_id: id.clone(),
            });
        }
    }
    Ok(())
}
