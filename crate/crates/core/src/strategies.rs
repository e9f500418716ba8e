//! The eight annotation strategies.
//!
//! | id | taxonomy | input | output |
//! |----|----------|-------|--------|
//! | A1 | seven | five frame labels | each frame scored separately |
//! | B1 | seven | five frame labels | plurality vote, middle frame breaks ties |
//! | C1 | seven | five frame labels | plurality vote over non-Neutral labels |
//! | D1 | seven | one composite label | composite label |
//! | A2, B2, C2 | three | seven-class frame labels mapped to sentiment | as A1, B1, C1 |
//! | D2 | three | one composite label | composite label |
//!
//! "Majority" is read as a unique plurality: the label with strictly the
//! highest count wins, anything else is a tie.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::annotator::{AnnotationRecord, RecordRole};
use crate::labels::{map_to_sentiment, ClassLabel, Emotion, Label, Sentiment, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("invalid annotation for segment {segment_id}")]
    InvalidAnnotation { segment_id: String },
    #[error("record for segment {segment_id} is not a {expected} composite annotation")]
    WrongRecord { segment_id: String, expected: Taxonomy },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyId {
    A1,
    B1,
    C1,
    D1,
    A2,
    B2,
    C2,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    PerFrame,
    Majority,
    MajorityExcludingNeutral,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerFrame,
    PerSegment,
}

impl StrategyId {
    pub const ALL: [StrategyId; 8] = [
        StrategyId::A1,
        StrategyId::B1,
        StrategyId::C1,
        StrategyId::D1,
        StrategyId::A2,
        StrategyId::B2,
        StrategyId::C2,
        StrategyId::D2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::A1 => "A1",
            StrategyId::B1 => "B1",
            StrategyId::C1 => "C1",
            StrategyId::D1 => "D1",
            StrategyId::A2 => "A2",
            StrategyId::B2 => "B2",
            StrategyId::C2 => "C2",
            StrategyId::D2 => "D2",
        }
    }

    pub fn taxonomy(self) -> Taxonomy {
        match self {
            StrategyId::A1 | StrategyId::B1 | StrategyId::C1 | StrategyId::D1 => Taxonomy::SevenClass,
            _ => Taxonomy::ThreeClass,
        }
    }

    pub fn family(self) -> Family {
        match self {
            StrategyId::A1 | StrategyId::A2 => Family::PerFrame,
            StrategyId::B1 | StrategyId::B2 => Family::Majority,
            StrategyId::C1 | StrategyId::C2 => Family::MajorityExcludingNeutral,
            StrategyId::D1 | StrategyId::D2 => Family::Composite,
        }
    }

    pub fn granularity(self) -> Granularity {
        match self.family() {
            Family::PerFrame => Granularity::PerFrame,
            _ => Granularity::PerSegment,
        }
    }

    /// Whether the strategy consumes the five seven-class frame annotations.
    pub fn needs_frames(self) -> bool {
        self.family() != Family::Composite
    }

    /// Parses a comma-separated list such as `A1,B1,D2`; duplicates collapse
    /// and the result is in canonical order.
    pub fn parse_list(s: &str) -> Result<Vec<StrategyId>, StrategyError> {
        let mut out = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<StrategyId>, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

impl Serialize for StrategyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// The five frame labels of one segment in role order (first .. last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentVotes<L> {
    pub segment_id: String,
    pub votes: [L; 5],
}

impl<L: ClassLabel> SegmentVotes<L> {
    pub fn new(segment_id: impl Into<String>, votes: [L; 5]) -> Self {
        Self {
            segment_id: segment_id.into(),
            votes,
        }
    }

    pub fn middle_label(&self) -> L {
        self.votes[2]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentPrediction {
    pub segment_id: String,
    pub strategy: StrategyId,
    pub granularity: Granularity,
    pub labels: Vec<Label>,
}

fn counts<L: ClassLabel>(votes: impl IntoIterator<Item = L>) -> Vec<usize> {
    let mut c = vec![0; L::ALL.len()];
    for v in votes {
        c[v.index()] += 1;
    }
    c
}

/// Labels sharing the highest count, in canonical order.
fn modes<L: ClassLabel>(counts: &[usize]) -> Vec<L> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Vec::new();
    }
    L::ALL.iter().copied().filter(|l| counts[l.index()] == max).collect()
}

/// Unique plurality of the five votes, else the middle frame's label.
pub fn majority_with_middle_tiebreak<L: ClassLabel>(votes: &SegmentVotes<L>) -> L {
    match modes::<L>(&counts(votes.votes)).as_slice() {
        [only] => *only,
        _ => votes.middle_label(),
    }
}

/// Plurality vote with Neutral removed.
///
/// Five Neutral votes give Neutral. On a tie a non-Neutral middle label wins,
/// as in [`majority_with_middle_tiebreak`]. When the middle frame voted
/// Neutral, the tied label voted closest to the middle frame wins, the
/// earlier frame taking precedence at equal distance.
pub fn majority_excluding_neutral<L: ClassLabel>(votes: &SegmentVotes<L>) -> L {
    let non_neutral = votes.votes.iter().copied().filter(|v| !v.is_neutral());
    let tied = modes::<L>(&counts(non_neutral));
    match tied.as_slice() {
        [] => L::NEUTRAL,
        [only] => *only,
        _ => {
            let middle = votes.middle_label();
            if !middle.is_neutral() {
                return middle;
            }
            const BY_DISTANCE: [usize; 5] = [2, 1, 3, 0, 4];
            BY_DISTANCE
                .iter()
                .map(|&i| votes.votes[i])
                .find(|v| tied.contains(v))
                .expect("a tied label was voted somewhere")
        }
    }
}

pub fn map_votes(votes: &SegmentVotes<Emotion>) -> SegmentVotes<Sentiment> {
    SegmentVotes {
        segment_id: votes.segment_id.clone(),
        votes: votes.votes.map(map_to_sentiment),
    }
}

fn per_frame<L: ClassLabel + Into<Label>>(votes: &SegmentVotes<L>, strategy: StrategyId) -> SegmentPrediction {
    SegmentPrediction {
        segment_id: votes.segment_id.clone(),
        strategy,
        granularity: Granularity::PerFrame,
        labels: votes.votes.iter().map(|&l| l.into()).collect(),
    }
}

fn per_segment(segment_id: &str, strategy: StrategyId, label: Label) -> SegmentPrediction {
    SegmentPrediction {
        segment_id: segment_id.to_string(),
        strategy,
        granularity: Granularity::PerSegment,
        labels: vec![label],
    }
}

pub fn strategy_a1(votes: &SegmentVotes<Emotion>) -> SegmentPrediction {
    per_frame(votes, StrategyId::A1)
}

/// Applies a frame-vote strategy (A*, B*, C*) to seven-class frame labels.
///
/// Panics if called with a composite strategy.
pub fn apply_to_votes(strategy: StrategyId, votes: &SegmentVotes<Emotion>) -> SegmentPrediction {
    let id = votes.segment_id.as_str();
    match strategy {
        StrategyId::A1 => strategy_a1(votes),
        StrategyId::B1 => per_segment(id, strategy, majority_with_middle_tiebreak(votes).into()),
        StrategyId::C1 => per_segment(id, strategy, majority_excluding_neutral(votes).into()),
        StrategyId::A2 => per_frame(&map_votes(votes), strategy),
        StrategyId::B2 => per_segment(id, strategy, majority_with_middle_tiebreak(&map_votes(votes)).into()),
        StrategyId::C2 => per_segment(id, strategy, majority_excluding_neutral(&map_votes(votes)).into()),
        StrategyId::D1 | StrategyId::D2 => panic!("{strategy} does not aggregate frame votes"),
    }
}

/// Applies A2, B2 or C2 to frame labels that are already three-class.
///
/// Panics for any other strategy.
pub fn apply_to_sentiment_votes(strategy: StrategyId, votes: &SegmentVotes<Sentiment>) -> SegmentPrediction {
    let id = votes.segment_id.as_str();
    match strategy {
        StrategyId::A2 => per_frame(votes, strategy),
        StrategyId::B2 => per_segment(id, strategy, majority_with_middle_tiebreak(votes).into()),
        StrategyId::C2 => per_segment(id, strategy, majority_excluding_neutral(votes).into()),
        other => panic!("{other} does not aggregate three-class frame votes"),
    }
}

/// Wraps a composite annotation as the D1/D2 prediction for its taxonomy.
pub fn strategy_d(composite: &AnnotationRecord) -> Result<SegmentPrediction, StrategyError> {
    if composite.role != RecordRole::Composite {
        return Err(StrategyError::WrongRecord {
            segment_id: composite.segment_id.clone(),
            expected: composite.taxonomy,
        });
    }
    let strategy = match composite.taxonomy {
        Taxonomy::SevenClass => StrategyId::D1,
        Taxonomy::ThreeClass => StrategyId::D2,
    };
    let label = composite.label().ok_or_else(|| StrategyError::InvalidAnnotation {
        segment_id: composite.segment_id.clone(),
    })?;
    Ok(per_segment(&composite.segment_id, strategy, label))
}
