//! Emotion taxonomies, the seven-to-three sentiment mapping, and parsing of
//! free-text model output into labels.

use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("could not parse a unique label from {raw_text:?}")]
    UnparsableLabel { raw_text: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

/// A label drawn from one of the two closed taxonomies.
///
/// `ALL` lists the labels in canonical order; every matrix and report in the
/// crate uses that order so that output is stable across runs.
pub trait ClassLabel: Copy + Eq + Ord + Hash + fmt::Debug + Send + Sync + 'static {
    const TAXONOMY: Taxonomy;
    const ALL: &'static [Self];
    const NEUTRAL: Self;

    fn name(self) -> &'static str;

    fn index(self) -> usize;

    fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    fn is_neutral(self) -> bool {
        self == Self::NEUTRAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Angry,
    Disgust,
    Fear,
    Happy,
    Neutral,
    Sad,
    Surprise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl ClassLabel for Emotion {
    const TAXONOMY: Taxonomy = Taxonomy::SevenClass;
    const ALL: &'static [Self] = &[
        Emotion::Angry,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Neutral,
        Emotion::Sad,
        Emotion::Surprise,
    ];
    const NEUTRAL: Self = Emotion::Neutral;

    fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "Angry",
            Emotion::Disgust => "Disgust",
            Emotion::Fear => "Fear",
            Emotion::Happy => "Happy",
            Emotion::Neutral => "Neutral",
            Emotion::Sad => "Sad",
            Emotion::Surprise => "Surprise",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl ClassLabel for Sentiment {
    const TAXONOMY: Taxonomy = Taxonomy::ThreeClass;
    const ALL: &'static [Self] = &[Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];
    const NEUTRAL: Self = Sentiment::Neutral;

    fn name(self) -> &'static str {
        match self {
            Sentiment::Negative => "Negative",
            Sentiment::Neutral => "Neutral",
            Sentiment::Positive => "Positive",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Emotion {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        lookup_exact(s)
    }
}

impl FromStr for Sentiment {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        lookup_exact(s)
    }
}

fn lookup_exact<L: ClassLabel>(s: &str) -> Result<L, LabelError> {
    L::ALL
        .iter()
        .copied()
        .find(|l| l.name() == s)
        .ok_or_else(|| LabelError::UnknownLabel(s.to_string()))
}

/// Collapses a seven-class emotion onto the three-class sentiment scale.
pub fn map_to_sentiment(label: Emotion) -> Sentiment {
    match label {
        Emotion::Angry | Emotion::Disgust | Emotion::Fear | Emotion::Sad => Sentiment::Negative,
        Emotion::Happy | Emotion::Surprise => Sentiment::Positive,
        Emotion::Neutral => Sentiment::Neutral,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    SevenClass,
    ThreeClass,
}

impl Taxonomy {
    pub const BOTH: [Taxonomy; 2] = [Taxonomy::SevenClass, Taxonomy::ThreeClass];

    pub fn label_names(self) -> &'static [&'static str] {
        match self {
            Taxonomy::SevenClass => &["Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise"],
            Taxonomy::ThreeClass => &["Negative", "Neutral", "Positive"],
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        self.label_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Taxonomy::SevenClass => "seven_class",
            Taxonomy::ThreeClass => "three_class",
        }
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// A label of either taxonomy, as carried in annotation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Emotion(Emotion),
    Sentiment(Sentiment),
}

impl Label {
    pub fn taxonomy(self) -> Taxonomy {
        match self {
            Label::Emotion(_) => Taxonomy::SevenClass,
            Label::Sentiment(_) => Taxonomy::ThreeClass,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Emotion(e) => e.name(),
            Label::Sentiment(s) => s.name(),
        }
    }

    pub fn as_emotion(self) -> Option<Emotion> {
        match self {
            Label::Emotion(e) => Some(e),
            Label::Sentiment(_) => None,
        }
    }

    pub fn as_sentiment(self) -> Option<Sentiment> {
        match self {
            Label::Sentiment(s) => Some(s),
            Label::Emotion(_) => None,
        }
    }

    /// Resolves a canonical name within `taxonomy`. "Neutral" exists in both.
    pub fn from_name(name: &str, taxonomy: Taxonomy) -> Result<Label, LabelError> {
        match taxonomy {
            Taxonomy::SevenClass => name.parse().map(Label::Emotion),
            Taxonomy::ThreeClass => name.parse().map(Label::Sentiment),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl From<Emotion> for Label {
    fn from(e: Emotion) -> Self {
        Label::Emotion(e)
    }
}

impl From<Sentiment> for Label {
    fn from(s: Sentiment) -> Self {
        Label::Sentiment(s)
    }
}

/// Parses model output into a label of `taxonomy`.
///
/// The text is trimmed, stripped of surrounding quotes and trailing
/// punctuation, and compared case-insensitively against the canonical names.
/// Failing that, a case-insensitive whole-word search must find exactly one
/// label name in the text.
pub fn parse_label(raw_text: &str, taxonomy: Taxonomy) -> Result<Label, LabelError> {
    match taxonomy {
        Taxonomy::SevenClass => parse_typed::<Emotion>(raw_text).map(Label::Emotion),
        Taxonomy::ThreeClass => parse_typed::<Sentiment>(raw_text).map(Label::Sentiment),
    }
}

pub fn parse_typed<L: ClassLabel>(raw_text: &str) -> Result<L, LabelError> {
    let normalized = normalize(raw_text);
    if let Some(label) = L::ALL
        .iter()
        .copied()
        .find(|l| l.name().eq_ignore_ascii_case(normalized))
    {
        return Ok(label);
    }

    let words: Vec<String> = raw_text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    let mut hits = L::ALL
        .iter()
        .copied()
        .filter(|l| words.iter().any(|w| w == &l.name().to_lowercase()));
    match (hits.next(), hits.next()) {
        (Some(label), None) => Ok(label),
        _ => Err(LabelError::UnparsableLabel {
            raw_text: raw_text.to_string(),
        }),
    }
}

fn normalize(raw: &str) -> &str {
    const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '*'];
    const TERMINAL: &[char] = &['.', '!', '?', ',', ';', ':'];
    let mut s = raw.trim();
    loop {
        let next = s.trim_end_matches(TERMINAL).trim_matches(QUOTES).trim();
        if next == s {
            return s;
        }
        s = next;
    }
}
