//! Seeded confusion-matrix labeler used in place of a live model.
//!
//! Draws are counter based: each one is a pure function of
//! `(seed, segment_id, role, draw_index)`, so workers share no generator
//! state and any record can be reproduced in isolation.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Backend, BackendError, BackendKind, ChatRequest, Completion, RequestContext};
use crate::labels::{map_to_sentiment, ClassLabel, Taxonomy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelerError {
    #[error("confusion matrix must be {expected}x{expected}")]
    Shape { expected: usize },
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("invalid labeler spec {0:?}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedLabeler {
    taxonomy: Taxonomy,
    /// rows = ground truth, columns = emitted label
    confusion: Vec<Vec<f64>>,
    seed: u64,
}

impl SimulatedLabeler {
    pub fn new(taxonomy: Taxonomy, confusion: Vec<Vec<f64>>, seed: u64) -> Result<Self, LabelerError> {
        let k = taxonomy.len();
        if confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(LabelerError::Shape { expected: k });
        }
        for (row, r) in confusion.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(LabelerError::NotStochastic { row, sum });
            }
        }
        Ok(Self {
            taxonomy,
            confusion,
            seed,
        })
    }

    pub fn uniform(taxonomy: Taxonomy, seed: u64) -> Self {
        let k = taxonomy.len();
        Self::new(taxonomy, vec![vec![1.0 / k as f64; k]; k], seed).expect("uniform rows are stochastic")
    }

    pub fn identity(taxonomy: Taxonomy, seed: u64) -> Self {
        Self::diagonal(taxonomy, 1.0, seed).expect("identity is stochastic")
    }

    /// `p_correct` on the diagonal, the remainder spread evenly elsewhere.
    pub fn diagonal(taxonomy: Taxonomy, p_correct: f64, seed: u64) -> Result<Self, LabelerError> {
        if !(0.0..=1.0).contains(&p_correct) {
            return Err(LabelerError::Spec(format!("diagonal:{p_correct}")));
        }
        let k = taxonomy.len();
        let off = (1.0 - p_correct) / (k - 1) as f64;
        let m = (0..k)
            .map(|i| (0..k).map(|j| if i == j { p_correct } else { off }).collect())
            .collect();
        Self::new(taxonomy, m, seed)
    }

    pub fn taxonomy(&self) -> Taxonomy {
        self.taxonomy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn confusion(&self) -> &[Vec<f64>] {
        &self.confusion
    }

    /// Index of the emitted label for ground-truth row `gt_index`.
    pub fn draw_index(&self, gt_index: usize, segment_id: &str, role: &str, draw_index: u32) -> usize {
        let u = uniform_draw(self.seed, segment_id, role, draw_index);
        let row = &self.confusion[gt_index];
        let mut acc = 0.0;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u fell in the rounding slack above the last cumulative sum
        row.iter().rposition(|p| *p > 0.0).unwrap_or(gt_index)
    }
}

/// Uniform value in `[0, 1)` keyed by the draw coordinates.
pub fn uniform_draw(seed: u64, segment_id: &str, role: &str, draw_index: u32) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((segment_id.len() as u64).to_le_bytes());
    h.update(segment_id.as_bytes());
    h.update((role.len() as u64).to_le_bytes());
    h.update(role.as_bytes());
    h.update(draw_index.to_le_bytes());
    let digest = h.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn simulate_label<L: ClassLabel>(
    gt: L,
    labeler: &SimulatedLabeler,
    segment_id: &str,
    role: &str,
    draw_index: u32,
) -> L {
    assert_eq!(labeler.taxonomy, L::TAXONOMY, "labeler taxonomy mismatch");
    let j = labeler.draw_index(gt.index(), segment_id, role, draw_index);
    L::ALL[j]
}

/// Shape of a simulated labeler, independent of taxonomy size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelerSpec {
    Uniform,
    Identity,
    Diagonal(f64),
}

impl LabelerSpec {
    pub fn build(self, taxonomy: Taxonomy, seed: u64) -> Result<SimulatedLabeler, LabelerError> {
        match self {
            LabelerSpec::Uniform => Ok(SimulatedLabeler::uniform(taxonomy, seed)),
            LabelerSpec::Identity => Ok(SimulatedLabeler::identity(taxonomy, seed)),
            LabelerSpec::Diagonal(p) => SimulatedLabeler::diagonal(taxonomy, p, seed),
        }
    }
}

impl FromStr for LabelerSpec {
    type Err = LabelerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(LabelerSpec::Uniform),
            "identity" => Ok(LabelerSpec::Identity),
            other => {
                let p = other
                    .strip_prefix("diagonal:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| LabelerError::Spec(s.to_string()))?;
                Ok(LabelerSpec::Diagonal(p))
            }
        }
    }
}

impl fmt::Display for LabelerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelerSpec::Uniform => f.write_str("uniform"),
            LabelerSpec::Identity => f.write_str("identity"),
            LabelerSpec::Diagonal(p) => write!(f, "diagonal:{p}"),
        }
    }
}

/// Answers requests by sampling the ground-truth row of the labeler that
/// matches the request taxonomy. Three-class ground truth is the mapped
/// seven-class label.
pub struct SimulatedBackend {
    seven: SimulatedLabeler,
    three: SimulatedLabeler,
}

impl SimulatedBackend {
    pub fn new(seven: SimulatedLabeler, three: SimulatedLabeler) -> Self {
        assert_eq!(seven.taxonomy, Taxonomy::SevenClass);
        assert_eq!(three.taxonomy, Taxonomy::ThreeClass);
        assert_eq!(seven.seed, three.seed, "labelers must share a seed");
        Self { seven, three }
    }

    pub fn from_spec(spec: LabelerSpec, seed: u64) -> Result<Self, LabelerError> {
        Ok(Self::new(
            spec.build(Taxonomy::SevenClass, seed)?,
            spec.build(Taxonomy::ThreeClass, seed)?,
        ))
    }
}

impl Backend for SimulatedBackend {
    fn complete(&self, request: &ChatRequest, ctx: &RequestContext<'_>) -> Result<Completion, BackendError> {
        let role = ctx.role.as_str();
        let content = match request.taxonomy {
            Taxonomy::SevenClass => {
                simulate_label(ctx.ground_truth, &self.seven, ctx.segment_id, role, ctx.draw_index).name()
            }
            Taxonomy::ThreeClass => simulate_label(
                map_to_sentiment(ctx.ground_truth),
                &self.three,
                ctx.segment_id,
                role,
                ctx.draw_index,
            )
            .name(),
        };
        Ok(Completion {
            content: content.to_string(),
            usage: None,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Simulated { seed: self.seven.seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{Emotion, Sentiment};

    #[test]
    fn identity_returns_ground_truth() {
        let l = SimulatedLabeler::identity(Taxonomy::SevenClass, 7);
        for &gt in Emotion::ALL {
            for i in 0..50 {
                assert_eq!(simulate_label(gt, &l, &format!("s{i}"), "middle", 0), gt);
            }
        }
    }

    #[test]
    fn draws_are_keyed_and_reproducible() {
        let l = SimulatedLabeler::uniform(Taxonomy::SevenClass, 42);
        let a: Vec<_> = (0..100)
            .map(|i| simulate_label(Emotion::Fear, &l, "seg", "q1", i))
            .collect();
        let b: Vec<_> = (0..100)
            .map(|i| simulate_label(Emotion::Fear, &l, "seg", "q1", i))
            .collect();
        assert_eq!(a, b);
        assert_ne!(uniform_draw(42, "seg", "q1", 0), uniform_draw(43, "seg", "q1", 0));
        assert_ne!(uniform_draw(42, "seg", "q1", 0), uniform_draw(42, "seg", "q3", 0));
        assert_ne!(uniform_draw(42, "seg", "q1", 0), uniform_draw(42, "seh", "q1", 0));
        // length prefixing keeps ("ab","c") and ("a","bc") apart
        assert_ne!(uniform_draw(1, "ab", "c", 0), uniform_draw(1, "a", "bc", 0));
    }

    #[test]
    fn uniform_frequencies() {
        let l = SimulatedLabeler::uniform(Taxonomy::SevenClass, 2024);
        let mut counts = [0usize; 7];
        let n = 70_000;
        for i in 0..n {
            counts[simulate_label(Emotion::Happy, &l, &format!("seg{i}"), "first", 0).index()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 7.0).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn diagonal_frequency() {
        let l = SimulatedLabeler::diagonal(Taxonomy::SevenClass, 0.6, 99).unwrap();
        let n = 10_000;
        let hits = (0..n)
            .filter(|i| simulate_label(Emotion::Disgust, &l, "s", "last", *i) == Emotion::Disgust)
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.6).abs() <= 0.015, "{f}");
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            SimulatedLabeler::new(Taxonomy::ThreeClass, vec![vec![1.0, 0.0, 0.0]; 2], 0),
            Err(LabelerError::Shape { expected: 3 })
        ));
        let bad = vec![vec![0.5, 0.5, 0.1], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(matches!(
            SimulatedLabeler::new(Taxonomy::ThreeClass, bad, 0),
            Err(LabelerError::NotStochastic { row: 0, .. })
        ));
        let neg = vec![vec![1.5, -0.5, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(SimulatedLabeler::new(Taxonomy::ThreeClass, neg, 0).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("uniform".parse::<LabelerSpec>().unwrap(), LabelerSpec::Uniform);
        assert_eq!(
            "diagonal:0.6".parse::<LabelerSpec>().unwrap(),
            LabelerSpec::Diagonal(0.6)
        );
        assert!("diagonal:1.5".parse::<LabelerSpec>().is_err());
        assert!("wobbly".parse::<LabelerSpec>().is_err());
    }

    #[test]
    fn backend_answers_in_request_taxonomy() {
        use crate::annotator::{build_request, PromptTemplate, RecordRole, RequestMode};
        let backend = SimulatedBackend::from_spec(LabelerSpec::Identity, 3).unwrap();
        let ctx = RequestContext {
            segment_id: "s",
            role: RecordRole::Composite,
            ground_truth: Emotion::Surprise,
            draw_index: 0,
        };
        let req = build_request(
            b"img",
            Taxonomy::ThreeClass,
            RequestMode::Composite,
            &PromptTemplate::default(),
            "m",
            16,
            None,
        );
        assert_eq!(
            backend.complete(&req, &ctx).unwrap().content,
            Sentiment::Positive.name()
        );
        let req7 = ChatRequest {
            taxonomy: Taxonomy::SevenClass,
            ..req
        };
        assert_eq!(backend.complete(&req7, &ctx).unwrap().content, "Surprise");
        assert_eq!(backend.kind(), BackendKind::Simulated { seed: 3 });
    }
}
