//! Weighted self-consistency.
//!
//! Samples drawn with the target-level prompt vote +1 for the choice they
//! picked; samples drawn with the opposite-level prompt vote -1. The choice
//! with the highest score wins, ties going to the choice with more positive
//! votes and then to the lowest index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parsing::ParseOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn weight(self) -> i64 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSample {
    pub polarity: Polarity,
    pub decision: ParseOutcome,
    pub sample_index: u32,
}

impl DecisionSample {
    fn chosen(&self) -> Option<usize> {
        self.decision.decision().map(|d| d.answer_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub scores: Vec<i64>,
    pub pos_votes: Vec<u32>,
    pub neg_votes: Vec<u32>,
    pub valid_sample_count: usize,
    /// Samples skipped because they failed to parse.
    pub excluded: usize,
}

impl VoteTally {
    /// Builds a tally from per-choice vote counts.
    pub fn from_votes(pos_votes: Vec<u32>, neg_votes: Vec<u32>) -> Result<Self, ConsistencyError> {
        assert_eq!(
            pos_votes.len(),
            neg_votes.len(),
            "vote vectors differ in length"
        );
        let valid = pos_votes
            .iter()
            .chain(&neg_votes)
            .map(|&v| v as usize)
            .sum();
        if valid == 0 {
            return Err(ConsistencyError::EmptyTally { excluded: 0 });
        }
        let scores = pos_votes
            .iter()
            .zip(&neg_votes)
            .map(|(&p, &n)| p as i64 - n as i64)
            .collect();
        Ok(VoteTally {
            scores,
            pos_votes,
            neg_votes,
            valid_sample_count: valid,
            excluded: 0,
        })
    }

    pub fn n_choices(&self) -> usize {
        self.scores.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsistencyError {
    #[error("no sample parsed successfully ({excluded} excluded)")]
    EmptyTally { excluded: usize },
}

pub fn tally(samples: &[DecisionSample], n_choices: usize) -> Result<VoteTally, ConsistencyError> {
    let mut pos_votes = vec![0u32; n_choices];
    let mut neg_votes = vec![0u32; n_choices];
    let mut excluded = 0;
    for sample in samples {
        match sample.chosen() {
            Some(i) if i < n_choices => match sample.polarity {
                Polarity::Positive => pos_votes[i] += 1,
                Polarity::Negative => neg_votes[i] += 1,
            },
            _ => excluded += 1,
        }
    }
    if excluded > 0 {
        log::debug!(
            "{excluded} of {} samples excluded from tally",
            samples.len()
        );
    }
    let mut t = VoteTally::from_votes(pos_votes, neg_votes)
        .map_err(|_| ConsistencyError::EmptyTally { excluded })?;
    t.excluded = excluded;
    Ok(t)
}

/// Index of the winning choice.
pub fn select(t: &VoteTally) -> usize {
    (0..t.n_choices())
        .max_by(|&a, &b| {
            t.scores[a]
                .cmp(&t.scores[b])
                .then(t.pos_votes[a].cmp(&t.pos_votes[b]))
                // Reversed so the lower index compares greater.
                .then(b.cmp(&a))
        })
        .expect("tally has at least one choice")
}

/// A reasoning trace for `winner`, drawn uniformly with a seeded RNG.
///
/// Candidates are positive samples that chose `winner`; failing that, any
/// parsed sample that chose it. Returns an empty string when nothing chose it.
pub fn select_trace(samples: &[DecisionSample], winner: usize, rng_seed: u64) -> String {
    let mut chose_winner: Vec<&DecisionSample> = samples
        .iter()
        .filter(|s| s.chosen() == Some(winner))
        .collect();
    chose_winner.sort_by_key(|s| (s.polarity, s.sample_index));
    let positives: Vec<&DecisionSample> = chose_winner
        .iter()
        .copied()
        .filter(|s| s.polarity == Polarity::Positive)
        .collect();
    let pool = if positives.is_empty() {
        chose_winner
    } else {
        positives
    };
    if pool.is_empty() {
        return String::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pick = pool[rng.random_range(0..pool.len())];
    pick.decision
        .decision()
        .map(|d| d.reasoning.clone())
        .unwrap_or_default()
}
