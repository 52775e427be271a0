#![allow(dead_code)]

use std::path::PathBuf;

use align_dm::consistency::{DecisionSample, Polarity};
use align_dm::dataset::{load_dataset, LoadOptions};
use align_dm::parsing::{ExtractionRoute, ParseOutcome, ParsedDecision};
use align_dm::{Dataset, Level};

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn sample_dataset_path() -> PathBuf {
    crate_dir().join("data/sample_dataset.json")
}

pub fn sample_dataset() -> Dataset {
    load_dataset(&sample_dataset_path(), LoadOptions::default()).expect("sample dataset loads")
}

pub fn parser_fixture_dir() -> PathBuf {
    crate_dir().join("tests/fixtures/parser")
}

/// The sample dataset cut down to the first high- and first low-labeled
/// choice of each scenario, keeping their relative order.
pub fn two_choice_dataset() -> Dataset {
    let mut d = sample_dataset();
    for s in &mut d.scenarios {
        let hi = s.indices_labeled(Level::High)[0];
        let lo = s.indices_labeled(Level::Low)[0];
        let (a, b) = (hi.min(lo), hi.max(lo));
        s.choices = vec![s.choices[a].clone(), s.choices[b].clone()];
    }
    Dataset::new(d.metadata, d.scenarios).expect("cut-down dataset is valid")
}

/// Brute-force winner: sort every choice by (score desc, positive votes desc,
/// index asc) and take the head. Counts are recomputed from the raw vote
/// sequences, independently of the library's tally.
pub fn brute_force_winner(pos: &[usize], neg: &[usize], n_choices: usize) -> usize {
    let mut rows: Vec<(i64, i64, usize)> = (0..n_choices)
        .map(|c| {
            let p = pos.iter().filter(|&&v| v == c).count() as i64;
            let m = neg.iter().filter(|&&v| v == c).count() as i64;
            (-(p - m), -p, c)
        })
        .collect();
    rows.sort();
    rows[0].2
}

pub fn decision_samples(pos: &[usize], neg: &[usize]) -> Vec<DecisionSample> {
    let make = |polarity, i: usize, c: usize| DecisionSample {
        polarity,
        sample_index: i as u32,
        decision: ParseOutcome::Parsed(ParsedDecision {
            reasoning: String::new(),
            answer_index: c,
            extraction_route: ExtractionRoute::StrictJson,
        }),
    };
    pos.iter()
        .enumerate()
        .map(|(i, &c)| make(Polarity::Positive, i, c))
        .chain(
            neg.iter()
                .enumerate()
                .map(|(i, &c)| make(Polarity::Negative, i, c)),
        )
        .collect()
}

/// All sequences over `0..n` of length `0..=max_len`.
pub fn sequences(n: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for c in 0..n {
                let mut s: Vec<usize> = seq.clone();
                s.push(c);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Runs `select` against the brute force on every non-empty vote pattern with
/// up to `max_n` choices and up to `max_pos`/`max_neg` votes. Returns
/// (patterns checked, mismatches).
pub fn exhaustive_vote_check(max_n: usize, max_pos: usize, max_neg: usize) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for n in 1..=max_n {
        let pos_seqs = sequences(n, max_pos);
        let neg_seqs = sequences(n, max_neg);
        for pos in &pos_seqs {
            for neg in &neg_seqs {
                if pos.is_empty() && neg.is_empty() {
                    continue;
                }
                checked += 1;
                let tally = align_dm::consistency::tally(&decision_samples(pos, neg), n)
                    .expect("non-empty tally");
                let got = align_dm::consistency::select(&tally);
                let want = brute_force_winner(pos, neg, n);
                if got != want {
                    mismatches.push(format!(
                        "n={n} pos={pos:?} neg={neg:?}: select={got} brute={want}"
                    ));
                }
            }
        }
    }
    (checked, mismatches)
}

/// An exact non-negative fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio(pub u128, pub u128);

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Ratio {
        let g = gcd(num, den).max(1);
        Ratio(num / g, den / g)
    }

    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }

    pub fn div(self, k: u128) -> Ratio {
        Ratio::new(self.0, self.1 * k)
    }
}

/// Exact macro-average at `level` over the attributes present in one run.
pub fn exact_overall(run: &align_dm::metrics::RunMetrics, level: Level) -> Ratio {
    let accs: Vec<_> = run.per_target.iter().filter(|a| a.level == level).collect();
    accs.iter()
        .fold(Ratio(0, 1), |acc, a| {
            acc.add(Ratio::new(a.hits as u128, a.n as u128))
        })
        .div(accs.len() as u128)
}
