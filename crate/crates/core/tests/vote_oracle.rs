mod common;

use common::{brute_force_winner, exhaustive_vote_check, sequences};

#[test]
fn sequence_enumeration_counts() {
    // 1 + 3 + 9 + 27 + 81 + 243
    assert_eq!(sequences(3, 5).len(), 364);
    assert_eq!(sequences(2, 0), vec![Vec::<usize>::new()]);
}

#[test]
fn brute_force_known_cases() {
    assert_eq!(brute_force_winner(&[0, 0, 0, 0, 0], &[1, 1, 1, 1, 1], 2), 0);
    assert_eq!(brute_force_winner(&[0, 0, 1, 1, 1], &[0, 0, 0, 1, 1], 2), 1);
    // score tie, more positive votes wins
    assert_eq!(brute_force_winner(&[0, 0, 1], &[0], 2), 0);
    // full tie, lowest index wins
    assert_eq!(brute_force_winner(&[], &[2], 3), 0);
}

#[test]
fn select_matches_brute_force_on_every_pattern() {
    let (checked, mismatches) = exhaustive_vote_check(3, 5, 5);
    // n = 1: 6*6 - 1, n = 2: 63*63 - 1, n = 3: 364*364 - 1
    assert_eq!(checked, 35 + 3968 + 132_495);
    assert!(
        mismatches.is_empty(),
        "{} mismatches, first: {}",
        mismatches.len(),
        mismatches[0]
    );
}
