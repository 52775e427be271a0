//! System and user message assembly.
//!
//! Instruction texts live in `prompts/*.txt` next to this crate's manifest and
//! are compiled in; the structured-output block from `prompts/output_contract.txt`
//! is appended to every system message, aligned or not.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, Level, Scenario, UnknownName};

/// An attribute together with the level a decision-maker is steered toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignmentTarget {
    pub attribute: Attribute,
    pub level: Level,
}

impl AlignmentTarget {
    pub fn new(attribute: Attribute, level: Level) -> Self {
        AlignmentTarget { attribute, level }
    }

    pub fn opposite(self) -> Self {
        AlignmentTarget::new(self.attribute, self.level.negate())
    }

    /// All 12 targets, attribute-major, high before low.
    pub fn all() -> Vec<AlignmentTarget> {
        Attribute::ALL
            .iter()
            .flat_map(|&a| Level::ALL.iter().map(move |&l| AlignmentTarget::new(a, l)))
            .collect()
    }
}

impl fmt::Display for AlignmentTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.attribute, self.level)
    }
}

impl FromStr for AlignmentTarget {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || UnknownName {
            kind: "alignment target",
            name: s.to_string(),
        };
        let (attribute, level) = s.rsplit_once('_').ok_or_else(unknown)?;
        Ok(AlignmentTarget::new(
            attribute.parse().map_err(|_| unknown())?,
            level.parse().map_err(|_| unknown())?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlignmentMode {
    Unaligned,
    Aligned { target: AlignmentTarget },
}

impl AlignmentMode {
    pub fn target(&self) -> Option<AlignmentTarget> {
        match self {
            AlignmentMode::Unaligned => None,
            AlignmentMode::Aligned { target } => Some(*target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub mode: AlignmentMode,
    pub scenario_id: String,
}

const OUTPUT_CONTRACT: &str = include_str!("../prompts/output_contract.txt");
const UNALIGNED: &str = include_str!("../prompts/unaligned.txt");

fn aligned_instructions(target: AlignmentTarget) -> &'static str {
    use Attribute::*;
    use Level::*;
    match (target.attribute, target.level) {
        (ProtocolFocus, High) => include_str!("../prompts/protocol_focus_high.txt"),
        (ProtocolFocus, Low) => include_str!("../prompts/protocol_focus_low.txt"),
        (Fairness, High) => include_str!("../prompts/fairness_high.txt"),
        (Fairness, Low) => include_str!("../prompts/fairness_low.txt"),
        (RiskAversion, High) => include_str!("../prompts/risk_aversion_high.txt"),
        (RiskAversion, Low) => include_str!("../prompts/risk_aversion_low.txt"),
        (ContinuingCare, High) => include_str!("../prompts/continuing_care_high.txt"),
        (ContinuingCare, Low) => include_str!("../prompts/continuing_care_low.txt"),
        (MoralDesert, High) => include_str!("../prompts/moral_desert_high.txt"),
        (MoralDesert, Low) => include_str!("../prompts/moral_desert_low.txt"),
        (Utilitarianism, High) => include_str!("../prompts/utilitarianism_high.txt"),
        (Utilitarianism, Low) => include_str!("../prompts/utilitarianism_low.txt"),
    }
}

/// Asset files end with a single LF that is not part of the message.
fn asset(text: &'static str) -> &'static str {
    text.strip_suffix('\n').unwrap_or(text)
}

/// The instruction set for `mode`, without the output contract.
pub fn instructions(mode: AlignmentMode) -> &'static str {
    match mode {
        AlignmentMode::Unaligned => asset(UNALIGNED),
        AlignmentMode::Aligned { target } => asset(aligned_instructions(target)),
    }
}

pub fn output_contract() -> &'static str {
    asset(OUTPUT_CONTRACT)
}

pub fn system_message(mode: AlignmentMode) -> String {
    format!("{}\n\n{}", instructions(mode), output_contract())
}

/// `{context}\n{question} ['(0) text', '(1) text', ...]`, with `'` inside a
/// choice escaped as `\'`.
pub fn user_message(scenario: &Scenario) -> String {
    let entries: Vec<String> = scenario
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("'({i}) {}'", c.text.replace('\'', "\\'")))
        .collect();
    format!(
        "{}\n{} [{}]",
        scenario.context,
        scenario.question,
        entries.join(", ")
    )
}

pub fn assemble(scenario: &Scenario, mode: AlignmentMode) -> PromptBundle {
    PromptBundle {
        system: system_message(mode),
        user: user_message(scenario),
        mode,
        scenario_id: scenario.id.clone(),
    }
}

/// Every distinct mode: unaligned first, then the 12 aligned targets.
pub fn all_modes() -> Vec<AlignmentMode> {
    std::iter::once(AlignmentMode::Unaligned)
        .chain(
            AlignmentTarget::all()
                .into_iter()
                .map(|target| AlignmentMode::Aligned { target }),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Choice;
    use std::collections::{BTreeMap, HashSet};

    fn scenario(choices: &[&str]) -> Scenario {
        Scenario {
            id: "s".into(),
            context: "Context line.".into(),
            question: "What do you do?".into(),
            primary_attribute: Attribute::RiskAversion,
            choices: choices
                .iter()
                .map(|t| Choice {
                    text: t.to_string(),
                    labels: BTreeMap::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn unaligned_opens_with_assistant_role() {
        assert!(system_message(AlignmentMode::Unaligned).starts_with(
            "You are an assistant specialized in answering multiple-choice questions"
        ));
    }

    #[test]
    fn fairness_high_mentions_fairness() {
        let mode = AlignmentMode::Aligned {
            target: AlignmentTarget::new(Attribute::Fairness, Level::High),
        };
        assert!(system_message(mode).contains("consider fairness in your decision-making process"));
    }

    #[test]
    fn every_system_message_ends_with_contract() {
        for mode in all_modes() {
            let msg = system_message(mode);
            assert!(msg.ends_with("carefully note the index that corresponds to each answer."));
            assert!(msg.contains("\n\n{\"Reasoning\": \"<Provide a reasoned explanation here>\""));
            assert!(!instructions(mode).ends_with(char::is_whitespace));
        }
    }

    #[test]
    fn thirteen_distinct_system_messages() {
        let set: HashSet<String> = all_modes().into_iter().map(system_message).collect();
        assert_eq!(set.len(), 13);
    }

    #[test]
    fn user_message_shape() {
        let s = scenario(&["Go left", "Go right", "Wait"]);
        assert_eq!(
            user_message(&s),
            "Context line.\nWhat do you do? ['(0) Go left', '(1) Go right', '(2) Wait']"
        );
    }

    #[test]
    fn single_quotes_are_escaped() {
        let s = scenario(&["Treat the patient's wound", "Leave"]);
        assert!(user_message(&s).ends_with(r"['(0) Treat the patient\'s wound', '(1) Leave']"));
    }

    #[test]
    fn user_text_is_mode_independent() {
        let s = scenario(&["a", "b"]);
        let t = AlignmentTarget::new(Attribute::RiskAversion, Level::High);
        let hi = assemble(&s, AlignmentMode::Aligned { target: t });
        let lo = assemble(
            &s,
            AlignmentMode::Aligned {
                target: t.opposite(),
            },
        );
        assert_eq!(hi.user, lo.user);
        assert_ne!(hi.system, lo.system);
        assert!(hi.system.contains("high risk aversion"));
        assert_eq!(hi.scenario_id, "s");
    }

    #[test]
    fn target_string_round_trip() {
        for t in AlignmentTarget::all() {
            assert_eq!(t.to_string().parse::<AlignmentTarget>().unwrap(), t);
        }
        assert!("fairness_medium".parse::<AlignmentTarget>().is_err());
    }
}
