//! DMA-labeled scenario dataset: types, loader, validation and statistics.
//!
//! A dataset file is a single UTF-8 JSON document:
//!
//! ```json
//! {"metadata": {...},
//!  "scenarios": [{"id": "...", "context": "...", "question": "...",
//!                 "attribute": "fairness",
//!                 "choices": [{"text": "...", "labels": {"fairness": "high"}}, ...]}]}
//! ```
//!
//! Loading is strict by default: unknown fields are schema errors. Lenient
//! mode ignores them. Duplicate object keys are always rejected, since a
//! choice may carry at most one level per attribute.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// A decision-maker attribute. Declaration order is the canonical reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    ProtocolFocus,
    Fairness,
    RiskAversion,
    ContinuingCare,
    MoralDesert,
    Utilitarianism,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::ProtocolFocus,
        Attribute::Fairness,
        Attribute::RiskAversion,
        Attribute::ContinuingCare,
        Attribute::MoralDesert,
        Attribute::Utilitarianism,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::ProtocolFocus => "protocol_focus",
            Attribute::Fairness => "fairness",
            Attribute::RiskAversion => "risk_aversion",
            Attribute::ContinuingCare => "continuing_care",
            Attribute::MoralDesert => "moral_desert",
            Attribute::Utilitarianism => "utilitarianism",
        }
    }

    /// Human-readable name used in tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Attribute::ProtocolFocus => "Protocol focus",
            Attribute::Fairness => "Fairness",
            Attribute::RiskAversion => "Risk aversion",
            Attribute::ContinuingCare => "Continuing care",
            Attribute::MoralDesert => "Moral desert",
            Attribute::Utilitarianism => "Utilitarianism",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

impl FromStr for Attribute {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| UnknownName {
                kind: "attribute",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

impl Level {
    pub const ALL: [Level; 2] = [Level::High, Level::Low];

    pub fn negate(self) -> Level {
        match self {
            Level::High => Level::Low,
            Level::Low => Level::High,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::High => "high",
            Level::Low => "low",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Level::High),
            "low" => Ok(Level::Low),
            _ => Err(UnknownName {
                kind: "level",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Choice {
    pub text: String,
    pub labels: BTreeMap<Attribute, Level>,
}

impl Choice {
    pub fn label(&self, attribute: Attribute) -> Option<Level> {
        self.labels.get(&attribute).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub id: String,
    pub context: String,
    pub question: String,
    #[serde(rename = "attribute")]
    pub primary_attribute: Attribute,
    pub choices: Vec<Choice>,
}

impl Scenario {
    /// Indices of choices labeled `level` for the primary attribute.
    pub fn indices_labeled(&self, level: Level) -> Vec<usize> {
        self.choices
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label(self.primary_attribute) == Some(level))
            .map(|(i, _)| i)
            .collect()
    }

    fn check_invariants(&self) -> Result<(), DatasetError> {
        let invariant = |message: String| DatasetError::Invariant {
            scenario: self.id.clone(),
            message,
        };
        if self.choices.len() < 2 {
            return Err(invariant(format!(
                "expected at least 2 choices, found {}",
                self.choices.len()
            )));
        }
        if let Some(i) = self.choices.iter().position(|c| c.text.trim().is_empty()) {
            return Err(invariant(format!("choice {i} has empty text")));
        }
        for level in Level::ALL {
            if self.indices_labeled(level).is_empty() {
                return Err(invariant(format!(
                    "no choice labeled {level} for primary attribute {}",
                    self.primary_attribute
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Dataset {
    pub metadata: Map<String, Value>,
    pub scenarios: Vec<Scenario>,
}

impl Dataset {
    /// Builds a dataset from already-constructed scenarios, checking every invariant.
    pub fn new(
        metadata: Map<String, Value>,
        scenarios: Vec<Scenario>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for s in &scenarios {
            s.check_invariants()?;
            if !seen.insert(s.id.as_str()) {
                return Err(DatasetError::Invariant {
                    scenario: s.id.clone(),
                    message: "duplicate scenario id".into(),
                });
            }
        }
        Ok(Dataset {
            metadata,
            scenarios,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn filter_by_attribute(&self, attribute: Attribute) -> Vec<&Scenario> {
        filter_by_attribute(self, attribute)
    }

    /// Attributes that are the primary attribute of at least one scenario.
    pub fn attributes_present(&self) -> BTreeSet<Attribute> {
        self.scenarios.iter().map(|s| s.primary_attribute).collect()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json_string() + "\n").map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error in {location}: field `{field}`: {reason}")]
    Schema {
        /// Scenario id when known, otherwise `scenario #N` or `document`.
        location: String,
        field: String,
        reason: String,
    },
    #[error("invariant violated in scenario `{scenario}`: {message}")]
    Invariant { scenario: String, message: String },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Ignore unknown fields instead of rejecting them.
    pub lenient: bool,
}

pub fn load_dataset(path: &Path, options: LoadOptions) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, options)
}

pub fn parse_dataset(text: &str, options: LoadOptions) -> Result<Dataset, DatasetError> {
    let root: Node = serde_json::from_str(text).map_err(|e| DatasetError::Schema {
        location: "document".into(),
        field: "<root>".into(),
        reason: e.to_string(),
    })?;
    let mut reader = DocReader { options };
    reader.document(root)
}

pub fn filter_by_attribute(dataset: &Dataset, attribute: Attribute) -> Vec<&Scenario> {
    dataset
        .scenarios
        .iter()
        .filter(|s| s.primary_attribute == attribute)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AttributeStats {
    pub scenarios: usize,
    pub context_words: usize,
    pub choice_words: usize,
}

/// Per-attribute counts in canonical attribute order, plus totals.
///
/// Word counts are sums over scenarios, not averages. Context words count the
/// `context` field only; choice words sum over every choice text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub per_attribute: BTreeMap<Attribute, AttributeStats>,
    pub total: AttributeStats,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn compute_stats(dataset: &Dataset) -> DatasetStats {
    let mut per_attribute: BTreeMap<Attribute, AttributeStats> = Attribute::ALL
        .iter()
        .map(|&a| (a, AttributeStats::default()))
        .collect();
    for s in &dataset.scenarios {
        let row = per_attribute
            .get_mut(&s.primary_attribute)
            .expect("all attributes seeded");
        row.scenarios += 1;
        row.context_words += word_count(&s.context);
        row.choice_words += s.choices.iter().map(|c| word_count(&c.text)).sum::<usize>();
    }
    let total = per_attribute
        .values()
        .fold(AttributeStats::default(), |acc, r| AttributeStats {
            scenarios: acc.scenarios + r.scenarios,
            context_words: acc.context_words + r.context_words,
            choice_words: acc.choice_words + r.choice_words,
        });
    DatasetStats {
        per_attribute,
        total,
    }
}

// --- loader internals -------------------------------------------------------

/// JSON tree that keeps duplicate object keys so the loader can reject them.
#[derive(Debug, Clone)]
enum Node {
    Null,
    Bool(bool),
    Number(serde_json::Number),
    String(String),
    Array(Vec<Node>),
    Object(Vec<(String, Node)>),
}

impl Node {
    fn kind(&self) -> &'static str {
        match self {
            Node::Null => "null",
            Node::Bool(_) => "boolean",
            Node::Number(_) => "number",
            Node::String(_) => "string",
            Node::Array(_) => "array",
            Node::Object(_) => "object",
        }
    }

    fn into_value(self) -> Result<Value, String> {
        Ok(match self {
            Node::Null => Value::Null,
            Node::Bool(b) => Value::Bool(b),
            Node::Number(n) => Value::Number(n),
            Node::String(s) => Value::String(s),
            Node::Array(items) => Value::Array(
                items
                    .into_iter()
                    .map(Node::into_value)
                    .collect::<Result<_, _>>()?,
            ),
            Node::Object(entries) => {
                let mut map = Map::new();
                for (k, v) in entries {
                    if map.contains_key(&k) {
                        return Err(format!("duplicate key `{k}`"));
                    }
                    map.insert(k, v.into_value()?);
                }
                Value::Object(map)
            }
        })
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct NodeVisitor;

        impl<'de> Visitor<'de> for NodeVisitor {
            type Value = Node;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON value")
            }

            fn visit_unit<E: de::Error>(self) -> Result<Node, E> {
                Ok(Node::Null)
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Node, E> {
                Ok(Node::Bool(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Node, E> {
                Ok(Node::Number(v.into()))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Node, E> {
                Ok(Node::Number(v.into()))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Node, E> {
                serde_json::Number::from_f64(v)
                    .map(Node::Number)
                    .ok_or_else(|| E::custom("non-finite number"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Node, E> {
                Ok(Node::String(v.to_string()))
            }

            fn visit_string<E: de::Error>(self, v: String) -> Result<Node, E> {
                Ok(Node::String(v))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Node, A::Error> {
                let mut items = Vec::new();
                while let Some(item) = seq.next_element()? {
                    items.push(item);
                }
                Ok(Node::Array(items))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Node, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Node>()? {
                    entries.push((k, v));
                }
                Ok(Node::Object(entries))
            }
        }

        deserializer.deserialize_any(NodeVisitor)
    }
}

struct DocReader {
    options: LoadOptions,
}

/// Fields of one JSON object, consumed by name.
struct Fields {
    location: String,
    entries: Vec<(String, Node)>,
}

impl Fields {
    fn new(location: String, node: Node, what: &str) -> Result<Self, DatasetError> {
        match node {
            Node::Object(entries) => {
                let mut seen = HashSet::new();
                for (k, _) in &entries {
                    if !seen.insert(k.clone()) {
                        return Err(DatasetError::Schema {
                            location,
                            field: k.clone(),
                            reason: "duplicate key".into(),
                        });
                    }
                }
                Ok(Fields { location, entries })
            }
            other => Err(DatasetError::Schema {
                location,
                field: what.to_string(),
                reason: format!("expected object, found {}", other.kind()),
            }),
        }
    }

    fn schema(&self, field: &str, reason: impl Into<String>) -> DatasetError {
        DatasetError::Schema {
            location: self.location.clone(),
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, field: &str) -> Option<Node> {
        let pos = self.entries.iter().position(|(k, _)| k == field)?;
        Some(self.entries.remove(pos).1)
    }

    fn require(&mut self, field: &str) -> Result<Node, DatasetError> {
        self.take(field)
            .ok_or_else(|| self.schema(field, "missing"))
    }

    fn string(&mut self, field: &str) -> Result<String, DatasetError> {
        match self.require(field)? {
            Node::String(s) => Ok(s),
            other => Err(self.schema(field, format!("expected string, found {}", other.kind()))),
        }
    }

    fn array(&mut self, field: &str) -> Result<Vec<Node>, DatasetError> {
        match self.require(field)? {
            Node::Array(items) => Ok(items),
            other => Err(self.schema(field, format!("expected array, found {}", other.kind()))),
        }
    }

    fn finish(self, lenient: bool) -> Result<(), DatasetError> {
        match self.entries.first() {
            Some((k, _)) if !lenient => Err(self.schema(k, "unknown field")),
            _ => Ok(()),
        }
    }
}

impl DocReader {
    fn document(&mut self, root: Node) -> Result<Dataset, DatasetError> {
        let mut top = Fields::new("document".into(), root, "<root>")?;
        let metadata = match top.take("metadata") {
            None => Map::new(),
            Some(node @ Node::Object(_)) => match node.into_value() {
                Ok(Value::Object(map)) => map,
                Ok(_) => unreachable!("object node converts to object value"),
                Err(reason) => return Err(top.schema("metadata", reason)),
            },
            Some(other) => {
                return Err(top.schema(
                    "metadata",
                    format!("expected object, found {}", other.kind()),
                ))
            }
        };
        let raw_scenarios = top.array("scenarios")?;
        top.finish(self.options.lenient)?;

        let scenarios = raw_scenarios
            .into_iter()
            .enumerate()
            .map(|(i, node)| self.scenario(i, node))
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(metadata, scenarios)
    }

    fn scenario(&mut self, position: usize, node: Node) -> Result<Scenario, DatasetError> {
        // Resolve the id first so every later error can name the scenario.
        let mut fields = Fields::new(format!("scenario #{position}"), node, "scenarios")?;
        let id = fields.string("id")?;
        fields.location = format!("scenario `{id}`");
        let context = fields.string("context")?;
        let question = fields.string("question")?;
        let attribute_name = fields.string("attribute")?;
        let primary_attribute = attribute_name
            .parse::<Attribute>()
            .map_err(|e| fields.schema("attribute", e.to_string()))?;
        let raw_choices = fields.array("choices")?;
        let choices = raw_choices
            .into_iter()
            .enumerate()
            .map(|(ci, c)| self.choice(&id, ci, c))
            .collect::<Result<Vec<_>, _>>()?;
        fields.finish(self.options.lenient)?;
        Ok(Scenario {
            id,
            context,
            question,
            primary_attribute,
            choices,
        })
    }

    fn choice(
        &mut self,
        scenario_id: &str,
        index: usize,
        node: Node,
    ) -> Result<Choice, DatasetError> {
        let location = format!("scenario `{scenario_id}` choice {index}");
        let mut fields = Fields::new(location, node, "choices")?;
        let text = fields.string("text")?;
        let labels = match fields.take("labels") {
            None => BTreeMap::new(),
            Some(node) => {
                let mut label_fields = Fields::new(fields.location.clone(), node, "labels")
                    .map_err(|e| match e {
                        DatasetError::Schema {
                            location,
                            field,
                            reason,
                        } if reason == "duplicate key" => DatasetError::Invariant {
                            scenario: scenario_id.to_string(),
                            message: format!(
                                "{location}: attribute `{field}` labeled more than once"
                            ),
                        },
                        other => other,
                    })?;
                let mut labels = BTreeMap::new();
                for (name, value) in std::mem::take(&mut label_fields.entries) {
                    let attribute = name
                        .parse::<Attribute>()
                        .map_err(|e| label_fields.schema("labels", e.to_string()))?;
                    let level = match value {
                        Node::String(s) => s
                            .parse::<Level>()
                            .map_err(|e| label_fields.schema("labels", e.to_string()))?,
                        other => {
                            return Err(label_fields.schema(
                                "labels",
                                format!("expected \"high\" or \"low\", found {}", other.kind()),
                            ))
                        }
                    };
                    labels.insert(attribute, level);
                }
                labels
            }
        };
        fields.finish(self.options.lenient)?;
        Ok(Choice { text, labels })
    }
}
