//! Extraction of a `(reasoning, answer index)` decision from raw model text.
//!
//! Routes, in priority order:
//!
//! 1. `strict_json`: the whole (trimmed) text is a JSON object.
//! 2. `embedded_json`: the last well-formed JSON object found anywhere in the
//!    text, code fences included, that carries an answer key.
//! 3. `pattern_fallback`: the last `(k)` following a cue phrase such as
//!    "my answer is" or "choose option".
//!
//! An object that carries an answer key is authoritative: if its answer is
//! unusable the error is returned and later routes are not consulted. Keys are
//! matched case-insensitively.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRoute {
    StrictJson,
    EmbeddedJson,
    PatternFallback,
}

impl ExtractionRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionRoute::StrictJson => "strict_json",
            ExtractionRoute::EmbeddedJson => "embedded_json",
            ExtractionRoute::PatternFallback => "pattern_fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDecision {
    pub reasoning: String,
    pub answer_index: usize,
    pub extraction_route: ExtractionRoute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "category", content = "value", rename_all = "snake_case")]
pub enum ParseErrorKind {
    NoJsonFound,
    MalformedJson,
    MissingAnswerKey,
    NonIntegerAnswer,
    IndexOutOfRange(i64),
    Empty,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::NoJsonFound => "no_json_found",
            ParseErrorKind::MalformedJson => "malformed_json",
            ParseErrorKind::MissingAnswerKey => "missing_answer_key",
            ParseErrorKind::NonIntegerAnswer => "non_integer_answer",
            ParseErrorKind::IndexOutOfRange(_) => "index_out_of_range",
            ParseErrorKind::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub raw_excerpt: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ParseErrorKind::IndexOutOfRange(k) => write!(f, "answer index {k} out of range"),
            kind => f.write_str(kind.as_str()),
        }?;
        write!(f, " in {:?}", self.raw_excerpt)
    }
}

impl std::error::Error for ParseError {}

/// Either outcome of [`parse`], in a form that serializes into run logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseOutcome {
    Parsed(ParsedDecision),
    Failed(ParseError),
}

impl ParseOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            ParseOutcome::Parsed(d) => d.extraction_route.as_str(),
            ParseOutcome::Failed(e) => e.kind.as_str(),
        }
    }

    pub fn decision(&self) -> Option<&ParsedDecision> {
        match self {
            ParseOutcome::Parsed(d) => Some(d),
            ParseOutcome::Failed(_) => None,
        }
    }
}

impl From<Result<ParsedDecision, ParseError>> for ParseOutcome {
    fn from(r: Result<ParsedDecision, ParseError>) -> Self {
        match r {
            Ok(d) => ParseOutcome::Parsed(d),
            Err(e) => ParseOutcome::Failed(e),
        }
    }
}

const EXCERPT_CHARS: usize = 200;

fn excerpt(text: &str) -> String {
    text.chars().take(EXCERPT_CHARS).collect()
}

fn cue_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(?:answer is|choose option|my answer)[^()]{0,40}?\((\d+)\)")
            .expect("valid regex")
    })
}

fn lookup<'a>(object: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    object
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .map(|(_, v)| v)
}

fn check_index(k: i64, n_choices: usize, text: &str) -> Result<usize, ParseError> {
    if k >= 0 && (k as u64) < n_choices as u64 {
        Ok(k as usize)
    } else {
        Err(ParseError {
            kind: ParseErrorKind::IndexOutOfRange(k),
            raw_excerpt: excerpt(text),
        })
    }
}

/// Reads a decision out of an object known to carry an answer key.
fn decide_from_object(
    object: &Map<String, Value>,
    answer: &Value,
    route: ExtractionRoute,
    n_choices: usize,
    text: &str,
) -> Result<ParsedDecision, ParseError> {
    let k = match answer {
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(k), _) => k,
            (None, Some(_)) => i64::MAX,
            (None, None) => {
                return Err(ParseError {
                    kind: ParseErrorKind::NonIntegerAnswer,
                    raw_excerpt: excerpt(text),
                })
            }
        },
        _ => {
            return Err(ParseError {
                kind: ParseErrorKind::NonIntegerAnswer,
                raw_excerpt: excerpt(text),
            })
        }
    };
    let answer_index = check_index(k, n_choices, text)?;
    let reasoning = match lookup(object, "reasoning") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    Ok(ParsedDecision {
        reasoning,
        answer_index,
        extraction_route: route,
    })
}

/// Every top-level JSON object embedded in `text`, left to right. Objects
/// nested inside an earlier match are not reported separately.
fn embedded_objects(text: &str) -> Vec<Map<String, Value>> {
    let mut found = Vec::new();
    let mut pos = 0;
    while let Some(offset) = text[pos..].find('{') {
        let start = pos + offset;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                found.push(map);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    found
}

/// Extracts a decision from `text` for a scenario with `n_choices` choices.
pub fn parse(text: &str, n_choices: usize) -> Result<ParsedDecision, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::Empty,
            raw_excerpt: excerpt(text),
        });
    }

    if let Ok(Value::Object(object)) = serde_json::from_str::<Value>(trimmed) {
        if let Some(answer) = lookup(&object, "answer") {
            return decide_from_object(
                &object,
                answer,
                ExtractionRoute::StrictJson,
                n_choices,
                text,
            );
        }
    }

    let objects = embedded_objects(trimmed);
    if let Some((object, answer)) = objects
        .iter()
        .rev()
        .find_map(|o| lookup(o, "answer").map(|a| (o, a)))
    {
        return decide_from_object(
            object,
            answer,
            ExtractionRoute::EmbeddedJson,
            n_choices,
            text,
        );
    }

    if let Some(caps) = cue_pattern().captures_iter(trimmed).last() {
        let k = caps[1].parse::<i64>().unwrap_or(i64::MAX);
        let answer_index = check_index(k, n_choices, text)?;
        return Ok(ParsedDecision {
            reasoning: text.to_string(),
            answer_index,
            extraction_route: ExtractionRoute::PatternFallback,
        });
    }

    let kind = if !objects.is_empty() {
        ParseErrorKind::MissingAnswerKey
    } else if trimmed.contains('{') {
        ParseErrorKind::MalformedJson
    } else {
        ParseErrorKind::NoJsonFound
    };
    Err(ParseError {
        kind,
        raw_excerpt: excerpt(text),
    })
}

// --- fixture corpus ---------------------------------------------------------

/// One manifest entry. Exactly one of `expected_route` / `expected_error`
/// should be set; `expected_index` applies to successful parses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureExpectation {
    pub n_choices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_route: Option<ExtractionRoute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_error: Option<String>,
}

impl FixtureExpectation {
    fn expected_label(&self) -> String {
        match (&self.expected_route, &self.expected_error) {
            (Some(r), _) => r.as_str().to_string(),
            (None, Some(e)) => e.clone(),
            (None, None) => "<unspecified>".to_string(),
        }
    }

    fn matches(&self, outcome: &ParseOutcome) -> bool {
        match outcome {
            ParseOutcome::Parsed(d) => {
                self.expected_route == Some(d.extraction_route)
                    && self.expected_error.is_none()
                    && self.expected_index.is_none_or(|i| i == d.answer_index)
            }
            ParseOutcome::Failed(e) => {
                self.expected_route.is_none()
                    && self.expected_error.as_deref() == Some(e.kind.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixtureResult {
    pub file: String,
    pub expected: String,
    pub outcome: String,
    pub answer_index: Option<usize>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CorpusReport {
    pub results: Vec<FixtureResult>,
    /// Outcome label (route or error category) to count.
    pub counts: BTreeMap<String, usize>,
}

impl CorpusReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &FixtureResult> {
        self.results.iter().filter(|r| !r.matched)
    }

    pub fn all_matched(&self) -> bool {
        self.mismatches().next().is_none()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Parses every `.txt` fixture in `dir` and checks it against `manifest.json`.
///
/// Fixtures absent from the manifest, and manifest entries without a file,
/// are reported as mismatches.
pub fn parse_corpus(dir: &Path) -> Result<CorpusReport, CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: BTreeMap<String, FixtureExpectation> = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
        serde_json::from_str(&text).map_err(|source| CorpusError::Manifest {
            path: manifest_path.clone(),
            source,
        })?
    } else {
        BTreeMap::new()
    };

    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();

    let mut report = CorpusReport::default();
    for path in &files {
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let (expected, outcome) = match manifest.get(&name) {
            Some(exp) => (Some(exp), ParseOutcome::from(parse(&text, exp.n_choices))),
            // Without an expectation there is no choice count; use the minimum.
            None => (None, ParseOutcome::from(parse(&text, 2))),
        };
        *report
            .counts
            .entry(outcome.label().to_string())
            .or_default() += 1;
        report.results.push(FixtureResult {
            file: name,
            expected: expected.map_or_else(|| "<unlisted>".to_string(), |e| e.expected_label()),
            outcome: outcome.label().to_string(),
            answer_index: outcome.decision().map(|d| d.answer_index),
            matched: expected.is_some_and(|e| e.matches(&outcome)),
        });
    }
    for (name, exp) in &manifest {
        if !files.iter().any(|p| {
            p.file_name()
                .is_some_and(|f| f.to_string_lossy() == name.as_str())
        }) {
            report.results.push(FixtureResult {
                file: name.clone(),
                expected: exp.expected_label(),
                outcome: "<missing file>".to_string(),
                answer_index: None,
                matched: false,
            });
        }
    }
    Ok(report)
}
