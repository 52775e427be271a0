use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::backend::{
    Backend, BackendError, HttpBackend, HttpConfig, MockBackend, MockPolicy, DEFAULT_MAX_TOKENS,
    GREEDY_TEMPERATURE, SAMPLING_TEMPERATURE,
};
use crate::dataset::{Attribute, Dataset};
use crate::prompts::AlignmentTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Unaligned,
    Aligned,
    AlignedSc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unaligned => "unaligned",
            Mode::Aligned => "aligned",
            Mode::AlignedSc => "aligned-sc",
        }
    }

    pub fn default_temperature(self) -> f64 {
        match self {
            Mode::AlignedSc => SAMPLING_TEMPERATURE,
            Mode::Unaligned | Mode::Aligned => GREEDY_TEMPERATURE,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unaligned" => Ok(Mode::Unaligned),
            "aligned" => Ok(Mode::Aligned),
            "aligned-sc" | "aligned_sc" => Ok(Mode::AlignedSc),
            other => Err(RunError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http { base_url: String, model: String },
    Mock { policy: MockPolicy },
}

impl BackendSpec {
    /// Parses `--backend`: either an `http(s)://` URL or `mock:POLICY` where
    /// POLICY is `oracle`, `adversarial`, `fixed=K`, `random=SEED` or
    /// `scripted=PATH` (a JSON object from request fingerprint to text).
    pub fn parse(backend: &str, model: Option<&str>) -> Result<Self, RunError> {
        if let Some(policy) = backend.strip_prefix("mock:") {
            let (name, arg) = match policy.split_once(['=', ':']) {
                Some((n, a)) => (n, Some(a)),
                None => (policy, None),
            };
            let bad = |what: &str| RunError::Config(format!("mock policy `{policy}`: {what}"));
            let policy = match (name, arg) {
                ("oracle", None) => MockPolicy::Oracle,
                ("adversarial", None) => MockPolicy::Adversarial,
                ("fixed", Some(k)) => {
                    MockPolicy::FixedIndex(k.parse().map_err(|_| bad("expected an index"))?)
                }
                ("random" | "seeded", Some(s)) => MockPolicy::SeededRandom(
                    s.parse().map_err(|_| bad("expected an integer seed"))?,
                ),
                ("scripted", Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
                        path: PathBuf::from(path),
                        source,
                    })?;
                    MockPolicy::Scripted(
                        serde_json::from_str(&text)
                            .map_err(|e| bad(&format!("bad script file: {e}")))?,
                    )
                }
                _ => return Err(bad("unknown policy")),
            };
            return Ok(BackendSpec::Mock { policy });
        }
        if backend.starts_with("http://") || backend.starts_with("https://") {
            return Ok(BackendSpec::Http {
                base_url: backend.trim_end_matches('/').to_string(),
                model: model.unwrap_or_default().to_string(),
            });
        }
        Err(RunError::Config(format!(
            "backend `{backend}` is neither an http(s) URL nor mock:POLICY"
        )))
    }

    /// Builds the backend. HTTP specs without a model name ask the server.
    pub fn build(&self, dataset: &Dataset) -> Result<Box<dyn Backend>, BackendError> {
        match self {
            BackendSpec::Mock { policy } => Ok(Box::new(
                MockBackend::new(policy.clone()).with_labels(dataset),
            )),
            BackendSpec::Http { base_url, model } => {
                let mut config = HttpConfig::new(base_url.clone(), model.clone());
                if config.model.is_empty() {
                    config.model = crate::backend::probe(&config)?;
                }
                Ok(Box::new(HttpBackend::new(config)?))
            }
        }
    }
}

/// A fully resolved run configuration. Echoed to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub lenient: bool,
    pub backend: BackendSpec,
    pub mode: Mode,
    pub targets: Vec<AlignmentTarget>,
    pub n_pos: u32,
    pub n_neg: u32,
    /// Overrides the mode's default temperature.
    pub temperature: Option<f64>,
    pub max_tokens: u32,
    pub runs: u32,
    pub base_seed: u64,
    pub concurrency: usize,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub gzip: bool,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, backend: BackendSpec, mode: Mode) -> Self {
        RunConfig {
            dataset: dataset.into(),
            lenient: false,
            backend,
            mode,
            targets: AlignmentTarget::all(),
            n_pos: 5,
            n_neg: 5,
            temperature: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            runs: 1,
            base_seed: 0,
            concurrency: 4,
            out: None,
            gzip: false,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
            .unwrap_or_else(|| self.mode.default_temperature())
    }

    /// Attributes evaluated by the run.
    pub fn attributes(&self) -> BTreeSet<Attribute> {
        self.targets.iter().map(|t| t.attribute).collect()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let err = |m: &str| Err(RunError::Config(m.to_string()));
        if self.runs == 0 {
            return err("runs must be at least 1");
        }
        if self.concurrency == 0 {
            return err("concurrency must be at least 1");
        }
        if self.targets.is_empty() {
            return err("no alignment targets selected");
        }
        if self.targets.iter().collect::<BTreeSet<_>>().len() != self.targets.len() {
            return err("alignment targets repeat");
        }
        if self.mode == Mode::AlignedSc && self.n_pos == 0 {
            return err("aligned-sc needs at least one positive sample");
        }
        if self.max_tokens == 0 {
            return err("max_tokens must be at least 1");
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return err("temperature must be a non-negative number");
            }
        }
        if let BackendSpec::Http { base_url, .. } = &self.backend {
            if base_url.is_empty() {
                return err("empty backend URL");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }
}

/// Distinct `(n_pos, n_neg)` cells of an ablation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationGrid(Vec<(u32, u32)>);

impl AblationGrid {
    pub fn new(cells: Vec<(u32, u32)>) -> Result<Self, RunError> {
        if cells.is_empty() {
            return Err(RunError::Config("ablation grid is empty".into()));
        }
        if cells.iter().collect::<BTreeSet<_>>().len() != cells.len() {
            return Err(RunError::Config("ablation grid has repeated cells".into()));
        }
        if cells.iter().any(|&(p, _)| p == 0) {
            return Err(RunError::Config(
                "every ablation cell needs at least one positive sample".into(),
            ));
        }
        Ok(AblationGrid(cells))
    }

    /// Parses `1/0,3/3,5/5`.
    pub fn parse(spec: &str) -> Result<Self, RunError> {
        let cells = spec
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|cell| {
                let (p, n) = cell.trim().split_once('/').ok_or_else(|| {
                    RunError::Config(format!("ablation cell `{cell}` is not POS/NEG"))
                })?;
                let num = |s: &str| {
                    s.trim().parse::<u32>().map_err(|_| {
                        RunError::Config(format!("ablation cell `{cell}` is not POS/NEG"))
                    })
                };
                Ok((num(p)?, num(n)?))
            })
            .collect::<Result<Vec<_>, RunError>>()?;
        AblationGrid::new(cells)
    }

    /// One, three and five positives alone, then paired with as many negatives.
    pub fn standard() -> Self {
        AblationGrid(vec![(1, 0), (3, 0), (5, 0), (1, 1), (3, 3), (5, 5)])
    }

    pub fn cells(&self) -> &[(u32, u32)] {
        &self.0
    }

    pub fn max_pos(&self) -> u32 {
        self.0.iter().map(|c| c.0).max().unwrap_or(0)
    }

    pub fn max_neg(&self) -> u32 {
        self.0.iter().map(|c| c.1).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_spec_parsing() {
        assert_eq!(
            BackendSpec::parse("mock:oracle", None).unwrap(),
            BackendSpec::Mock {
                policy: MockPolicy::Oracle
            }
        );
        assert_eq!(
            BackendSpec::parse("mock:fixed=1", None).unwrap(),
            BackendSpec::Mock {
                policy: MockPolicy::FixedIndex(1)
            }
        );
        assert_eq!(
            BackendSpec::parse("mock:random=7", None).unwrap(),
            BackendSpec::Mock {
                policy: MockPolicy::SeededRandom(7)
            }
        );
        assert_eq!(
            BackendSpec::parse("http://localhost:8000/", Some("m")).unwrap(),
            BackendSpec::Http {
                base_url: "http://localhost:8000".into(),
                model: "m".into()
            }
        );
        assert!(BackendSpec::parse("mock:psychic", None).is_err());
        assert!(BackendSpec::parse("mock:fixed=x", None).is_err());
        assert!(BackendSpec::parse("ftp://x", None).is_err());
    }

    #[test]
    fn config_validation() {
        let mock = BackendSpec::Mock {
            policy: MockPolicy::Oracle,
        };
        let mut c = RunConfig::new("d.json", mock, Mode::AlignedSc);
        assert!(c.validate().is_ok());
        assert_eq!(c.temperature(), 0.7);
        c.n_pos = 0;
        assert!(c.validate().is_err());
        c.mode = Mode::Aligned;
        assert!(c.validate().is_ok());
        assert_eq!(c.temperature(), 0.0);
        c.runs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = RunConfig::new(
            "d.json",
            BackendSpec::Mock {
                policy: MockPolicy::SeededRandom(3),
            },
            Mode::Unaligned,
        );
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn grid_parsing() {
        let g = AblationGrid::parse("1/0, 3/3,5/5").unwrap();
        assert_eq!(g.cells(), &[(1, 0), (3, 3), (5, 5)]);
        assert_eq!((g.max_pos(), g.max_neg()), (5, 5));
        assert!(AblationGrid::parse("").is_err());
        assert!(AblationGrid::parse("1/0,1/0").is_err());
        assert!(AblationGrid::parse("0/1").is_err());
        assert!(AblationGrid::parse("3").is_err());
    }
}
