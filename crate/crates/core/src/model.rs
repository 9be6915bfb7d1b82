//! Canonical data model: tool catalogs, trajectories, and raw observation
//! storage shared by every other module.
//!
//! Observations are kept byte-exact as the tools returned them. The checker's
//! parameter-source layer matches against this raw text, never against any
//! derived summary, so nothing in this module interprets tool output.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default name prefixes that classify a tool as write-class.
pub const DEFAULT_WRITE_PREFIXES: &[&str] =
    &["send_", "update_", "delete_", "create_", "transfer_", "book_"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("missing required field `{field}` at line {line}")]
    MissingField { line: usize, field: String },
    #[error("duplicate step index {index} at line {line}")]
    DuplicateIndex { line: usize, index: usize },
    #[error("non-contiguous step index at line {line}: expected {expected}, found {found}")]
    NonContiguousIndex {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown tool `{0}` (not declared in the catalog)")]
    UnknownTool(String),
    #[error("duplicate tool `{0}` in catalog")]
    DuplicateTool(String),
    #[error("empty user prompt")]
    EmptyUserPrompt,
    #[error("tool call has an empty tool name")]
    EmptyToolName,
}

/// One declared parameter of a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub required: bool,
}

/// A tool available to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ParamSpec>,
    /// Whether the tool mutates external state. Resolved at catalog load:
    /// an explicit flag in the catalog file wins, otherwise the configured
    /// write prefixes decide.
    pub write_class: bool,
}

impl ToolSpec {
    /// Names of all parameters marked required.
    pub fn required_params(&self) -> Vec<&str> {
        self.parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect()
    }
}

/// Classifies a tool name using the configured write prefixes.
pub fn is_write_prefixed(name: &str, prefixes: &[String]) -> bool {
    prefixes.iter().any(|p| name.starts_with(p.as_str()))
}

#[derive(Debug, Clone, Deserialize)]
struct ToolSpecFile {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    parameters: Vec<ParamSpec>,
    #[serde(default)]
    write_class: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
struct CatalogFile {
    tools: Vec<ToolSpecFile>,
}

/// The set of tools the agent may be offered. Lookup by name is total over
/// declared tools; an unknown name is a reportable error, never a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ToolCatalog {
    tools: IndexMap<String, ToolSpec>,
}

impl ToolCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a catalog from specs, rejecting duplicate names.
    pub fn from_specs(specs: Vec<ToolSpec>) -> Result<Self, ModelError> {
        let mut tools = IndexMap::new();
        for spec in specs {
            if tools.contains_key(&spec.name) {
                return Err(ModelError::DuplicateTool(spec.name));
            }
            tools.insert(spec.name.clone(), spec);
        }
        Ok(Self { tools })
    }

    /// Parses the catalog JSON format, resolving `write_class` per tool:
    /// explicit file flag first, configured prefixes otherwise.
    pub fn from_json_with_prefixes(json: &str, prefixes: &[String]) -> Result<Self, ModelError> {
        let file: CatalogFile = serde_json::from_str(json).map_err(|e| ModelError::Parse {
            line: e.line(),
            detail: format!("catalog: {e}"),
        })?;
        let specs = file
            .tools
            .into_iter()
            .map(|t| {
                let write_class = t
                    .write_class
                    .unwrap_or_else(|| is_write_prefixed(&t.name, prefixes));
                ToolSpec {
                    name: t.name,
                    description: t.description,
                    parameters: t.parameters,
                    write_class,
                }
            })
            .collect();
        Self::from_specs(specs)
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let prefixes: Vec<String> = DEFAULT_WRITE_PREFIXES.iter().map(|s| s.to_string()).collect();
        Self::from_json_with_prefixes(json, &prefixes)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Total lookup: unknown names are an error, not a silent default.
    pub fn get(&self, name: &str) -> Result<&ToolSpec, ModelError> {
        self.tools
            .get(name)
            .ok_or_else(|| ModelError::UnknownTool(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(|s| s.as_str())
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            tools: Vec<&'a ToolSpec>,
        }
        serde_json::to_string_pretty(&Out {
            tools: self.tools.values().collect(),
        })
        .expect("catalog serialization")
    }
}

/// A single tool call: name plus string-valued arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: IndexMap<String, String>,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            arguments: IndexMap::new(),
        }
    }

    pub fn with_arg(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.arguments.insert(name.into(), value.into());
        self
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args = self
            .arguments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ");
        write!(f, "{}({})", self.tool_name, args)
    }
}

/// One executed step: the agent's thought, the call it made, and the raw
/// observation the tool returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    /// Free-form reasoning. Optional in the file format.
    #[serde(default)]
    pub thought: String,
    pub action: ToolCall,
    /// Raw tool return, stored byte-exact.
    pub observation: String,
}

/// An ordered record of an agent run; the ground truth for all checking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_prompt: String,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Deserialize)]
struct HeaderLine {
    user_prompt: String,
}

impl Trajectory {
    pub fn new(user_prompt: impl Into<String>) -> Self {
        Self {
            user_prompt: user_prompt.into(),
            steps: Vec::new(),
        }
    }

    /// Appends a step, assigning the next contiguous index.
    pub fn push_step(&mut self, thought: impl Into<String>, action: ToolCall, observation: impl Into<String>) {
        self.steps.push(TrajectoryStep {
            index: self.steps.len() + 1,
            thought: thought.into(),
            action,
            observation: observation.into(),
        });
    }

    /// Parses the JSONL trajectory format: a header line carrying the user
    /// prompt, then one step object per line. Indices must run 1..n in file
    /// order.
    pub fn from_jsonl(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ModelError::MissingField {
            line: 1,
            field: "user_prompt".to_string(),
        })?;
        let header: HeaderLine = serde_json::from_str(header).map_err(|e| ModelError::Parse {
            line: 1,
            detail: format!("header: {e}"),
        })?;
        if header.user_prompt.is_empty() {
            return Err(ModelError::EmptyUserPrompt);
        }
        let mut trajectory = Trajectory::new(header.user_prompt);
        let mut seen = BTreeSet::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let step: TrajectoryStep =
                serde_json::from_str(line).map_err(|e| match e.classify() {
                    serde_json::error::Category::Data if e.to_string().contains("missing field") => {
                        let field = e
                            .to_string()
                            .split('`')
                            .nth(1)
                            .unwrap_or("unknown")
                            .to_string();
                        ModelError::MissingField {
                            line: line_no,
                            field,
                        }
                    }
                    _ => ModelError::Parse {
                        line: line_no,
                        detail: e.to_string(),
                    },
                })?;
            if step.action.tool_name.is_empty() {
                return Err(ModelError::EmptyToolName);
            }
            if !seen.insert(step.index) {
                return Err(ModelError::DuplicateIndex {
                    line: line_no,
                    index: step.index,
                });
            }
            let expected = trajectory.steps.len() + 1;
            if step.index != expected {
                return Err(ModelError::NonContiguousIndex {
                    line: line_no,
                    expected,
                    found: step.index,
                });
            }
            trajectory.steps.push(step);
        }
        Ok(trajectory)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    /// Canonical serialization: compact JSON, one record per line, fields in
    /// declaration order. `from_jsonl(to_jsonl(t)) == t` and a second
    /// round-trip is byte-stable.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &serde_json::to_string(&serde_json::json!({ "user_prompt": self.user_prompt }))
                .expect("header serialization"),
        );
        out.push('\n');
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step serialization"));
            out.push('\n');
        }
        out
    }

    /// Looks up a step by its 1-based index.
    pub fn step(&self, index: usize) -> Option<&TrajectoryStep> {
        self.steps.get(index.checked_sub(1)?)
    }
}

/// Loads a trajectory from a JSONL file.
pub fn load_trajectory(path: &Path) -> Result<Trajectory, ModelError> {
    Trajectory::load(path)
}

/// Every step whose tool is in `tool_names`, in trajectory order, with the
/// raw observation text. An empty result is valid.
pub fn observation_corpus<'a>(
    trajectory: &'a Trajectory,
    tool_names: &BTreeSet<String>,
) -> Vec<(usize, &'a str)> {
    trajectory
        .steps
        .iter()
        .filter(|s| tool_names.contains(&s.action.tool_name))
        .map(|s| (s.index, s.observation.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_jsonl() -> String {
        concat!(
            "{\"user_prompt\":\"book a flight\"}\n",
            "{\"index\":1,\"thought\":\"search first\",\"action\":{\"tool_name\":\"search_flights\",\"arguments\":{\"dest\":\"SFO\"}},\"observation\":\"FL-456 and FL-789 available\"}\n",
            "{\"index\":2,\"thought\":\"book it\",\"action\":{\"tool_name\":\"book_flight\",\"arguments\":{\"flight_id\":\"FL-456\"}},\"observation\":\"booked\"}\n",
        )
        .to_string()
    }

    #[test]
    fn parses_and_round_trips() {
        let text = sample_jsonl();
        let t = Trajectory::from_jsonl(&text).unwrap();
        assert_eq!(t.steps.len(), 2);
        assert_eq!(t.steps[1].action.tool_name, "book_flight");
        let out = t.to_jsonl();
        assert_eq!(out, text);
        let t2 = Trajectory::from_jsonl(&out).unwrap();
        assert_eq!(t2, t);
        assert_eq!(t2.to_jsonl(), out);
    }

    #[test]
    fn empty_steps_is_valid() {
        let t = Trajectory::from_jsonl("{\"user_prompt\":\"do nothing\"}\n").unwrap();
        assert!(t.steps.is_empty());
    }

    #[test]
    fn rejects_non_contiguous_indices() {
        let text = concat!(
            "{\"user_prompt\":\"p\"}\n",
            "{\"index\":1,\"action\":{\"tool_name\":\"a\",\"arguments\":{}},\"observation\":\"\"}\n",
            "{\"index\":3,\"action\":{\"tool_name\":\"b\",\"arguments\":{}},\"observation\":\"\"}\n",
        );
        let err = Trajectory::from_jsonl(text).unwrap_err();
        match err {
            ModelError::NonContiguousIndex { line, expected, found } => {
                assert_eq!(line, 3);
                assert_eq!(expected, 2);
                assert_eq!(found, 3);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn rejects_duplicate_index() {
        let text = concat!(
            "{\"user_prompt\":\"p\"}\n",
            "{\"index\":1,\"action\":{\"tool_name\":\"a\",\"arguments\":{}},\"observation\":\"\"}\n",
            "{\"index\":1,\"action\":{\"tool_name\":\"b\",\"arguments\":{}},\"observation\":\"\"}\n",
        );
        assert!(matches!(
            Trajectory::from_jsonl(text),
            Err(ModelError::DuplicateIndex { line: 3, index: 1 })
        ));
    }

    #[test]
    fn rejects_missing_field() {
        let text = concat!(
            "{\"user_prompt\":\"p\"}\n",
            "{\"index\":1,\"observation\":\"\"}\n",
        );
        assert!(matches!(
            Trajectory::from_jsonl(text),
            Err(ModelError::MissingField { line: 2, .. })
        ));
    }

    #[test]
    fn thought_is_optional() {
        let text = concat!(
            "{\"user_prompt\":\"p\"}\n",
            "{\"index\":1,\"action\":{\"tool_name\":\"a\",\"arguments\":{}},\"observation\":\"obs\"}\n",
        );
        let t = Trajectory::from_jsonl(text).unwrap();
        assert_eq!(t.steps[0].thought, "");
    }

    #[test]
    fn corpus_filters_by_tool_and_preserves_order() {
        let t = Trajectory::from_jsonl(&sample_jsonl()).unwrap();
        let set: BTreeSet<String> = ["search_flights".to_string()].into_iter().collect();
        let corpus = observation_corpus(&t, &set);
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].0, 1);
        assert!(corpus[0].1.contains("FL-456") && corpus[0].1.contains("FL-789"));
        assert!(observation_corpus(&t, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn write_class_resolution() {
        let json = r#"{"tools":[
            {"name":"book_flight","description":"","parameters":[]},
            {"name":"search_flights","description":"","parameters":[]},
            {"name":"star_repo","description":"","parameters":[],"write_class":true},
            {"name":"book_keeping_report","description":"","parameters":[],"write_class":false}
        ]}"#;
        let catalog = ToolCatalog::from_json(json).unwrap();
        assert!(catalog.get("book_flight").unwrap().write_class);
        assert!(!catalog.get("search_flights").unwrap().write_class);
        assert!(catalog.get("star_repo").unwrap().write_class);
        // explicit flag overrides the prefix default in both directions
        assert!(!catalog.get("book_keeping_report").unwrap().write_class);
        assert!(matches!(
            catalog.get("missing"),
            Err(ModelError::UnknownTool(_))
        ));
    }

    #[test]
    fn catalog_rejects_duplicates() {
        let json = r#"{"tools":[{"name":"a"},{"name":"a"}]}"#;
        assert!(matches!(
            ToolCatalog::from_json(json),
            Err(ModelError::DuplicateTool(_))
        ));
    }
}
