//! The reasoning graph: a typed provenance DAG over an execution trajectory.
//!
//! Node and edge types follow a small fixed schema. The only structure the
//! checker relies on is the INVOKE signature: one or more decision nodes
//! pointing at a single observation node, which lets the tool-call sequence
//! be extracted programmatically. DERIVE and EXTRACT edges record the agent's
//! subjective information flow and may carry manipulated attributions; they
//! are validated structurally but never trusted for detection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ToolCatalog;

/// Maximum length of a node's content label, in characters.
pub const MAX_CONTENT_CHARS: usize = 80;

/// Clips text to `max_chars` characters, marking truncation with an
/// ellipsis. Used wherever free text becomes a node content label.
pub fn clip_chars(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let mut out: String = text.chars().take(max_chars.saturating_sub(1)).collect();
    out.push('\u{2026}');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    /// External input such as the user prompt. Trusted.
    Input,
    /// A tool's return value. Untrusted.
    Observation,
    /// The agent's active choice: a tool selection or a parameter value.
    Decision,
    /// A reasoning product (extracted data, inferred value).
    Intermediate,
}

impl NodeType {
    /// The intrinsic trust level before provenance resolution.
    pub fn base_trust(self) -> TrustLevel {
        match self {
            NodeType::Input => TrustLevel::Trusted,
            NodeType::Observation => TrustLevel::Untrusted,
            NodeType::Decision | NodeType::Intermediate => TrustLevel::Inherited,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeType::Input => "input",
            NodeType::Observation => "observation",
            NodeType::Decision => "decision",
            NodeType::Intermediate => "intermediate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustLevel {
    Trusted,
    Untrusted,
    /// Resolved by provenance closure: untrusted iff any ancestor is an
    /// observation node.
    Inherited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    /// Reasoning, transformation, or decision-making.
    #[serde(rename = "DERIVE")]
    Derive,
    /// Extraction of data from an observation.
    #[serde(rename = "EXTRACT")]
    Extract,
    /// Execution of a tool: decision sources, observation target.
    #[serde(rename = "INVOKE")]
    Invoke,
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EdgeType::Derive => "DERIVE",
            EdgeType::Extract => "EXTRACT",
            EdgeType::Invoke => "INVOKE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    /// Brief label, at most [`MAX_CONTENT_CHARS`] characters.
    pub content: String,
    /// The trajectory step this node refers to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_ref: Option<usize>,
    /// For parameter decision nodes: which call parameter this node decides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_name: Option<String>,
}

impl GraphNode {
    pub fn new(id: impl Into<String>, node_type: NodeType, content: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            node_type,
            content: content.into(),
            step_ref: None,
            param_name: None,
        }
    }

    pub fn with_step_ref(mut self, step: usize) -> Self {
        self.step_ref = Some(step);
        self
    }

    pub fn with_param_name(mut self, name: impl Into<String>) -> Self {
        self.param_name = Some(name.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
}

impl GraphEdge {
    pub fn new(source: impl Into<String>, target: impl Into<String>, edge_type: EdgeType) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            edge_type,
        }
    }
}

/// The provenance DAG. Stored as plain lists so that malformed graphs
/// (duplicate ids, dangling edges) can be represented and then reported by
/// [`ReasoningGraph::validate`] instead of being silently repaired.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// One extracted tool invocation: the Eq-signature group of decision nodes
/// around a single observation node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeRecord {
    pub tool_name: String,
    /// Parameter name to deciding node id, for annotated decision sources.
    pub param_decisions: BTreeMap<String, String>,
    pub observation_node: String,
    /// Position in the extracted sequence, 1-based.
    pub order_key: usize,
    /// Trajectory step the observation node refers to, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_ref: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateNodeId,
    DanglingEdge,
    ContentOverlength,
    InvokeSourceNotDecision,
    InvokeTargetNotObservation,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.detail)
    }
}

/// Outcome of structural validation. Violations are data, not failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Lint-level findings that do not invalidate the graph, e.g. a DERIVE
    /// edge leaving an observation without an intervening EXTRACT.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.is_ok() {
            "ok".to_string()
        } else {
            self.violations
                .iter()
                .map(|v| v.detail.clone())
                .collect::<Vec<_>>()
                .join("; ")
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("graph is invalid: {0}")]
    Invalid(String),
    #[error(
        "ambiguous tool decision for observation `{observation}`: {matches} source decision(s) match catalog tool names"
    )]
    AmbiguousTool { observation: String, matches: usize },
    #[error("graph parse error: {0}")]
    Parse(String),
}

impl ReasoningGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(json: &str) -> Result<Self, GraphError> {
        serde_json::from_str(json).map_err(|e| GraphError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization")
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn adjacency(&self) -> HashMap<&str, Vec<&str>> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for node in &self.nodes {
            adj.entry(node.id.as_str()).or_default();
        }
        for edge in &self.edges {
            adj.entry(edge.source.as_str())
                .or_default()
                .push(edge.target.as_str());
        }
        adj
    }

    /// Structural validation against all graph invariants. Pure and
    /// idempotent; every violation names the offending node or edge.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen: HashSet<&str> = HashSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.as_str()) {
                report.violations.push(Violation {
                    kind: ViolationKind::DuplicateNodeId,
                    detail: format!("duplicate node id: {}", node.id),
                });
            }
            if node.content.chars().count() > MAX_CONTENT_CHARS {
                report.violations.push(Violation {
                    kind: ViolationKind::ContentOverlength,
                    detail: format!(
                        "content exceeds {} chars on node {}",
                        MAX_CONTENT_CHARS, node.id
                    ),
                });
            }
        }
        let types: HashMap<&str, NodeType> = self
            .nodes
            .iter()
            .map(|n| (n.id.as_str(), n.node_type))
            .collect();
        for edge in &self.edges {
            let mut dangling = false;
            for end in [&edge.source, &edge.target] {
                if !types.contains_key(end.as_str()) {
                    let side = if end == &edge.source { "source" } else { "target" };
                    report.violations.push(Violation {
                        kind: ViolationKind::DanglingEdge,
                        detail: format!(
                            "dangling {side} `{end}` on edge {}->{}",
                            edge.source, edge.target
                        ),
                    });
                    dangling = true;
                }
            }
            if dangling {
                continue;
            }
            if edge.edge_type == EdgeType::Invoke {
                if types[edge.source.as_str()] != NodeType::Decision {
                    report.violations.push(Violation {
                        kind: ViolationKind::InvokeSourceNotDecision,
                        detail: format!(
                            "INVOKE source must be decision: {}->{}",
                            edge.source, edge.target
                        ),
                    });
                }
                if types[edge.target.as_str()] != NodeType::Observation {
                    report.violations.push(Violation {
                        kind: ViolationKind::InvokeTargetNotObservation,
                        detail: format!(
                            "INVOKE target must be observation: {}->{}",
                            edge.source, edge.target
                        ),
                    });
                }
            }
            if edge.edge_type == EdgeType::Derive
                && types.get(edge.source.as_str()) == Some(&NodeType::Observation)
            {
                report.warnings.push(format!(
                    "observation {} feeds DERIVE directly (should pass through EXTRACT): {}->{}",
                    edge.source, edge.source, edge.target
                ));
            }
        }
        if let Some(cycle) = self.find_cycle() {
            report.violations.push(Violation {
                kind: ViolationKind::Cycle,
                detail: format!("cycle: {}", cycle.join("\u{2192}")),
            });
        }
        report
    }

    /// Finds one cycle if any exists, returned as a closed node path.
    fn find_cycle(&self) -> Option<Vec<String>> {
        let adj = self.adjacency();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: HashMap<&str, u8> = HashMap::new();
        let mut stack: Vec<&str> = Vec::new();

        fn visit<'a>(
            node: &'a str,
            adj: &HashMap<&'a str, Vec<&'a str>>,
            state: &mut HashMap<&'a str, u8>,
            stack: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            state.insert(node, 1);
            stack.push(node);
            if let Some(nexts) = adj.get(node) {
                for next in nexts {
                    match state.get(next).copied().unwrap_or(0) {
                        0 => {
                            if let Some(c) = visit(next, adj, state, stack) {
                                return Some(c);
                            }
                        }
                        1 => {
                            let start = stack.iter().position(|n| n == next).unwrap_or(0);
                            let mut cycle: Vec<String> =
                                stack[start..].iter().map(|s| s.to_string()).collect();
                            cycle.push(next.to_string());
                            return Some(cycle);
                        }
                        _ => {}
                    }
                }
            }
            stack.pop();
            state.insert(node, 2);
            None
        }

        let mut ids: Vec<&str> = adj.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            if state.get(id).copied().unwrap_or(0) == 0 {
                if let Some(c) = visit(id, &adj, &mut state, &mut stack) {
                    return Some(c);
                }
            }
        }
        None
    }

    /// Resolves the effective trust level of a node: inputs are trusted,
    /// observations untrusted, and inherited nodes are untrusted iff any
    /// ancestor is an observation node.
    pub fn trust_closure(&self, node_id: &str) -> Result<TrustLevel, GraphError> {
        let node = self
            .node(node_id)
            .ok_or_else(|| GraphError::UnknownNode(node_id.to_string()))?;
        match node.node_type.base_trust() {
            TrustLevel::Inherited => {}
            level => return Ok(level),
        }
        // Reverse reachability over all edge types.
        let mut incoming: HashMap<&str, Vec<&str>> = HashMap::new();
        for edge in &self.edges {
            incoming
                .entry(edge.target.as_str())
                .or_default()
                .push(edge.source.as_str());
        }
        let types: HashMap<&str, NodeType> = self
            .nodes
            .iter()
            .map(|n| (n.id.as_str(), n.node_type))
            .collect();
        let mut stack = vec![node_id];
        let mut seen: HashSet<&str> = HashSet::new();
        while let Some(current) = stack.pop() {
            if !seen.insert(current) {
                continue;
            }
            for &parent in incoming.get(current).into_iter().flatten() {
                if types.get(parent) == Some(&NodeType::Observation) {
                    return Ok(TrustLevel::Untrusted);
                }
                stack.push(parent);
            }
        }
        Ok(TrustLevel::Trusted)
    }

    /// Extracts the ordered tool-call sequence from the INVOKE structure.
    ///
    /// One record per observation node with incoming INVOKE edges, ordered by
    /// the observation's `step_ref` (ties broken by node id, missing refs
    /// last). Within a group, the tool-name decision is the source whose
    /// content, after trimming an optional `tool:` prefix, exactly equals a
    /// catalog tool name; zero or several such sources signal a malformed or
    /// manipulated graph and are reported, not guessed.
    pub fn extract_invocations(
        &self,
        catalog: &ToolCatalog,
    ) -> Result<Vec<InvokeRecord>, GraphError> {
        let mut groups: BTreeMap<&str, Vec<&GraphNode>> = BTreeMap::new();
        for edge in &self.edges {
            if edge.edge_type != EdgeType::Invoke {
                continue;
            }
            let source = self
                .node(&edge.source)
                .ok_or_else(|| GraphError::UnknownNode(edge.source.clone()))?;
            // Target existence is guaranteed by validation; re-check anyway.
            self.node(&edge.target)
                .ok_or_else(|| GraphError::UnknownNode(edge.target.clone()))?;
            groups.entry(edge.target.as_str()).or_default().push(source);
        }

        let mut keyed: Vec<(Option<usize>, &str, Vec<&GraphNode>)> = groups
            .into_iter()
            .map(|(obs_id, sources)| {
                let step_ref = self.node(obs_id).and_then(|n| n.step_ref);
                (step_ref, obs_id, sources)
            })
            .collect();
        keyed.sort_by(|a, b| match (a.0, b.0) {
            (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.1.cmp(b.1)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.1.cmp(b.1),
        });

        let mut records = Vec::new();
        for (order, (step_ref, obs_id, sources)) in keyed.into_iter().enumerate() {
            let mut tool_matches: Vec<&GraphNode> = sources
                .iter()
                .copied()
                .filter(|n| {
                    let trimmed = n
                        .content
                        .trim()
                        .strip_prefix("tool:")
                        .map(str::trim)
                        .unwrap_or(n.content.trim());
                    catalog.contains(trimmed)
                })
                .collect();
            if tool_matches.len() != 1 {
                return Err(GraphError::AmbiguousTool {
                    observation: obs_id.to_string(),
                    matches: tool_matches.len(),
                });
            }
            let tool_node = tool_matches.pop().unwrap();
            let tool_name = tool_node
                .content
                .trim()
                .strip_prefix("tool:")
                .map(str::trim)
                .unwrap_or(tool_node.content.trim())
                .to_string();
            let mut param_decisions = BTreeMap::new();
            for source in sources {
                if source.id == tool_node.id {
                    continue;
                }
                if let Some(param) = &source.param_name {
                    param_decisions.insert(param.clone(), source.id.clone());
                }
            }
            records.push(InvokeRecord {
                tool_name,
                param_decisions,
                observation_node: obs_id.to_string(),
                order_key: order + 1,
                step_ref,
            });
        }
        Ok(records)
    }

    /// DOT rendering for human inspection.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph reasoning {\n  rankdir=LR;\n");
        for node in &self.nodes {
            let shape = match node.node_type {
                NodeType::Input => "house",
                NodeType::Observation => "box",
                NodeType::Decision => "ellipse",
                NodeType::Intermediate => "diamond",
            };
            out.push_str(&format!(
                "  \"{}\" [shape={}, label=\"{}\\n{}\"];\n",
                node.id,
                shape,
                node.node_type,
                node.content.replace('"', "'")
            ));
        }
        for edge in &self.edges {
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                edge.source, edge.target, edge.edge_type
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Convenience wrapper matching the operation naming used elsewhere.
pub fn validate_graph(graph: &ReasoningGraph) -> ValidationReport {
    graph.validate()
}
