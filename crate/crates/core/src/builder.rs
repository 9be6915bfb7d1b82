//! Interactive reasoning-graph construction over an LLM backend.
//!
//! Construction is a three-phase tool_use protocol: one generation call for
//! the first step, an extension call per subsequent step, and an optional
//! refinement call after each observation. The backend mutates a draft graph
//! through a fixed instruction set; mutations that would break hard
//! invariants are rejected with the reason fed back verbatim. The builder is
//! deliberately exposed to raw observation text, injections included —
//! manipulated attributions are recorded, not prevented, and surface later
//! during alignment.

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{ChatMessage, GatewayError, LlmResponse, LlmSession, ToolSchema};
use crate::graph::{
    clip_chars, EdgeType, GraphEdge, GraphNode, ReasoningGraph, ValidationReport,
    MAX_CONTENT_CHARS,
};
use crate::model::{ToolCatalog, Trajectory, TrajectoryStep};
use crate::prompts::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuilderPhase {
    Generation,
    Extension,
    Refinement,
}

impl BuilderPhase {
    fn template(self) -> &'static str {
        match self {
            BuilderPhase::Generation => "builder_generation",
            BuilderPhase::Extension => "builder_extension",
            BuilderPhase::Refinement => "builder_refinement",
        }
    }
}

/// The structured mutation instruction set exposed to the backend.
#[derive(Debug, Clone, PartialEq)]
pub enum BuilderToolRequest {
    AddNode(GraphNode),
    AddEdge(GraphEdge),
    UpdateNode { id: String, content: String },
    UpdateEdge { source: String, target: String, edge_type: EdgeType },
    ValidateGraph,
    SubmitGraph,
}

impl BuilderToolRequest {
    /// Parses a function-call payload. Unknown instructions and malformed
    /// argument objects are protocol errors, reported with the reason.
    pub fn parse(name: &str, arguments_json: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct EdgeArgs {
            source: String,
            target: String,
            #[serde(rename = "type")]
            edge_type: EdgeType,
        }
        #[derive(Deserialize)]
        struct UpdateNodeArgs {
            id: String,
            content: String,
        }
        let args = arguments_json.trim();
        let args = if args.is_empty() { "{}" } else { args };
        match name {
            "add_node" => serde_json::from_str::<GraphNode>(args)
                .map(BuilderToolRequest::AddNode)
                .map_err(|e| format!("add_node: {e}")),
            "add_edge" => serde_json::from_str::<EdgeArgs>(args)
                .map(|a| BuilderToolRequest::AddEdge(GraphEdge::new(a.source, a.target, a.edge_type)))
                .map_err(|e| format!("add_edge: {e}")),
            "update_node" => serde_json::from_str::<UpdateNodeArgs>(args)
                .map(|a| BuilderToolRequest::UpdateNode {
                    id: a.id,
                    content: a.content,
                })
                .map_err(|e| format!("update_node: {e}")),
            "update_edge" => serde_json::from_str::<EdgeArgs>(args)
                .map(|a| BuilderToolRequest::UpdateEdge {
                    source: a.source,
                    target: a.target,
                    edge_type: a.edge_type,
                })
                .map_err(|e| format!("update_edge: {e}")),
            "validate_graph" => Ok(BuilderToolRequest::ValidateGraph),
            "submit_graph" => Ok(BuilderToolRequest::SubmitGraph),
            other => Err(format!("unknown instruction `{other}`")),
        }
    }
}

/// JSON schemas for the six builder instructions, in wire format.
pub fn builder_tool_schemas() -> Vec<ToolSchema> {
    let node_params = serde_json::json!({
        "type": "object",
        "properties": {
            "id": {"type": "string"},
            "type": {"type": "string", "enum": ["input", "observation", "decision", "intermediate"]},
            "content": {"type": "string", "maxLength": MAX_CONTENT_CHARS},
            "step_ref": {"type": "integer"},
            "param_name": {"type": "string"}
        },
        "required": ["id", "type", "content"]
    });
    let edge_params = serde_json::json!({
        "type": "object",
        "properties": {
            "source": {"type": "string"},
            "target": {"type": "string"},
            "type": {"type": "string", "enum": ["DERIVE", "EXTRACT", "INVOKE"]}
        },
        "required": ["source", "target", "type"]
    });
    let empty = serde_json::json!({"type": "object", "properties": {}});
    vec![
        ToolSchema {
            name: "add_node".into(),
            description: "Add a node to the reasoning graph.".into(),
            parameters: node_params,
        },
        ToolSchema {
            name: "add_edge".into(),
            description: "Add a typed edge between existing nodes.".into(),
            parameters: edge_params.clone(),
        },
        ToolSchema {
            name: "update_node".into(),
            description: "Replace the content label of an existing node.".into(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {"id": {"type": "string"}, "content": {"type": "string"}},
                "required": ["id", "content"]
            }),
        },
        ToolSchema {
            name: "update_edge".into(),
            description: "Change the type of an existing edge.".into(),
            parameters: edge_params,
        },
        ToolSchema {
            name: "validate_graph".into(),
            description: "Check the draft against all graph invariants.".into(),
            parameters: empty.clone(),
        },
        ToolSchema {
            name: "submit_graph".into(),
            description: "Finalize the graph; succeeds only when valid.".into(),
            parameters: empty,
        },
    ]
}

/// A mutation the draft refused to apply, with the reason fed back to the
/// backend verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{reason}")]
pub struct RejectedMutation {
    pub reason: String,
}

impl RejectedMutation {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MutationOutcome {
    Applied,
    Validation(ValidationReport),
    Submitted,
}

/// A graph under construction. Hard invariants (duplicate ids, dangling
/// edges, overlong content) are enforced at mutation time; everything else
/// (cycles, INVOKE typing) is reported by validation and blocks submission.
#[derive(Debug, Clone, Default)]
pub struct GraphDraft {
    graph: ReasoningGraph,
    frozen: bool,
}

impl GraphDraft {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_graph(graph: ReasoningGraph) -> Self {
        Self {
            graph,
            frozen: false,
        }
    }

    pub fn graph(&self) -> &ReasoningGraph {
        &self.graph
    }

    pub fn into_graph(self) -> ReasoningGraph {
        self.graph
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn thaw(&mut self) {
        self.frozen = false;
    }

    pub fn apply(&mut self, request: &BuilderToolRequest) -> Result<MutationOutcome, RejectedMutation> {
        if self.frozen && !matches!(request, BuilderToolRequest::ValidateGraph) {
            return Err(RejectedMutation::new("graph already submitted"));
        }
        match request {
            BuilderToolRequest::AddNode(node) => {
                if self.graph.node(&node.id).is_some() {
                    return Err(RejectedMutation::new(format!(
                        "duplicate node id: {}",
                        node.id
                    )));
                }
                if node.content.chars().count() > MAX_CONTENT_CHARS {
                    return Err(RejectedMutation::new(format!(
                        "content exceeds {MAX_CONTENT_CHARS} chars"
                    )));
                }
                self.graph.nodes.push(node.clone());
                Ok(MutationOutcome::Applied)
            }
            BuilderToolRequest::AddEdge(edge) => {
                if self.graph.node(&edge.source).is_none() {
                    return Err(RejectedMutation::new(format!(
                        "dangling source `{}`",
                        edge.source
                    )));
                }
                if self.graph.node(&edge.target).is_none() {
                    return Err(RejectedMutation::new(format!(
                        "dangling target `{}`",
                        edge.target
                    )));
                }
                if self.graph.edges.contains(edge) {
                    return Err(RejectedMutation::new(format!(
                        "duplicate edge {}->{}",
                        edge.source, edge.target
                    )));
                }
                self.graph.edges.push(edge.clone());
                Ok(MutationOutcome::Applied)
            }
            BuilderToolRequest::UpdateNode { id, content } => {
                if content.chars().count() > MAX_CONTENT_CHARS {
                    return Err(RejectedMutation::new(format!(
                        "content exceeds {MAX_CONTENT_CHARS} chars"
                    )));
                }
                match self.graph.nodes.iter_mut().find(|n| &n.id == id) {
                    Some(node) => {
                        node.content = content.clone();
                        Ok(MutationOutcome::Applied)
                    }
                    None => Err(RejectedMutation::new(format!("unknown node id `{id}`"))),
                }
            }
            BuilderToolRequest::UpdateEdge {
                source,
                target,
                edge_type,
            } => {
                match self
                    .graph
                    .edges
                    .iter_mut()
                    .find(|e| &e.source == source && &e.target == target)
                {
                    Some(edge) => {
                        edge.edge_type = *edge_type;
                        Ok(MutationOutcome::Applied)
                    }
                    None => Err(RejectedMutation::new(format!(
                        "no edge {source}->{target}"
                    ))),
                }
            }
            BuilderToolRequest::ValidateGraph => Ok(MutationOutcome::Validation(self.graph.validate())),
            BuilderToolRequest::SubmitGraph => {
                let report = self.graph.validate();
                if report.is_ok() {
                    self.frozen = true;
                    Ok(MutationOutcome::Submitted)
                } else {
                    Err(RejectedMutation::new(format!(
                        "graph invalid: {}",
                        report.summary()
                    )))
                }
            }
        }
    }
}

/// Convenience wrapper matching the operation naming used elsewhere.
pub fn apply_builder_request(
    draft: &mut GraphDraft,
    request: &BuilderToolRequest,
) -> Result<MutationOutcome, RejectedMutation> {
    draft.apply(request)
}

#[derive(Debug, Clone)]
pub struct BuildLimits {
    /// Backend rounds allowed per phase invocation.
    pub max_rounds: usize,
    /// Malformed responses tolerated before giving up.
    pub retry_budget: usize,
}

impl Default for BuildLimits {
    fn default() -> Self {
        Self {
            max_rounds: 8,
            retry_budget: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub graph: ReasoningGraph,
    /// Set when a round budget ran out and the best validated snapshot was
    /// returned instead of a submitted graph.
    pub truncated: bool,
    pub backend_calls: usize,
}

#[derive(Debug, Error)]
pub enum BuilderError {
    #[error("builder protocol error after {count} malformed response(s): {detail}")]
    Protocol { count: usize, detail: String },
    #[error("no valid graph snapshot was ever produced")]
    NoValidGraph,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn step_payload(step: &TrajectoryStep) -> String {
    format!(
        "```step\n{}\n```",
        serde_json::to_string(step).expect("step serialization")
    )
}

fn graph_payload(graph: &ReasoningGraph) -> String {
    format!(
        "```graph\n{}\n```",
        serde_json::to_string(graph).expect("graph serialization")
    )
}

enum PhaseEnd {
    Submitted,
    RoundsExhausted,
}

/// Builds a reasoning graph for the trajectory by driving the backend
/// through the three construction phases.
///
/// Every trajectory step is offered to the backend in order, with its raw
/// observation text. The returned graph always validates; if a round budget
/// runs out, the best validated snapshot is returned with `truncated` set.
pub fn build_graph(
    trajectory: &Trajectory,
    catalog: &ToolCatalog,
    session: &LlmSession,
    prompts: &PromptSet,
    limits: &BuildLimits,
) -> Result<BuildOutcome, BuilderError> {
    let mut draft = GraphDraft::new();
    let seed = GraphNode::new(
        "n0",
        crate::graph::NodeType::Input,
        clip_chars(&trajectory.user_prompt, MAX_CONTENT_CHARS),
    );
    draft
        .apply(&BuilderToolRequest::AddNode(seed))
        .expect("seed node");
    let mut best: Option<ReasoningGraph> = Some(draft.graph().clone());
    let mut calls = 0usize;

    if trajectory.steps.is_empty() {
        return Ok(BuildOutcome {
            graph: best.ok_or(BuilderError::NoValidGraph)?,
            truncated: false,
            backend_calls: 0,
        });
    }

    let tool_list: Vec<&str> = catalog.names().collect();
    let mut run_phase = |phase: BuilderPhase,
                         draft: &mut GraphDraft,
                         best: &mut Option<ReasoningGraph>,
                         calls: &mut usize,
                         user_payload: String|
     -> Result<PhaseEnd, BuilderError> {
        draft.thaw();
        let mut conversation = vec![
            ChatMessage::system(prompts.get(phase.template())),
            ChatMessage::user(user_payload),
        ];
        let mut malformed = 0usize;
        for _round in 0..limits.max_rounds {
            let response = session.complete(conversation.clone(), builder_tool_schemas())?;
            *calls += 1;
            match response {
                LlmResponse::ToolCalls(requests) => {
                    let wire_calls = requests
                        .iter()
                        .map(|r| crate::gateway::WireToolCall {
                            id: r.id.clone(),
                            call_type: "function".into(),
                            function: crate::gateway::WireFunctionCall {
                                name: r.name.clone(),
                                arguments: r.arguments.clone(),
                            },
                        })
                        .collect();
                    conversation.push(ChatMessage::assistant_tool_calls(wire_calls));
                    let mut submitted = false;
                    for invocation in &requests {
                        let result_json = match BuilderToolRequest::parse(
                            &invocation.name,
                            &invocation.arguments,
                        ) {
                            Err(reason) => {
                                malformed += 1;
                                if malformed > limits.retry_budget {
                                    return Err(BuilderError::Protocol {
                                        count: malformed,
                                        detail: reason,
                                    });
                                }
                                serde_json::json!({"ok": false, "error": format!("malformed request: {reason}")})
                            }
                            Ok(request) => match draft.apply(&request) {
                                Ok(MutationOutcome::Applied) => {
                                    serde_json::json!({"ok": true})
                                }
                                Ok(MutationOutcome::Validation(report)) => serde_json::json!({
                                    "ok": report.is_ok(),
                                    "violations": report.violations.iter().map(|v| v.detail.clone()).collect::<Vec<_>>(),
                                    "warnings": report.warnings,
                                }),
                                Ok(MutationOutcome::Submitted) => {
                                    submitted = true;
                                    serde_json::json!({"ok": true, "submitted": true})
                                }
                                Err(rejected) => {
                                    serde_json::json!({"ok": false, "rejected": rejected.reason})
                                }
                            },
                        };
                        conversation.push(ChatMessage::tool_result(
                            invocation.id.clone(),
                            result_json.to_string(),
                        ));
                        if draft.graph().validate().is_ok() {
                            *best = Some(draft.graph().clone());
                        }
                        if submitted {
                            break;
                        }
                    }
                    if submitted {
                        return Ok(PhaseEnd::Submitted);
                    }
                }
                LlmResponse::Text(text) => {
                    malformed += 1;
                    if malformed > limits.retry_budget {
                        return Err(BuilderError::Protocol {
                            count: malformed,
                            detail: "text response where tool calls were required".into(),
                        });
                    }
                    conversation.push(ChatMessage::assistant(text));
                    conversation.push(ChatMessage::user(
                        "Respond with tool calls only; call submit_graph once the step is recorded.",
                    ));
                }
            }
        }
        Ok(PhaseEnd::RoundsExhausted)
    };

    let truncated_outcome = |best: Option<ReasoningGraph>, calls: usize| {
        best.ok_or(BuilderError::NoValidGraph).map(|graph| BuildOutcome {
            graph,
            truncated: true,
            backend_calls: calls,
        })
    };

    for (i, step) in trajectory.steps.iter().enumerate() {
        let phase = if i == 0 {
            BuilderPhase::Generation
        } else {
            BuilderPhase::Extension
        };
        let intro = if i == 0 {
            format!(
                "Task:\n{}\n\nKnown tools: {}\n\nThe draft already contains the input node `n0` for the user prompt.",
                trajectory.user_prompt,
                tool_list.join(", ")
            )
        } else {
            String::from("Extend the graph with the next execution step.")
        };
        let payload = format!(
            "{intro}\n\nExecution step {}:\n{}\n\nCurrent graph:\n{}",
            step.index,
            step_payload(step),
            graph_payload(draft.graph())
        );
        match run_phase(phase, &mut draft, &mut best, &mut calls, payload)? {
            PhaseEnd::Submitted => {}
            PhaseEnd::RoundsExhausted => return truncated_outcome(best, calls),
        }

        // Mechanical skip: nothing to refine on an empty observation.
        if step.observation.trim().is_empty() {
            continue;
        }
        let payload = format!(
            "Observation for step {} (raw):\n```observation\n{}\n```\n\nCurrent graph:\n{}",
            step.index,
            step.observation,
            graph_payload(draft.graph())
        );
        match run_phase(
            BuilderPhase::Refinement,
            &mut draft,
            &mut best,
            &mut calls,
            payload,
        )? {
            PhaseEnd::Submitted => {}
            PhaseEnd::RoundsExhausted => return truncated_outcome(best, calls),
        }
    }

    let graph = draft.into_graph();
    debug_assert!(graph.validate().is_ok());
    Ok(BuildOutcome {
        graph,
        truncated: false,
        backend_calls: calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeType;

    #[test]
    fn rejects_dangling_edge() {
        let mut draft = GraphDraft::new();
        draft
            .apply(&BuilderToolRequest::AddNode(GraphNode::new(
                "n1",
                NodeType::Decision,
                "a",
            )))
            .unwrap();
        let err = draft
            .apply(&BuilderToolRequest::AddEdge(GraphEdge::new(
                "n1",
                "ghost",
                EdgeType::Derive,
            )))
            .unwrap_err();
        assert!(err.reason.contains("dangling target"));
    }

    #[test]
    fn rejects_submit_on_cyclic_graph() {
        let mut draft = GraphDraft::new();
        for id in ["n1", "n2"] {
            draft
                .apply(&BuilderToolRequest::AddNode(GraphNode::new(
                    id,
                    NodeType::Decision,
                    id,
                )))
                .unwrap();
        }
        draft
            .apply(&BuilderToolRequest::AddEdge(GraphEdge::new(
                "n1",
                "n2",
                EdgeType::Derive,
            )))
            .unwrap();
        draft
            .apply(&BuilderToolRequest::AddEdge(GraphEdge::new(
                "n2",
                "n1",
                EdgeType::Derive,
            )))
            .unwrap();
        let err = draft.apply(&BuilderToolRequest::SubmitGraph).unwrap_err();
        assert!(err.reason.contains("cycle"));
        assert!(!draft.is_frozen());
    }

    #[test]
    fn rejects_overlong_content() {
        let mut draft = GraphDraft::new();
        let err = draft
            .apply(&BuilderToolRequest::AddNode(GraphNode::new(
                "n1",
                NodeType::Decision,
                "x".repeat(120),
            )))
            .unwrap_err();
        assert!(err.reason.contains("exceeds 80 chars"));
    }

    #[test]
    fn rejects_duplicate_node_id() {
        let mut draft = GraphDraft::new();
        let node = GraphNode::new("n1", NodeType::Decision, "a");
        draft.apply(&BuilderToolRequest::AddNode(node.clone())).unwrap();
        let err = draft.apply(&BuilderToolRequest::AddNode(node)).unwrap_err();
        assert!(err.reason.contains("duplicate node id"));
    }

    #[test]
    fn parse_rejects_unknown_instruction() {
        assert!(BuilderToolRequest::parse("drop_table", "{}").is_err());
        assert!(BuilderToolRequest::parse("validate_graph", "").is_ok());
    }

    #[test]
    fn submit_freezes_valid_graph() {
        let mut draft = GraphDraft::new();
        draft
            .apply(&BuilderToolRequest::AddNode(GraphNode::new(
                "n1",
                NodeType::Input,
                "p",
            )))
            .unwrap();
        assert_eq!(
            draft.apply(&BuilderToolRequest::SubmitGraph).unwrap(),
            MutationOutcome::Submitted
        );
        assert!(draft.is_frozen());
        let err = draft
            .apply(&BuilderToolRequest::AddNode(GraphNode::new(
                "n2",
                NodeType::Input,
                "q",
            )))
            .unwrap_err();
        assert!(err.reason.contains("already submitted"));
    }
}
