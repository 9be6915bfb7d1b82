//! Deterministic trajectory-faithful graph construction.
//!
//! [`faithful_graph`] builds a reasoning graph directly from a trajectory
//! with no backend involved: one input node, a decision/INVOKE/observation
//! group per step, and an EXTRACT edge wherever an argument value is a
//! verbatim substring of an earlier observation. This is the offline path
//! for checking without any LLM, and it doubles as ground truth for the
//! builder protocol: [`FaithfulBuilderStub`] emits exactly the same
//! mutations through the interactive tool_use loop, so the two routes must
//! produce identical graphs.

use std::sync::Mutex;

use crate::gateway::{BackendExchange, ChatBackend, ChatRequest, GatewayError, LlmResponse, ToolInvocation};
use crate::graph::{clip_chars, EdgeType, GraphEdge, GraphNode, NodeType, ReasoningGraph, MAX_CONTENT_CHARS};
use crate::model::{Trajectory, TrajectoryStep};

/// Minimum argument length for substring provenance attribution; shorter
/// values match too promiscuously to mean anything.
const MIN_MATCH_CHARS: usize = 3;

/// The node/edge group recording one executed step.
fn step_mutations(
    step: &TrajectoryStep,
    prior_observations: &[(usize, String)],
) -> (Vec<GraphNode>, Vec<GraphEdge>) {
    let k = step.index;
    let tool_id = format!("s{k}_tool");
    let obs_id = format!("s{k}_obs");
    let mut nodes = vec![
        GraphNode::new(
            &tool_id,
            NodeType::Decision,
            format!("tool: {}", step.action.tool_name),
        )
        .with_step_ref(k),
    ];
    let mut edges = vec![GraphEdge::new("n0", &tool_id, EdgeType::Derive)];

    for (param, value) in &step.action.arguments {
        let param_id = format!("s{k}_param_{param}");
        nodes.push(
            GraphNode::new(
                &param_id,
                NodeType::Decision,
                clip_chars(&format!("{param}={value}"), MAX_CONTENT_CHARS),
            )
            .with_step_ref(k)
            .with_param_name(param),
        );
        let needle = value.trim();
        let source = if needle.chars().count() >= MIN_MATCH_CHARS {
            prior_observations
                .iter()
                .find(|(_, obs)| obs.contains(needle))
                .map(|(idx, _)| *idx)
        } else {
            None
        };
        match source {
            Some(idx) => edges.push(GraphEdge::new(
                format!("s{idx}_obs"),
                &param_id,
                EdgeType::Extract,
            )),
            None => edges.push(GraphEdge::new("n0", &param_id, EdgeType::Derive)),
        }
        edges.push(GraphEdge::new(&param_id, &obs_id, EdgeType::Invoke));
    }

    nodes.push(
        GraphNode::new(&obs_id, NodeType::Observation, clip_chars(&step.observation, MAX_CONTENT_CHARS))
            .with_step_ref(k),
    );
    edges.push(GraphEdge::new(&tool_id, &obs_id, EdgeType::Invoke));
    (nodes, edges)
}

/// Builds the trajectory-faithful reasoning graph with no backend.
pub fn faithful_graph(trajectory: &Trajectory) -> ReasoningGraph {
    let mut graph = ReasoningGraph::new();
    graph.nodes.push(GraphNode::new(
        "n0",
        NodeType::Input,
        clip_chars(&trajectory.user_prompt, MAX_CONTENT_CHARS),
    ));
    let mut priors: Vec<(usize, String)> = Vec::new();
    for step in &trajectory.steps {
        let (nodes, edges) = step_mutations(step, &priors);
        graph.nodes.extend(nodes);
        graph.edges.extend(edges);
        priors.push((step.index, step.observation.clone()));
    }
    debug_assert!(graph.validate().is_ok());
    graph
}

/// A builder backend that plays the protocol deterministically, emitting the
/// trajectory-faithful mutations for whatever step the engine offers and
/// skipping every refinement.
#[derive(Default)]
pub struct FaithfulBuilderStub {
    seen_observations: Mutex<Vec<(usize, String)>>,
}

impl FaithfulBuilderStub {
    pub fn new() -> Self {
        Self::default()
    }

    fn extract_step(request: &ChatRequest) -> Option<TrajectoryStep> {
        let text = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")?
            .content
            .as_str();
        let start = text.find("```step\n")? + "```step\n".len();
        let end = text[start..].find("\n```")? + start;
        serde_json::from_str(&text[start..end]).ok()
    }
}

impl ChatBackend for FaithfulBuilderStub {
    fn complete(&self, request: &ChatRequest) -> Result<BackendExchange, GatewayError> {
        let request_body =
            serde_json::to_string(&request.wire_body()).expect("request serialization");
        let mut calls: Vec<ToolInvocation> = Vec::new();
        let mut next_id = 0usize;
        let mut push = |name: &str, arguments: serde_json::Value, calls: &mut Vec<ToolInvocation>| {
            calls.push(ToolInvocation {
                id: format!("call_{next_id}"),
                name: name.to_string(),
                arguments: arguments.to_string(),
            });
            next_id += 1;
        };

        if let Some(step) = Self::extract_step(request) {
            let mut priors = self.seen_observations.lock().unwrap();
            let (nodes, edges) = step_mutations(&step, &priors);
            for node in nodes {
                push(
                    "add_node",
                    serde_json::to_value(&node).expect("node args"),
                    &mut calls,
                );
            }
            for edge in edges {
                push(
                    "add_edge",
                    serde_json::to_value(&edge).expect("edge args"),
                    &mut calls,
                );
            }
            priors.push((step.index, step.observation));
        }
        // Refinement offers (no step payload) are skipped outright.
        push("submit_graph", serde_json::json!({}), &mut calls);

        let response = LlmResponse::ToolCalls(calls);
        let response_body =
            serde_json::to_string(&crate::gateway::completion_body_for(&response))
                .expect("response serialization");
        Ok(BackendExchange {
            request_body,
            response_body,
            response,
        })
    }

    fn kind(&self) -> &'static str {
        "faithful-builder-stub"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ToolCall, ToolCatalog};

    fn trajectory() -> Trajectory {
        let mut t = Trajectory::new("find a flight code and book it");
        t.push_step(
            "search",
            ToolCall::new("search_flights").with_arg("dest", "SFO"),
            "Flights: FL-456 ($320), FL-789 ($410)",
        );
        t.push_step(
            "book",
            ToolCall::new("book_flight").with_arg("flight_id", "FL-456"),
            "Booked.",
        );
        t
    }

    fn catalog() -> ToolCatalog {
        ToolCatalog::from_json(r#"{"tools":[{"name":"search_flights"},{"name":"book_flight"}]}"#)
            .unwrap()
    }

    #[test]
    fn faithful_graph_validates_and_extracts_the_action_sequence() {
        let t = trajectory();
        let g = faithful_graph(&t);
        assert!(g.validate().is_ok());
        let records = g.extract_invocations(&catalog()).unwrap();
        let tools: Vec<&str> = records.iter().map(|r| r.tool_name.as_str()).collect();
        assert_eq!(tools, vec!["search_flights", "book_flight"]);
        assert_eq!(records[1].step_ref, Some(2));
    }

    #[test]
    fn argument_provenance_uses_extract_when_value_seen_earlier() {
        let g = faithful_graph(&trajectory());
        // FL-456 came from the search observation
        assert!(g.edges.iter().any(|e| {
            e.edge_type == EdgeType::Extract
                && e.source == "s1_obs"
                && e.target == "s2_param_flight_id"
        }));
        // dest=SFO has no prior source, so it derives from the prompt
        assert!(g.edges.iter().any(|e| {
            e.edge_type == EdgeType::Derive && e.source == "n0" && e.target == "s1_param_dest"
        }));
    }

    #[test]
    fn tainted_argument_resolves_untrusted() {
        let g = faithful_graph(&trajectory());
        assert_eq!(
            g.trust_closure("s2_param_flight_id").unwrap(),
            crate::graph::TrustLevel::Untrusted
        );
        assert_eq!(
            g.trust_closure("s1_param_dest").unwrap(),
            crate::graph::TrustLevel::Trusted
        );
    }

    #[test]
    fn empty_trajectory_yields_lone_input_node() {
        let t = Trajectory::new("nothing to do");
        let g = faithful_graph(&t);
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
        assert_eq!(g.nodes[0].node_type, NodeType::Input);
    }
}
