//! The authorization graph: an injection-immune specification of what the
//! agent is allowed to do, derived solely from the user prompt and the tool
//! catalog.
//!
//! Isolation is structural: [`Planner::plan`] takes no trajectory parameter,
//! so no observation content can reach the planning request. Runtime
//! extension happens through [`Planner::replan`], which is constrained to a
//! per-step tool whitelist and verified programmatically — a proposal naming
//! tools outside the whitelist is rejected, never repaired.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{extract_json_object, ChatMessage, GatewayError, LlmSession};
use crate::model::ToolCatalog;
use crate::prompts::{render, PromptSet};

/// Where a parameter value may legitimately come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllowedSource {
    /// The value must appear in the user's own text.
    UserPrompt,
    /// A literal token from a declared source tool's observation.
    ObservationDirect,
    /// A reasoning product over a declared source tool's observation.
    ObservationNl,
    /// No source constraint.
    Any,
}

impl AllowedSource {
    pub fn requires_source_tools(self) -> bool {
        matches!(self, AllowedSource::ObservationDirect | AllowedSource::ObservationNl)
    }
}

/// Per-parameter provenance policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPolicy {
    pub param_name: String,
    pub allowed_source: AllowedSource,
    /// Tools whose observations are legitimate sources. Required non-empty
    /// for the observation-backed sources, must be empty otherwise.
    #[serde(default)]
    pub source_tools: Vec<String>,
}

/// One expected step of the authorization plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthStep {
    pub step_index: usize,
    pub expected_tool: String,
    #[serde(default)]
    pub replan: bool,
    /// Tool whitelist for the sub-plan; empty iff `replan` is false.
    #[serde(default)]
    pub replan_allowed_tools: Vec<String>,
    #[serde(default)]
    pub param_policies: Vec<ParamPolicy>,
}

impl AuthStep {
    pub fn policy_for(&self, param: &str) -> Option<&ParamPolicy> {
        self.param_policies.iter().find(|p| p.param_name == param)
    }
}

/// Provenance marker for replan sub-graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanOrigin {
    /// The parent step whose observation triggered the replan.
    pub triggering_step: usize,
    /// 1 for a first-level sub-graph, increasing with nesting.
    pub depth: usize,
}

/// The authorization graph: plan reasoning plus the expected step sequence.
/// Sub-graphs carry the whitelist they were constrained to and a parent
/// origin marker; root graphs carry neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorizationGraph {
    #[serde(default)]
    pub reasoning: String,
    pub steps: Vec<AuthStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitelist: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ReplanOrigin>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("planner output could not be parsed: {0}")]
    Parse(String),
    #[error("invalid plan structure: {0}")]
    Structure(String),
    #[error("completeness violation: {0}")]
    Completeness(String),
    #[error("unknown tool in plan: `{0}`")]
    UnknownTool(String),
    #[error("whitelist violation: {0}")]
    WhitelistViolation(String),
    #[error("source_tools outside whitelist: {0}")]
    SourceOutsideWhitelist(String),
    #[error("replan depth {depth} exceeds limit {limit}")]
    DepthExceeded { depth: usize, limit: usize },
    #[error("step {0} is not flagged for replan")]
    NotReplanStep(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl PlanError {
    /// Content errors the planner gets one corrective re-prompt for.
    /// Whitelist breaches are security signals and are never retried.
    fn retryable(&self) -> bool {
        matches!(
            self,
            PlanError::Parse(_)
                | PlanError::Structure(_)
                | PlanError::Completeness(_)
                | PlanError::UnknownTool(_)
        )
    }
}

impl AuthorizationGraph {
    pub fn from_json(json: &str) -> Result<Self, PlanError> {
        serde_json::from_str(json).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("authorization graph serialization")
    }

    pub fn is_subgraph(&self) -> bool {
        self.whitelist.is_some()
    }

    pub fn depth(&self) -> usize {
        self.parent.as_ref().map(|p| p.depth).unwrap_or(0)
    }

    /// The step index a continuation plan would start at.
    pub fn next_step_index(&self) -> usize {
        self.steps.last().map(|s| s.step_index + 1).unwrap_or(1)
    }

    /// Validates all structural invariants against the catalog: contiguous
    /// indices from `first_index`, known tools, the source_tools emptiness
    /// rule, the replan flag rule, the whitelist subset rule for sub-graphs,
    /// and the completeness rule for write-class tools.
    pub fn validate_from(&self, catalog: &ToolCatalog, first_index: usize) -> Result<(), PlanError> {
        if !self.is_subgraph() {
            if self.parent.is_some() {
                return Err(PlanError::Structure(
                    "root graph must not carry a parent origin".into(),
                ));
            }
        }
        for (offset, step) in self.steps.iter().enumerate() {
            let expected_index = first_index + offset;
            if step.step_index != expected_index {
                return Err(PlanError::Structure(format!(
                    "step indices must be contiguous: expected {expected_index}, found {}",
                    step.step_index
                )));
            }
            if !catalog.contains(&step.expected_tool) {
                return Err(PlanError::UnknownTool(step.expected_tool.clone()));
            }
            if step.replan == step.replan_allowed_tools.is_empty() {
                return Err(PlanError::Structure(format!(
                    "step {}: replan_allowed_tools must be non-empty exactly when replan is set",
                    step.step_index
                )));
            }
            for tool in &step.replan_allowed_tools {
                if !catalog.contains(tool) {
                    return Err(PlanError::UnknownTool(tool.clone()));
                }
            }
            if let Some(whitelist) = &self.whitelist {
                if !whitelist.contains(&step.expected_tool) {
                    return Err(PlanError::WhitelistViolation(format!(
                        "expected_tool `{}` at step {} is outside the whitelist {:?}",
                        step.expected_tool, step.step_index, whitelist
                    )));
                }
            }
            for policy in &step.param_policies {
                if policy.allowed_source.requires_source_tools() {
                    if policy.source_tools.is_empty() {
                        return Err(PlanError::Structure(format!(
                            "step {} param `{}`: source_tools required for this allowed_source",
                            step.step_index, policy.param_name
                        )));
                    }
                } else if !policy.source_tools.is_empty() {
                    return Err(PlanError::Structure(format!(
                        "step {} param `{}`: source_tools must be empty for this allowed_source",
                        step.step_index, policy.param_name
                    )));
                }
                for tool in &policy.source_tools {
                    if !catalog.contains(tool) {
                        return Err(PlanError::UnknownTool(tool.clone()));
                    }
                }
            }
            let spec = catalog.get(&step.expected_tool).expect("checked above");
            if spec.write_class {
                for required in spec.required_params() {
                    if step.policy_for(required).is_none() {
                        return Err(PlanError::Completeness(format!(
                            "write tool `{}` at step {} has no policy for required parameter `{}`",
                            step.expected_tool, step.step_index, required
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, catalog: &ToolCatalog) -> Result<(), PlanError> {
        let first = self.steps.first().map(|s| s.step_index).unwrap_or(1);
        let start = if self.is_subgraph() { first } else { 1 };
        self.validate_from(catalog, start)
    }
}

/// All tool names the plan authorizes anywhere: every expected tool plus the
/// union of every step's replan whitelist.
pub fn initial_authorized_set(graph: &AuthorizationGraph) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for step in &graph.steps {
        set.insert(step.expected_tool.clone());
        set.extend(step.replan_allowed_tools.iter().cloned());
    }
    set
}

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub max_replan_depth: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_replan_depth: 2,
        }
    }
}

#[derive(Deserialize)]
struct PlanWire {
    #[serde(default)]
    reasoning: String,
    steps: Vec<AuthStep>,
}

/// The clean-context planner. Requests are assembled exclusively from the
/// user prompt and the tool catalog; replan additionally sees the single
/// observation that triggered it, under its whitelist.
pub struct Planner<'a> {
    session: &'a LlmSession,
    prompts: &'a PromptSet,
    config: PlannerConfig,
}

impl<'a> Planner<'a> {
    pub fn new(session: &'a LlmSession, prompts: &'a PromptSet, config: PlannerConfig) -> Self {
        Self {
            session,
            prompts,
            config,
        }
    }

    pub fn max_replan_depth(&self) -> usize {
        self.config.max_replan_depth
    }

    fn request_plan(&self, messages: Vec<ChatMessage>) -> Result<PlanWire, PlanError> {
        let response = self.session.complete(messages, vec![])?;
        let text = match response {
            crate::gateway::LlmResponse::Text(text) => text,
            crate::gateway::LlmResponse::ToolCalls(_) => {
                return Err(PlanError::Parse("expected JSON text, got tool calls".into()))
            }
        };
        let json = extract_json_object(&text)
            .ok_or_else(|| PlanError::Parse("no JSON object in planner output".into()))?;
        serde_json::from_str(json).map_err(|e| PlanError::Parse(e.to_string()))
    }

    fn plan_once(
        &self,
        messages: Vec<ChatMessage>,
        catalog: &ToolCatalog,
        first_index: usize,
        finish: impl Fn(PlanWire) -> Result<AuthorizationGraph, PlanError>,
    ) -> Result<AuthorizationGraph, PlanError> {
        let wire = self.request_plan(messages)?;
        let graph = finish(wire)?;
        graph.validate_from(catalog, first_index)?;
        Ok(graph)
    }

    fn plan_with_retry(
        &self,
        messages: Vec<ChatMessage>,
        catalog: &ToolCatalog,
        first_index: usize,
        finish: impl Fn(PlanWire) -> Result<AuthorizationGraph, PlanError> + Copy,
    ) -> Result<AuthorizationGraph, PlanError> {
        match self.plan_once(messages.clone(), catalog, first_index, finish) {
            Ok(graph) => Ok(graph),
            Err(err) if err.retryable() => {
                let mut retry = messages;
                retry.push(ChatMessage::user(format!(
                    "Your previous output was rejected: {err}. \
                     Return a corrected JSON object with \"reasoning\" and \"steps\"."
                )));
                self.plan_once(retry, catalog, first_index, finish)
            }
            Err(err) => Err(err),
        }
    }

    /// Derives the root authorization graph from the user prompt and the
    /// tool catalog in a clean context. There is no trajectory parameter by
    /// construction.
    pub fn plan(
        &self,
        user_prompt: &str,
        catalog: &ToolCatalog,
    ) -> Result<AuthorizationGraph, PlanError> {
        let messages = vec![
            ChatMessage::system(self.prompts.get("planner_main").to_string()),
            ChatMessage::user(format!(
                "Task:\n{user_prompt}\n\nTool catalog (JSON):\n{}\n\nReturn the JSON object now.",
                catalog.to_json()
            )),
        ];
        self.plan_with_retry(messages, catalog, 1, |wire| {
            Ok(AuthorizationGraph {
                reasoning: wire.reasoning,
                steps: wire.steps,
                whitelist: None,
                parent: None,
            })
        })
    }

    /// Generates a sub authorization graph after a replan-flagged step.
    ///
    /// The proposal is verified programmatically: every expected tool must
    /// fall inside the triggering step's whitelist and every declared
    /// source tool inside the whitelist or the triggering tool itself.
    pub fn replan(
        &self,
        parent: &AuthorizationGraph,
        triggering_step: &AuthStep,
        observation: &str,
        user_prompt: &str,
        catalog: &ToolCatalog,
        next_step_index: usize,
    ) -> Result<AuthorizationGraph, PlanError> {
        if !triggering_step.replan {
            return Err(PlanError::NotReplanStep(triggering_step.step_index));
        }
        let depth = parent.depth() + 1;
        if depth > self.config.max_replan_depth {
            return Err(PlanError::DepthExceeded {
                depth,
                limit: self.config.max_replan_depth,
            });
        }
        let whitelist = triggering_step.replan_allowed_tools.clone();
        let system = render(
            self.prompts.get("planner_replan"),
            &[
                ("allowed_tools", &serde_json::to_string(&whitelist).unwrap()),
                ("next_step_index", &next_step_index.to_string()),
            ],
        );
        let whitelist_specs: Vec<String> = whitelist
            .iter()
            .filter_map(|name| catalog.get(name).ok())
            .map(|spec| {
                serde_json::to_string(spec).expect("tool spec serialization")
            })
            .collect();
        let messages = vec![
            ChatMessage::system(system),
            ChatMessage::user(format!(
                "Task:\n{user_prompt}\n\nObservation from `{}` that triggered this replan:\n{observation}\n\nWhitelisted tool specs:\n{}\n\nReturn the JSON object now.",
                triggering_step.expected_tool,
                whitelist_specs.join("\n")
            )),
        ];
        let trigger_tool = triggering_step.expected_tool.clone();
        let triggering_index = triggering_step.step_index;
        let whitelist_for_finish = whitelist.clone();
        let graph = self.plan_with_retry(messages, catalog, next_step_index, move |wire| {
            let graph = AuthorizationGraph {
                reasoning: wire.reasoning,
                steps: wire.steps,
                whitelist: Some(whitelist_for_finish.clone()),
                parent: Some(ReplanOrigin {
                    triggering_step: triggering_index,
                    depth,
                }),
            };
            // source_tools must stay inside the whitelist, except for the
            // tool whose observation triggered the replan.
            for step in &graph.steps {
                for policy in &step.param_policies {
                    for tool in &policy.source_tools {
                        if tool != &trigger_tool && !whitelist_for_finish.contains(tool) {
                            return Err(PlanError::SourceOutsideWhitelist(format!(
                                "step {} param `{}` declares source `{}`",
                                step.step_index, policy.param_name, tool
                            )));
                        }
                    }
                }
            }
            Ok(graph)
        })?;
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Role, RoleConfig, ScriptedStub, Strictness, StubResponseSpec, StubRule};
    use std::sync::Arc;

    fn catalog() -> ToolCatalog {
        ToolCatalog::from_json(
            r#"{"tools":[
                {"name":"get_weather","parameters":[{"name":"city","required":true}]},
                {"name":"send_email","parameters":[
                    {"name":"to","required":true},
                    {"name":"body","required":true}]},
                {"name":"get_repo_info","parameters":[{"name":"repo_name","required":true}]},
                {"name":"git_star","parameters":[{"name":"repo_name","required":true}],"write_class":true},
                {"name":"delete_repo","parameters":[{"name":"repo_name","required":true}]}
            ]}"#,
        )
        .unwrap()
    }

    fn gateway_with(rules: Vec<StubRule>) -> Gateway {
        let mut gw = Gateway::new();
        gw.bind(
            RoleConfig::stub(Role::Planner),
            Arc::new(ScriptedStub::new(rules, Strictness::FailOnUnexpected)),
        );
        gw
    }

    fn plan_rule(json: serde_json::Value) -> StubRule {
        StubRule {
            require: vec![],
            response: StubResponseSpec::Json { json },
            once: false,
        }
    }

    #[test]
    fn single_read_only_tool_plan() {
        let gw = gateway_with(vec![plan_rule(serde_json::json!({
            "reasoning": "one lookup suffices",
            "steps": [{"step_index": 1, "expected_tool": "get_weather",
                       "replan": false, "replan_allowed_tools": [], "param_policies": []}]
        }))]);
        let session = gw.session(Role::Planner, "plan").unwrap();
        let prompts = PromptSet::builtin();
        let planner = Planner::new(&session, &prompts, PlannerConfig::default());
        let graph = planner.plan("what's the weather in Kyoto", &catalog()).unwrap();
        assert_eq!(graph.steps.len(), 1);
        assert!(graph.whitelist.is_none());
        assert_eq!(
            initial_authorized_set(&graph),
            ["get_weather".to_string()].into_iter().collect()
        );
    }

    #[test]
    fn completeness_violation_after_retry() {
        // send_email is write-class; the stub keeps omitting the body policy.
        let bad = serde_json::json!({
            "reasoning": "",
            "steps": [{"step_index": 1, "expected_tool": "send_email",
                       "replan": false, "replan_allowed_tools": [],
                       "param_policies": [{"param_name": "to", "allowed_source": "user_prompt", "source_tools": []}]}]
        });
        let gw = gateway_with(vec![plan_rule(bad)]);
        let session = gw.session(Role::Planner, "plan").unwrap();
        let prompts = PromptSet::builtin();
        let planner = Planner::new(&session, &prompts, PlannerConfig::default());
        let err = planner.plan("email Bob", &catalog()).unwrap_err();
        assert!(matches!(err, PlanError::Completeness(_)), "got {err}");
        // one corrective re-prompt happened
        assert_eq!(gw.transcript().len(), 2);
    }

    #[test]
    fn corrective_reprompt_can_fix_the_plan() {
        let bad = serde_json::json!({
            "reasoning": "",
            "steps": [{"step_index": 1, "expected_tool": "send_email",
                       "param_policies": []}]
        });
        let good = serde_json::json!({
            "reasoning": "",
            "steps": [{"step_index": 1, "expected_tool": "send_email",
                       "param_policies": [
                           {"param_name": "to", "allowed_source": "user_prompt"},
                           {"param_name": "body", "allowed_source": "any"}]}]
        });
        let rules = vec![
            StubRule {
                require: vec![],
                response: StubResponseSpec::Json { json: bad },
                once: true,
            },
            StubRule {
                require: vec![],
                response: StubResponseSpec::Json { json: good },
                once: true,
            },
        ];
        let gw = gateway_with(rules);
        let session = gw.session(Role::Planner, "plan").unwrap();
        let prompts = PromptSet::builtin();
        let planner = Planner::new(&session, &prompts, PlannerConfig::default());
        let graph = planner.plan("email Bob", &catalog()).unwrap();
        assert_eq!(graph.steps[0].param_policies.len(), 2);
    }

    #[test]
    fn replan_enforces_the_whitelist() {
        let parent = AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![AuthStep {
                step_index: 1,
                expected_tool: "get_repo_info".into(),
                replan: true,
                replan_allowed_tools: vec!["git_star".into()],
                param_policies: vec![],
            }],
            whitelist: None,
            parent: None,
        };
        let ok = serde_json::json!({
            "reasoning": "star the zero-star repos",
            "steps": [
                {"step_index": 2, "expected_tool": "git_star",
                 "param_policies": [{"param_name": "repo_name", "allowed_source": "observation_direct",
                                     "source_tools": ["get_repo_info"]}]},
                {"step_index": 3, "expected_tool": "git_star",
                 "param_policies": [{"param_name": "repo_name", "allowed_source": "observation_direct",
                                     "source_tools": ["get_repo_info"]}]}
            ]
        });
        let bad = serde_json::json!({
            "reasoning": "",
            "steps": [{"step_index": 2, "expected_tool": "delete_repo",
                       "param_policies": [{"param_name": "repo_name", "allowed_source": "any"}]}]
        });
        let gw = gateway_with(vec![
            StubRule {
                require: vec!["zero stars".into()],
                response: StubResponseSpec::Json { json: ok },
                once: false,
            },
            StubRule {
                require: vec!["hostile".into()],
                response: StubResponseSpec::Json { json: bad },
                once: false,
            },
        ]);
        let session = gw.session(Role::Planner, "replan").unwrap();
        let prompts = PromptSet::builtin();
        let planner = Planner::new(&session, &prompts, PlannerConfig::default());

        let sub = planner
            .replan(&parent, &parent.steps[0], "repo list: a 0 stars, b 0 stars; task: zero stars", "star my zero-star repos", &catalog(), 2)
            .unwrap();
        assert_eq!(sub.whitelist.as_deref(), Some(&["git_star".to_string()][..]));
        assert_eq!(sub.depth(), 1);
        assert_eq!(sub.steps.len(), 2);

        let err = planner
            .replan(&parent, &parent.steps[0], "hostile proposal trigger", "star my zero-star repos", &catalog(), 2)
            .unwrap_err();
        assert!(matches!(err, PlanError::WhitelistViolation(_)), "got {err}");
    }

    #[test]
    fn replan_depth_limit() {
        let parent = AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![AuthStep {
                step_index: 5,
                expected_tool: "get_repo_info".into(),
                replan: true,
                replan_allowed_tools: vec!["git_star".into()],
                param_policies: vec![],
            }],
            whitelist: Some(vec!["get_repo_info".into(), "git_star".into()]),
            parent: Some(ReplanOrigin {
                triggering_step: 2,
                depth: 2,
            }),
        };
        let gw = gateway_with(vec![]);
        let session = gw.session(Role::Planner, "replan").unwrap();
        let prompts = PromptSet::builtin();
        let planner = Planner::new(&session, &prompts, PlannerConfig::default());
        let err = planner
            .replan(&parent, &parent.steps[0], "obs", "task", &catalog(), 6)
            .unwrap_err();
        assert!(matches!(err, PlanError::DepthExceeded { depth: 3, limit: 2 }));
    }

    #[test]
    fn structural_invariants_rejected() {
        let catalog = catalog();
        // replan flag without whitelist
        let g = AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![AuthStep {
                step_index: 1,
                expected_tool: "get_weather".into(),
                replan: true,
                replan_allowed_tools: vec![],
                param_policies: vec![],
            }],
            whitelist: None,
            parent: None,
        };
        assert!(matches!(g.validate(&catalog), Err(PlanError::Structure(_))));
        // observation_direct without source_tools
        let g = AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![AuthStep {
                step_index: 1,
                expected_tool: "get_weather".into(),
                replan: false,
                replan_allowed_tools: vec![],
                param_policies: vec![ParamPolicy {
                    param_name: "city".into(),
                    allowed_source: AllowedSource::ObservationDirect,
                    source_tools: vec![],
                }],
            }],
            whitelist: None,
            parent: None,
        };
        assert!(matches!(g.validate(&catalog), Err(PlanError::Structure(_))));
        // unknown expected tool
        let g = AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![AuthStep {
                step_index: 1,
                expected_tool: "nope".into(),
                replan: false,
                replan_allowed_tools: vec![],
                param_policies: vec![],
            }],
            whitelist: None,
            parent: None,
        };
        assert!(matches!(g.validate(&catalog), Err(PlanError::UnknownTool(_))));
    }

    #[test]
    fn authorized_set_includes_replan_tools_and_grows_monotonically() {
        let mut g = AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![AuthStep {
                step_index: 1,
                expected_tool: "get_repo_info".into(),
                replan: true,
                replan_allowed_tools: vec!["git_star".into()],
                param_policies: vec![],
            }],
            whitelist: None,
            parent: None,
        };
        let before = initial_authorized_set(&g);
        assert!(before.contains("git_star"));
        assert!(before.contains("get_repo_info"));
        g.steps.push(AuthStep {
            step_index: 2,
            expected_tool: "get_weather".into(),
            replan: false,
            replan_allowed_tools: vec![],
            param_policies: vec![],
        });
        let after = initial_authorized_set(&g);
        assert!(before.is_subset(&after));
        assert!(initial_authorized_set(&AuthorizationGraph {
            reasoning: String::new(),
            steps: vec![],
            whitelist: None,
            parent: None
        })
        .is_empty());
    }
}
