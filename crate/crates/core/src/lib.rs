//! Dual-graph runtime defense for tool-calling LLM agents.
//!
//! The engine derives an *authorization graph* from the user's prompt and the
//! tool catalog in a clean context (no trajectory data can reach the planner),
//! builds a *reasoning graph* over the agent's actual execution trajectory
//! (deliberately exposed to whatever the tools returned, injections included),
//! and then structurally aligns the two. Alignment applies three detection
//! layers in order of decreasing certainty: a zero-cost hard block for tools
//! outside the authorized set once the plan is exhausted, an LLM tool-name
//! judgment for ambiguous deviations, and a parameter-source check that
//! matches argument values against the raw observation text of the tools a
//! policy declares as legitimate sources.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`model`] — tool catalogs, trajectories, raw observation storage
//! - [`graph`] — the reasoning-graph DAG, validation, invocation extraction
//! - [`builder`] — interactive LLM-driven graph construction
//! - [`faithful`] — deterministic trajectory-faithful graph constructor
//! - [`authz`] — authorization graph, planner, parameter policies, replan
//! - [`checker`] — dual-pointer alignment and the three detection layers
//! - [`gateway`] — role-configured LLM backends (HTTP and scripted stub)
//! - [`harness`] — simulated environments, scripted agents, suite metrics
//! - [`cli`] — command-line entry points

pub mod authz;
pub mod builder;
pub mod checker;
pub mod cli;
pub mod faithful;
pub mod gateway;
pub mod graph;
pub mod harness;
pub mod model;
pub mod prompts;

pub use authz::{AllowedSource, AuthStep, AuthorizationGraph, ParamPolicy, PlanError, Planner};
pub use checker::{
    CallVerdict, CheckError, CheckMode, CheckReport, Checker, CheckerState, Label, Layer, Outcome,
};
pub use gateway::{ChatBackend, Gateway, GatewayError, LlmSession, Role, RoleConfig, ScriptedStub};
pub use graph::{
    EdgeType, GraphEdge, GraphError, GraphNode, InvokeRecord, NodeType, ReasoningGraph,
    TrustLevel, ValidationReport,
};
pub use model::{ModelError, ToolCall, ToolCatalog, ToolSpec, Trajectory, TrajectoryStep};
