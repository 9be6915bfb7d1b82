//! Prompt templates for the builder, planner, and checker roles.
//!
//! The defaults are compiled in; a prompts directory can override any of
//! them by file name, which keeps the templates editable without a rebuild.
//! Rendering is plain token substitution: only the listed `{name}` keys are
//! replaced, so JSON braces inside the templates survive untouched.

use std::collections::HashMap;
use std::path::Path;

pub const BUILDER_GENERATION: &str = include_str!("../prompts/builder_generation.txt");
pub const BUILDER_EXTENSION: &str = include_str!("../prompts/builder_extension.txt");
pub const BUILDER_REFINEMENT: &str = include_str!("../prompts/builder_refinement.txt");
pub const PLANNER_MAIN: &str = include_str!("../prompts/planner_main.txt");
pub const PLANNER_REPLAN: &str = include_str!("../prompts/planner_replan.txt");
pub const CHECKER_TOOL_NAME: &str = include_str!("../prompts/checker_tool_name.txt");
pub const CHECKER_PARAM_DIRECT: &str = include_str!("../prompts/checker_param_direct.txt");
pub const CHECKER_PARAM_USER_PROMPT: &str =
    include_str!("../prompts/checker_param_user_prompt.txt");
pub const CHECKER_PARAM_NL: &str = include_str!("../prompts/checker_param_nl.txt");

const TEMPLATE_FILES: &[(&str, &str)] = &[
    ("builder_generation", BUILDER_GENERATION),
    ("builder_extension", BUILDER_EXTENSION),
    ("builder_refinement", BUILDER_REFINEMENT),
    ("planner_main", PLANNER_MAIN),
    ("planner_replan", PLANNER_REPLAN),
    ("checker_tool_name", CHECKER_TOOL_NAME),
    ("checker_param_direct", CHECKER_PARAM_DIRECT),
    ("checker_param_user_prompt", CHECKER_PARAM_USER_PROMPT),
    ("checker_param_nl", CHECKER_PARAM_NL),
];

/// The full template set used by one engine instance.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: HashMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            templates: TEMPLATE_FILES
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Builtin templates, with any `<name>.txt` present in `dir` replacing
    /// the default of the same name.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::builtin();
        for (name, _) in TEMPLATE_FILES {
            let candidate = dir.join(format!("{name}.txt"));
            if candidate.is_file() {
                set.templates
                    .insert(name.to_string(), std::fs::read_to_string(candidate)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> &str {
        self.templates
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown prompt template `{name}`"))
    }
}

/// Replaces each `{key}` token with its value. Unlisted braces are left
/// alone.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}
