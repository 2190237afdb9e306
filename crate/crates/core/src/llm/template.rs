//! Prompt templates.
//!
//! Bodies are plain text with `{{name}}` placeholders. The five built-in
//! bodies ship under `assets/templates/` and can be overridden per file from a
//! directory at run time.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Codegen,
    StaticAnalyze,
    SeedGen,
    FixFromStatic,
    FixFromFuzz,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Codegen,
        TemplateId::StaticAnalyze,
        TemplateId::SeedGen,
        TemplateId::FixFromStatic,
        TemplateId::FixFromFuzz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Codegen => "codegen",
            TemplateId::StaticAnalyze => "static_analyze",
            TemplateId::SeedGen => "seed_gen",
            TemplateId::FixFromStatic => "fix_from_static",
            TemplateId::FixFromFuzz => "fix_from_fuzz",
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::Codegen => include_str!("../../assets/templates/codegen.txt"),
            TemplateId::StaticAnalyze => include_str!("../../assets/templates/static_analyze.txt"),
            TemplateId::SeedGen => include_str!("../../assets/templates/seed_gen.txt"),
            TemplateId::FixFromStatic => include_str!("../../assets/templates/fix_from_static.txt"),
            TemplateId::FixFromFuzz => include_str!("../../assets/templates/fix_from_fuzz.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| LlmError::UnknownTemplate(s.to_string()))
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        let name = after[..close].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            out.push(Piece::Text(&rest[..open + 2]));
            rest = after;
            continue;
        }
        out.push(Piece::Text(&rest[..open]));
        out.push(Piece::Slot(name));
        rest = &after[close + 2..];
    }
    out.push(Piece::Text(rest));
    out
}

/// The five prompt bodies in use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    bodies: BTreeMap<TemplateId, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            bodies: TemplateId::ALL
                .into_iter()
                .map(|id| (id, id.builtin_body().to_string()))
                .collect(),
        }
    }

    /// Built-ins overridden by any `<id>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut set = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{id}.txt"));
            match fs::read_to_string(&path) {
                Ok(body) => {
                    set.bodies.insert(id, body);
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(set)
    }

    pub fn with_body(mut self, id: TemplateId, body: impl Into<String>) -> Self {
        self.bodies.insert(id, body.into());
        self
    }

    pub fn body(&self, id: TemplateId) -> &str {
        &self.bodies[&id]
    }

    /// Placeholder names referenced by a template, in order of first use.
    pub fn placeholders(&self, id: TemplateId) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for p in pieces(self.body(id)) {
            if let Piece::Slot(name) = p {
                if !seen.iter().any(|s| s == name) {
                    seen.push(name.to_string());
                }
            }
        }
        seen
    }

    /// Single-pass substitution: bound values are inserted verbatim and never
    /// rescanned for placeholders.
    pub fn render(&self, id: TemplateId, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        let mut out = String::new();
        for p in pieces(self.body(id)) {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| LlmError::MissingBinding(name.to_string()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Renders a built-in template by name.
pub fn render_prompt(template_id: &str, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
    let id: TemplateId = template_id.parse()?;
    TemplateSet::builtin().render(id, bindings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_bindings() -> Vec<(&'static str, &'static str)> {
        vec![
            ("requirements", "sum two ints"),
            ("entry_point", "add"),
            ("setup_imports", "none"),
            ("source", "def add(a, b):\n    return a + b"),
            ("findings", "- CWE-94"),
            ("crashes", "input [0]"),
            ("seed_count", "5"),
            ("param_types", "int, int"),
        ]
    }

    #[test]
    fn codegen_inlines_requirements() {
        let out = render_prompt("codegen", &full_bindings()).unwrap();
        assert!(out.contains("sum two ints"));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn missing_binding() {
        let err = render_prompt("codegen", &[]).unwrap_err();
        assert!(matches!(err, LlmError::MissingBinding(ref n) if n == "entry_point" || n == "requirements" || n == "setup_imports"));
        let set = TemplateSet::builtin().with_body(TemplateId::Codegen, "Do: {{requirements}}");
        assert_eq!(
            set.render(TemplateId::Codegen, &[]).unwrap_err(),
            LlmError::MissingBinding("requirements".into())
        );
    }

    #[test]
    fn unknown_template() {
        assert_eq!(
            render_prompt("summarize", &[]).unwrap_err(),
            LlmError::UnknownTemplate("summarize".into())
        );
    }

    #[test]
    fn deterministic() {
        let a = render_prompt("fix_from_fuzz", &full_bindings()).unwrap();
        let b = render_prompt("fix_from_fuzz", &full_bindings()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_markers_remain_in_any_template() {
        let set = TemplateSet::builtin();
        for id in TemplateId::ALL {
            let out = set.render(id, &full_bindings()).unwrap();
            assert!(!out.contains("{{"), "{id}");
            assert!(!set.placeholders(id).is_empty(), "{id}");
        }
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let set = TemplateSet::builtin().with_body(TemplateId::Codegen, "[{{requirements}}]");
        let out = set
            .render(TemplateId::Codegen, &[("requirements", "{{entry_point}}")])
            .unwrap();
        assert_eq!(out, "[{{entry_point}}]");
    }

    #[test]
    fn json_braces_are_literal() {
        let set = TemplateSet::builtin().with_body(TemplateId::StaticAnalyze, "{\"secure\": true} {{source}}");
        assert_eq!(
            set.render(TemplateId::StaticAnalyze, &[("source", "x")]).unwrap(),
            "{\"secure\": true} x"
        );
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("seed_gen.txt"), "seeds for {{entry_point}}").unwrap();
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.body(TemplateId::SeedGen), "seeds for {{entry_point}}");
        assert_eq!(set.body(TemplateId::Codegen), TemplateSet::builtin().body(TemplateId::Codegen));
    }
}
