use std::collections::BTreeSet;

use crate::python::{is_identifier, LexError, Module, StmtKind};

use super::SliceError;

/// The part of a candidate that the harness needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionUnit {
    pub entry_point: String,
    /// `from __future__` imports; these must open the assembled file.
    pub future_imports: Vec<String>,
    /// Every other kept statement, in source order, separated by blank lines.
    pub body: String,
}

impl FunctionUnit {
    pub fn text(&self) -> String {
        let mut parts = self.future_imports.clone();
        parts.push(self.body.clone());
        parts.join("\n\n")
    }
}

/// Slices `source` down to the last definition of `entry_point` plus every
/// top-level statement it transitively depends on.
///
/// A statement is kept when it binds a name used by something already kept.
/// Star imports and `__future__` imports are always kept because their
/// bindings cannot be seen lexically. Earlier definitions of the entry point
/// itself are shadowed and dropped.
pub fn extract_function(source: &str, entry_point: &str) -> Result<FunctionUnit, SliceError> {
    if !is_identifier(entry_point) {
        return Err(SliceError::EntryPointNotFound(entry_point.to_string()));
    }
    let module = Module::parse(source).map_err(|LexError { line, message }| SliceError::SyntaxUnparseable {
        line,
        message,
    })?;
    let entry = module
        .last_def(entry_point)
        .ok_or_else(|| SliceError::EntryPointNotFound(entry_point.to_string()))?;

    let mut keep = vec![false; module.stmts.len()];
    keep[entry] = true;
    for (i, s) in module.stmts.iter().enumerate() {
        if matches!(s.kind, StmtKind::Import { future: true, .. } | StmtKind::Import { star: true, .. }) {
            keep[i] = true;
        }
    }

    let mut needed: BTreeSet<String> = BTreeSet::new();
    let mut frontier: Vec<String> = module.stmts[entry].uses.iter().cloned().collect();
    while let Some(name) = frontier.pop() {
        if !needed.insert(name.clone()) {
            continue;
        }
        for (i, s) in module.stmts.iter().enumerate() {
            if keep[i] || !s.binds.contains(&name) {
                continue;
            }
            if name == entry_point && matches!(s.kind, StmtKind::Def(_)) {
                continue;
            }
            keep[i] = true;
            frontier.extend(s.uses.iter().filter(|u| !needed.contains(*u)).cloned());
        }
    }

    let mut future_imports = Vec::new();
    let mut body = Vec::new();
    for (i, s) in module.stmts.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        if matches!(s.kind, StmtKind::Import { future: true, .. }) {
            future_imports.push(module.text(i));
        } else {
            body.push(module.text(i));
        }
    }
    Ok(FunctionUnit {
        entry_point: entry_point.to_string(),
        future_imports,
        body: body.join("\n\n"),
    })
}
