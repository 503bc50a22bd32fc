//! Agent prompt templates and placeholder substitution.
//!
//! The templates are checked-in UTF-8 assets under `assets/prompts/`; their
//! SHA-256 digests are pinned by tests so an accidental edit is caught.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Slicer,
    Tester,
    Solver,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Slicer, AgentRole::Tester, AgentRole::Solver];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Slicer => "slicer",
            AgentRole::Tester => "tester",
            AgentRole::Solver => "solver",
        }
    }

    pub fn system_prompt(self) -> &'static str {
        match self {
            AgentRole::Slicer => SLICER_SYSTEM,
            AgentRole::Tester => TESTER_SYSTEM,
            AgentRole::Solver => SOLVER_SYSTEM,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slicer" => Ok(AgentRole::Slicer),
            "tester" => Ok(AgentRole::Tester),
            "solver" => Ok(AgentRole::Solver),
            other => Err(PromptError::UnknownRole(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Initial,
    Retry,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing binding for placeholder {{{0}}}")]
    MissingPlaceholder(&'static str),
    #[error("unknown agent role '{0}'")]
    UnknownRole(String),
}

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: &'static str,
    pub user: String,
}

pub const SLICER_SYSTEM: &str = include_str!("../assets/prompts/slicer_system.txt");
pub const SLICER_USER: &str = include_str!("../assets/prompts/slicer_user.txt");
pub const SLICER_RETRY: &str = include_str!("../assets/prompts/slicer_retry.txt");
pub const TESTER_SYSTEM: &str = include_str!("../assets/prompts/tester_system.txt");
pub const TESTER_USER: &str = include_str!("../assets/prompts/tester_user.txt");
pub const TESTER_RETRY: &str = include_str!("../assets/prompts/tester_retry.txt");
pub const SOLVER_SYSTEM: &str = include_str!("../assets/prompts/solver_system.txt");
pub const SOLVER_USER: &str = include_str!("../assets/prompts/solver_user.txt");
pub const SOLVER_RETRY: &str = include_str!("../assets/prompts/solver_retry.txt");

struct Template {
    text: &'static str,
    placeholders: &'static [&'static str],
}

fn template(role: AgentRole, kind: PromptKind) -> Template {
    const RETRY: &[&str] = &["error_message"];
    match (role, kind) {
        (AgentRole::Slicer, PromptKind::Initial) => Template {
            text: SLICER_USER,
            placeholders: &["full_schema", "candidate_sqls"],
        },
        (AgentRole::Tester, PromptKind::Initial) => Template {
            text: TESTER_USER,
            placeholders: &["sliced_schema", "question", "evidence_str", "sql_1", "sql_2"],
        },
        (AgentRole::Solver, PromptKind::Initial) => Template {
            text: SOLVER_USER,
            placeholders: &["test_data_with_types", "relationships", "df_names", "question", "evidence_str"],
        },
        (AgentRole::Slicer, PromptKind::Retry) => Template { text: SLICER_RETRY, placeholders: RETRY },
        (AgentRole::Tester, PromptKind::Retry) => Template { text: TESTER_RETRY, placeholders: RETRY },
        (AgentRole::Solver, PromptKind::Retry) => Template { text: SOLVER_RETRY, placeholders: RETRY },
    }
}

/// Placeholder names a template declares.
pub fn placeholders(role: AgentRole, kind: PromptKind) -> &'static [&'static str] {
    template(role, kind).placeholders
}

/// Substitutes `bindings` into the template for `(role, kind)`.
///
/// Only the template's declared `{name}` tokens are replaced, in a single
/// pass, so braces in bound values (SQL, JSON) are left alone.
pub fn render_prompt(
    role: AgentRole,
    kind: PromptKind,
    bindings: &Bindings,
) -> Result<RenderedPrompt, PromptError> {
    let t = template(role, kind);
    for &p in t.placeholders {
        if !bindings.contains_key(p) {
            return Err(PromptError::MissingPlaceholder(p));
        }
    }
    let mut out = String::with_capacity(t.text.len() + bindings.values().map(String::len).sum::<usize>());
    let mut rest = t.text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            t.placeholders.contains(&name).then(|| (close, &bindings[name]))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(RenderedPrompt { system: role.system_prompt(), user: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec::Vec;
    use sha2::{Digest, Sha256};

    fn bind(pairs: &[(&str, &str)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn slicer_initial_layout() {
        let p = render_prompt(
            AgentRole::Slicer,
            PromptKind::Initial,
            &bind(&[("full_schema", "S"), ("candidate_sqls", "Y")]),
        )
        .unwrap();
        assert!(p.user.starts_with("Full Database Schema:\nS\n\nCandidate SQL Queries:\nY\n\n"));
        assert!(p.system.starts_with("You are a database expert."));
    }

    #[test]
    fn tester_retry_mentions_ineffective() {
        let p = render_prompt(AgentRole::Tester, PromptKind::Retry, &bind(&[("error_message", "E")])).unwrap();
        assert!(p.user.contains("INEFFECTIVE"));
        assert!(p.user.contains("---\nE\n---"));
    }

    #[test]
    fn missing_placeholder_is_an_error() {
        let err = render_prompt(
            AgentRole::Solver,
            PromptKind::Initial,
            &bind(&[("test_data_with_types", ""), ("relationships", ""), ("question", ""), ("evidence_str", "")]),
        )
        .unwrap_err();
        assert_eq!(err, PromptError::MissingPlaceholder("df_names"));
        assert_eq!("judge".parse::<AgentRole>(), Err(PromptError::UnknownRole("judge".into())));
    }

    #[test]
    fn braces_in_values_are_not_rescanned() {
        let p = render_prompt(
            AgentRole::Tester,
            PromptKind::Retry,
            &bind(&[("error_message", "{error_message} {\"a\": 1}")]),
        )
        .unwrap();
        assert!(p.user.contains("---\n{error_message} {\"a\": 1}\n---"));
    }

    #[test]
    fn every_declared_placeholder_occurs_and_nothing_else_remains() {
        for role in AgentRole::ALL {
            for kind in [PromptKind::Initial, PromptKind::Retry] {
                let names = placeholders(role, kind);
                let b: Bindings = names.iter().map(|n| (n.to_string(), "\u{1}".to_string())).collect();
                let out = render_prompt(role, kind, &b).unwrap().user;
                let t = template(role, kind).text;
                for n in names {
                    assert!(t.contains(&alloc::format!("{{{n}}}")), "{role} {kind:?} lacks {n}");
                    assert!(!out.contains(&alloc::format!("{{{n}}}")));
                }
            }
        }
    }

    #[test]
    fn template_digests_are_pinned() {
        let digests: Vec<(&str, &str)> = [
            ("slicer_system", SLICER_SYSTEM),
            ("slicer_user", SLICER_USER),
            ("slicer_retry", SLICER_RETRY),
            ("tester_system", TESTER_SYSTEM),
            ("tester_user", TESTER_USER),
            ("tester_retry", TESTER_RETRY),
            ("solver_system", SOLVER_SYSTEM),
            ("solver_user", SOLVER_USER),
            ("solver_retry", SOLVER_RETRY),
        ]
        .into_iter()
        .collect();
        let mut got = Vec::new();
        for (n, t) in &digests {
            let d = Sha256::digest(t.as_bytes());
            let hex: String = d.iter().map(|b| alloc::format!("{b:02x}")).collect();
            got.push(alloc::format!("{n} {hex}"));
        }
        let expected = include_str!("../assets/prompts/SHA256SUMS").lines().collect::<Vec<_>>();
        assert_eq!(got, expected);
    }
}
