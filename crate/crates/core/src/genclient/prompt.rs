use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GenError;
use crate::corpus::DocumentRecord;

pub const PARAGRAPH_SLOT: &str = "{paragraph}";
pub const INSTRUCTION_SLOT: &str = "{instruction}";

const DEFAULT_INFERENCE: &str = include_str!("../../prompts/inference.txt");
const DEFAULT_QUERY_ENHANCED: &str = include_str!("../../prompts/rewrite_query_enhanced.txt");
const DEFAULT_COUNTERFACTUAL: &str = include_str!("../../prompts/rewrite_counterfactual.txt");

/// System text plus a user template with `{paragraph}` and `{instruction}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptParts {
    pub system_text: String,
    pub user_template: String,
}

impl Default for PromptParts {
    fn default() -> Self {
        Self::parse(DEFAULT_INFERENCE).expect("bundled inference prompt is well formed")
    }
}

impl PromptParts {
    /// Parses the `[system]` / `[user]` sectioned template format.
    pub fn parse(text: &str) -> Result<Self, GenError> {
        let text = text.replace("\r\n", "\n");
        let sys_at = text
            .find("[system]\n")
            .ok_or_else(|| GenError::Config("prompt template has no [system] section".into()))?;
        let user_at = text
            .find("\n[user]\n")
            .ok_or_else(|| GenError::Config("prompt template has no [user] section".into()))?;
        if user_at < sys_at {
            return Err(GenError::Config("[system] must precede [user]".into()));
        }
        let parts = Self {
            system_text: text[sys_at + "[system]\n".len()..user_at].trim_end().to_string(),
            user_template: text[user_at + "\n[user]\n".len()..].trim_end().to_string(),
        };
        parts.validate()?;
        Ok(parts)
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        for slot in [PARAGRAPH_SLOT, INSTRUCTION_SLOT] {
            let count = self.user_template.matches(slot).count();
            if count != 1 {
                return Err(GenError::Config(format!(
                    "user template must contain {slot} exactly once (found {count})"
                )));
            }
        }
        Ok(())
    }
}

/// A built prompt, kept as separate chat roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// Single-string form for completion endpoints: system text, blank line, user text.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

fn paragraph(docs: &[DocumentRecord]) -> String {
    docs.iter()
        .map(|d| match &d.title {
            Some(t) if !t.is_empty() => format!("{t}\n{}", d.text),
            _ => d.text.clone(),
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Documents joined in order by blank lines into `{paragraph}`, the question into
/// `{instruction}`.
pub fn build_prompt(docs: &[DocumentRecord], question: &str, parts: &PromptParts) -> Result<Prompt, GenError> {
    parts.validate()?;
    // single pass so slot text inside documents is never re-substituted
    let (before, rest) = parts.user_template.split_once(PARAGRAPH_SLOT).expect("validated");
    let body = paragraph(docs);
    let user = if let Some((mid, after)) = rest.split_once(INSTRUCTION_SLOT) {
        format!("{before}{body}{mid}{question}{after}")
    } else {
        let (b, m) = before.split_once(INSTRUCTION_SLOT).expect("validated");
        format!("{b}{question}{m}{body}{rest}")
    };
    Ok(Prompt {
        system: parts.system_text.clone(),
        user,
    })
}

/// Everything after the first `Answer:` marker, trimmed; the whole trimmed
/// response when there is no marker.
pub fn extract_answer(response: &str) -> String {
    match response.find("Answer:") {
        Some(i) => response[i + "Answer:".len()..].trim().to_string(),
        None => response.trim().to_string(),
    }
}

/// Editable rewrite prompts with `{question}`, `{answer}` and `{document}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteTemplates {
    pub query_enhanced: String,
    pub counterfactual: String,
}

impl Default for RewriteTemplates {
    fn default() -> Self {
        Self {
            query_enhanced: DEFAULT_QUERY_ENHANCED.to_string(),
            counterfactual: DEFAULT_COUNTERFACTUAL.to_string(),
        }
    }
}

impl RewriteTemplates {
    pub fn validate(&self) -> Result<(), GenError> {
        for (name, t) in [
            ("query_enhanced", &self.query_enhanced),
            ("counterfactual", &self.counterfactual),
        ] {
            for slot in ["{question}", "{answer}", "{document}"] {
                if !t.contains(slot) {
                    return Err(GenError::Config(format!(
                        "rewrite template {name} is missing {slot}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn fill(template: &str, question: &str, answer: &str, document: &str) -> String {
        template
            .replace("{question}", question)
            .replace("{answer}", answer)
            .replace("{document}", document)
    }

    /// Loads `rewrite_query_enhanced.txt` and `rewrite_counterfactual.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, GenError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| GenError::Config(format!("{}: {e}", dir.join(name).display())))
        };
        let t = Self {
            query_enhanced: read("rewrite_query_enhanced.txt")?,
            counterfactual: read("rewrite_counterfactual.txt")?,
        };
        t.validate()?;
        Ok(t)
    }
}
