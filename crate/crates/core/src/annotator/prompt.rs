//! Byte-frozen prompt templates.
//!
//! The instruction text of both prompts ships as asset files. Each asset is
//! pinned by its SHA-256; loading a file whose digest differs by even one byte
//! is a configuration error. The per-instance block is appended in code.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::hashing::sha256_hex;
use crate::{Error, Result};

pub const CONDITION_TEMPLATE_SHA256: &str =
    "1aaa693ca4de356436fd40da88c1bdeaa147100d040434abfbad1216741d6e55";
pub const RATING_TEMPLATE_SHA256: &str =
    "fece3611f5e896e2eb3fa8e31da30596d02225108a906d135f0e12af44229f8c";

const CONDITION_TEMPLATE: &str = include_str!("../../assets/condition_prompt.txt");
const RATING_TEMPLATE: &str = include_str!("../../assets/rating_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Condition check-and-rewrite.
    Condition,
    /// Few-shot similarity rating.
    Rating,
}

impl PromptKind {
    pub fn expected_sha256(self) -> &'static str {
        match self {
            PromptKind::Condition => CONDITION_TEMPLATE_SHA256,
            PromptKind::Rating => RATING_TEMPLATE_SHA256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: PromptKind,
    text: String,
    sha256: String,
}

impl PromptTemplate {
    pub fn from_text(kind: PromptKind, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let sha256 = sha256_hex(&text);
        if sha256 != kind.expected_sha256() {
            return Err(Error::Config(format!(
                "{kind:?} prompt template hash mismatch: expected {}, found {sha256}",
                kind.expected_sha256()
            )));
        }
        Ok(PromptTemplate { kind, text, sha256 })
    }

    /// The template compiled into the binary.
    pub fn builtin(kind: PromptKind) -> Self {
        let text = match kind {
            PromptKind::Condition => CONDITION_TEMPLATE,
            PromptKind::Rating => RATING_TEMPLATE,
        };
        Self::from_text(kind, text).expect("embedded prompt asset matches its pinned hash")
    }

    pub fn load(kind: PromptKind, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "cannot read {kind:?} prompt template {}: {e}",
                path.display()
            ))
        })?;
        Self::from_text(kind, text)
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    pub fn render(&self, inst: &Instance) -> String {
        match self.kind {
            PromptKind::Condition => {
                let mut out = format!(
                    "{}\nSentence1: {}\nSentence2: {}\nCondition: {}",
                    self.text, inst.sentence1, inst.sentence2, inst.condition
                );
                if let Some(label) = inst.label {
                    out.push_str(&format!("\nHuman label: {label}"));
                }
                out
            }
            PromptKind::Rating => format!(
                "{}\n## Input\nSentence1: {}\nSentence2: {}\nCondition: {}",
                self.text, inst.sentence1, inst.sentence2, inst.condition
            ),
        }
    }
}
