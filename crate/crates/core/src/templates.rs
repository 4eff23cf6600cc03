//! Instruction templates sent along with every language-model request.
//!
//! The v1 defaults are compiled in; any of them can be replaced by a file at
//! startup. Placeholders are `{name}` tokens substituted verbatim.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    QuestionGeneration,
    VqaCount,
    VqaAttribute,
    KeyObjects,
    RefinePrompt,
    Paraphrase,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 6] = [
        TemplateKind::QuestionGeneration,
        TemplateKind::VqaCount,
        TemplateKind::VqaAttribute,
        TemplateKind::KeyObjects,
        TemplateKind::RefinePrompt,
        TemplateKind::Paraphrase,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::QuestionGeneration => "question_generation.txt",
            TemplateKind::VqaCount => "vqa_count.txt",
            TemplateKind::VqaAttribute => "vqa_attribute.txt",
            TemplateKind::KeyObjects => "key_objects.txt",
            TemplateKind::RefinePrompt => "refine_prompt.txt",
            TemplateKind::Paraphrase => "paraphrase.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::QuestionGeneration => {
                include_str!("../templates/v1/question_generation.txt")
            }
            TemplateKind::VqaCount => include_str!("../templates/v1/vqa_count.txt"),
            TemplateKind::VqaAttribute => include_str!("../templates/v1/vqa_attribute.txt"),
            TemplateKind::KeyObjects => include_str!("../templates/v1/key_objects.txt"),
            TemplateKind::RefinePrompt => include_str!("../templates/v1/refine_prompt.txt"),
            TemplateKind::Paraphrase => include_str!("../templates/v1/paraphrase.txt"),
        }
    }
}

/// Optional per-template file overrides, as read from the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    pub question_generation: Option<PathBuf>,
    pub vqa_count: Option<PathBuf>,
    pub vqa_attribute: Option<PathBuf>,
    pub key_objects: Option<PathBuf>,
    pub refine_prompt: Option<PathBuf>,
    pub paraphrase: Option<PathBuf>,
}

impl TemplatePaths {
    fn get(&self, kind: TemplateKind) -> Option<&PathBuf> {
        match kind {
            TemplateKind::QuestionGeneration => self.question_generation.as_ref(),
            TemplateKind::VqaCount => self.vqa_count.as_ref(),
            TemplateKind::VqaAttribute => self.vqa_attribute.as_ref(),
            TemplateKind::KeyObjects => self.key_objects.as_ref(),
            TemplateKind::RefinePrompt => self.refine_prompt.as_ref(),
            TemplateKind::Paraphrase => self.paraphrase.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    texts: [String; 6],
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            texts: TemplateKind::ALL.map(|k| k.builtin().to_owned()),
        }
    }
}

impl TemplateSet {
    pub fn load(paths: &TemplatePaths) -> std::io::Result<Self> {
        let mut set = Self::default();
        for (i, kind) in TemplateKind::ALL.into_iter().enumerate() {
            if let Some(path) = paths.get(kind) {
                set.texts[i] = fs::read_to_string(path).map_err(|e| {
                    std::io::Error::new(e.kind(), format!("template {}: {e}", path.display()))
                })?;
            }
        }
        Ok(set)
    }

    pub fn text(&self, kind: TemplateKind) -> &str {
        let i = TemplateKind::ALL
            .iter()
            .position(|&k| k == kind)
            .expect("listed");
        &self.texts[i]
    }

    pub fn render(&self, kind: TemplateKind, vars: &[(&str, &str)]) -> String {
        let mut out = self.text(kind).to_owned();
        for (name, value) in vars {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}
