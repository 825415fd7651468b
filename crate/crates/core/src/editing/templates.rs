use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::EditingError;
use crate::corpus::FamilyCode;

const BUILTIN_TEMPLATES: &str = include_str!("../../data/templates.toml");

/// Phrases every family footer must contain.
pub const GUARDRAILS: [&str; 3] = ["clean silhouettes", "stroke continuity", "background cleanliness"];

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFrame {
    pub header: String,
    pub footer: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    version: Option<u32>,
    issue_templates: BTreeMap<String, String>,
    frames: BTreeMap<String, FamilyFrame>,
}

/// Repair instructions keyed by template key, plus per-family prompt frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    issue_templates: BTreeMap<String, String>,
    frames: BTreeMap<FamilyCode, FamilyFrame>,
}

fn malformed(msg: impl Into<String>) -> EditingError {
    EditingError::MalformedTemplates(msg.into())
}

impl TemplateRegistry {
    pub fn from_toml_str(text: &str) -> Result<Self, EditingError> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| malformed(e.to_string()))?;
        if let Some(v) = file.version {
            if v != 1 {
                return Err(malformed(format!("unsupported template version {v}")));
            }
        }
        for (key, text) in &file.issue_templates {
            if text.trim().is_empty() {
                return Err(malformed(format!("template {key:?} is empty")));
            }
        }
        let mut frames = BTreeMap::new();
        for (code, frame) in file.frames {
            let family: FamilyCode = code.parse().map_err(|_| EditingError::UnknownFamily(code.clone()))?;
            let footer = frame.footer.to_lowercase();
            if let Some(missing) = GUARDRAILS.iter().find(|g| !footer.contains(*g)) {
                return Err(malformed(format!("footer for {family} does not mention {missing:?}")));
            }
            frames.insert(family, frame);
        }
        if let Some(missing) = FamilyCode::ALL.iter().find(|f| !frames.contains_key(f)) {
            return Err(malformed(format!("no frame for family {missing}")));
        }
        Ok(TemplateRegistry {
            issue_templates: file.issue_templates,
            frames,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EditingError> {
        let text = std::fs::read_to_string(path).map_err(|source| EditingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The template file shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_TEMPLATES).expect("shipped templates are valid")
    }

    pub fn builtin_source() -> &'static str {
        BUILTIN_TEMPLATES
    }

    pub fn contains(&self, key: &str) -> bool {
        self.issue_templates.contains_key(key)
    }

    pub fn instruction(&self, key: &str) -> Option<&str> {
        self.issue_templates.get(key).map(String::as_str)
    }

    pub fn frame(&self, family: FamilyCode) -> &FamilyFrame {
        &self.frames[&family]
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> + '_ {
        self.issue_templates.keys().map(String::as_str)
    }

    /// `header \n instruction \n footer`.
    pub fn build_prompt(&self, family: FamilyCode, template_key: &str) -> Result<String, EditingError> {
        let instruction = self
            .instruction(template_key)
            .ok_or_else(|| EditingError::UnknownTemplate(template_key.to_string()))?;
        let frame = self.frame(family);
        Ok(format!("{}\n{}\n{}", frame.header, instruction, frame.footer))
    }
}
