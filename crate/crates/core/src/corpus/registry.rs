use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dimension, FamilyCode, TaskCode};
use crate::editing::TemplateRegistry;

/// Minimum and maximum number of checkbox options per task.
pub const MIN_OPTIONS: usize = 3;
pub const MAX_OPTIONS: usize = 7;

const BUILTIN_REGISTRY: &str = include_str!("../../data/registry.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskFamily {
    pub code: FamilyCode,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualityDimension {
    pub code: Dimension,
    pub name: String,
    pub description: String,
}

/// Whether selecting an option asserts a defect or a pass state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Defect,
    Pass,
}

/// A checkbox option of one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionDef {
    pub option_id: String,
    pub task: TaskCode,
    pub description: String,
    pub polarity: Polarity,
    pub actionable: bool,
    /// Key into the repair-instruction templates; set for actionable options.
    pub template_key: Option<String>,
}

/// The validated option registry. Immutable after load.
#[derive(Debug, Clone)]
pub struct Registry {
    families: Vec<TaskFamily>,
    dimensions: Vec<QualityDimension>,
    tasks: BTreeMap<TaskCode, Vec<OptionDef>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    version: Option<u32>,
    #[serde(default)]
    families: Vec<FamilyEntry>,
    #[serde(default)]
    dimensions: Vec<DimensionEntry>,
    #[serde(default)]
    tasks: Vec<TaskEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyEntry {
    code: String,
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DimensionEntry {
    code: String,
    name: String,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    code: String,
    options: Vec<OptionEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionEntry {
    id: String,
    description: String,
    polarity: Polarity,
    actionable: bool,
    #[serde(default)]
    template_key: Option<String>,
}

fn malformed(msg: impl Into<String>) -> CorpusError {
    CorpusError::MalformedRegistry(msg.into())
}

impl Registry {
    /// Parses and validates a registry document. Template keys are checked
    /// separately by [`Registry::check_templates`].
    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| malformed(e.to_string()))?;
        if let Some(v) = file.version {
            if v != 1 {
                return Err(malformed(format!("unsupported registry version {v}")));
            }
        }

        let mut families = Vec::new();
        for entry in file.families {
            let code: FamilyCode = entry.code.parse().map_err(malformed)?;
            if families.iter().any(|f: &TaskFamily| f.code == code) {
                return Err(malformed(format!("family {code} listed twice")));
            }
            if entry.name.trim().is_empty() {
                return Err(malformed(format!("family {code} has an empty name")));
            }
            families.push(TaskFamily {
                code,
                display_name: entry.name,
            });
        }
        if families.len() != FamilyCode::ALL.len() {
            return Err(malformed(format!(
                "expected exactly 6 families, found {}",
                families.len()
            )));
        }
        families.sort_by_key(|f| f.code);

        let mut dimensions = Vec::new();
        for entry in file.dimensions {
            let code: Dimension = entry.code.parse().map_err(malformed)?;
            if dimensions.iter().any(|d: &QualityDimension| d.code == code) {
                return Err(malformed(format!("dimension {code} listed twice")));
            }
            dimensions.push(QualityDimension {
                code,
                name: entry.name,
                description: entry.description,
            });
        }
        if dimensions.len() != Dimension::ALL.len() {
            return Err(malformed(format!(
                "expected exactly 5 dimensions, found {}",
                dimensions.len()
            )));
        }
        dimensions.sort_by_key(|d| d.code);

        if file.tasks.is_empty() {
            return Err(malformed("registry defines no tasks"));
        }
        let mut tasks = BTreeMap::new();
        for entry in file.tasks {
            let task: TaskCode = entry.code.parse().map_err(malformed)?;
            if tasks.contains_key(&task) {
                return Err(malformed(format!("task {task} listed twice")));
            }
            let mut seen = BTreeSet::new();
            let mut options = Vec::with_capacity(entry.options.len());
            for opt in entry.options {
                if opt.id.is_empty() || opt.id.chars().any(|c| c.is_whitespace() || c == ';') {
                    return Err(malformed(format!(
                        "task {task}: option id {:?} must be a non-empty token without whitespace or ';'",
                        opt.id
                    )));
                }
                if !seen.insert(opt.id.clone()) {
                    return Err(CorpusError::DuplicateOption {
                        task,
                        option_id: opt.id,
                    });
                }
                if opt.polarity == Polarity::Pass && opt.actionable {
                    return Err(CorpusError::ActionablePass {
                        task,
                        option_id: opt.id,
                    });
                }
                let template_key = opt.template_key.filter(|k| !k.is_empty());
                if opt.actionable && template_key.is_none() {
                    return Err(CorpusError::UnresolvedTemplate {
                        task,
                        option_id: opt.id,
                        key: String::new(),
                    });
                }
                options.push(OptionDef {
                    option_id: opt.id,
                    task,
                    description: opt.description,
                    polarity: opt.polarity,
                    actionable: opt.actionable,
                    template_key,
                });
            }
            if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&options.len()) {
                return Err(malformed(format!(
                    "task {task} has {} options; expected between {MIN_OPTIONS} and {MAX_OPTIONS}",
                    options.len()
                )));
            }
            tasks.insert(task, options);
        }

        Ok(Registry {
            families,
            dimensions,
            tasks,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// The registry shipped with the crate (all 30 tasks).
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_REGISTRY).expect("builtin registry is valid")
    }

    /// Raw text of the shipped registry file.
    pub fn builtin_source() -> &'static str {
        BUILTIN_REGISTRY
    }

    /// Verifies that every actionable option's template key resolves.
    pub fn check_templates(&self, has_key: impl Fn(&str) -> bool) -> Result<(), CorpusError> {
        for opt in self.all_options() {
            if let Some(key) = opt.template_key.as_deref() {
                if opt.actionable && !has_key(key) {
                    return Err(CorpusError::UnresolvedTemplate {
                        task: opt.task,
                        option_id: opt.option_id.clone(),
                        key: key.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn families(&self) -> &[TaskFamily] {
        &self.families
    }

    pub fn dimensions(&self) -> &[QualityDimension] {
        &self.dimensions
    }

    pub fn family_name(&self, code: FamilyCode) -> &str {
        self.families
            .iter()
            .find(|f| f.code == code)
            .map(|f| f.display_name.as_str())
            .unwrap_or("")
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskCode> + '_ {
        self.tasks.keys().copied()
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Options of a task in registry order; empty if the task is unknown.
    pub fn options(&self, task: TaskCode) -> &[OptionDef] {
        self.tasks.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn option(&self, task: TaskCode, option_id: &str) -> Option<&OptionDef> {
        self.options(task).iter().find(|o| o.option_id == option_id)
    }

    pub fn all_options(&self) -> impl Iterator<Item = &OptionDef> + '_ {
        self.tasks.values().flatten()
    }

    pub fn option_count(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }
}

/// Loads a registry file and checks its template keys against `templates`.
pub fn load_registry(path: &Path, templates: &TemplateRegistry) -> Result<Registry, CorpusError> {
    let registry = Registry::load(path)?;
    registry.check_templates(|key| templates.contains(key))?;
    Ok(registry)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const HEADER: &str = r#"
[[families]]
code = "F1"
name = "Animals & Creatures"
[[families]]
code = "F2"
name = "Vehicles & Flight"
[[families]]
code = "F3"
name = "Furniture & Structures"
[[families]]
code = "F4"
name = "Wearables & Accessories"
[[families]]
code = "F5"
name = "Tools & Instruments"
[[families]]
code = "F6"
name = "Food & Nature"

[[dimensions]]
code = "QV"
name = "View Match"
[[dimensions]]
code = "QP"
name = "Required Parts"
[[dimensions]]
code = "QB"
name = "Identity & Background"
[[dimensions]]
code = "QT"
name = "Texture Separation"
[[dimensions]]
code = "QL"
name = "Line Quality"
"#;

    fn option(id: &str, polarity: &str, actionable: bool, key: Option<&str>) -> String {
        let mut s = format!(
            "[[tasks.options]]\nid = \"{id}\"\ndescription = \"{id} text\"\npolarity = \"{polarity}\"\nactionable = {actionable}\n"
        );
        if let Some(k) = key {
            s.push_str(&format!("template_key = \"{k}\"\n"));
        }
        s
    }

    fn f1qv() -> String {
        let mut s = format!("{HEADER}\n[[tasks]]\ncode = \"F1QV\"\n");
        s.push_str(&option("angle_match", "pass", false, None));
        for id in ["view_frontal", "view_side", "top_view", "view_perspective"] {
            s.push_str(&option(id, "defect", true, Some(id)));
        }
        s
    }

    #[test]
    fn loads_f1qv_with_pass_angle_match() {
        let reg = Registry::from_toml_str(&f1qv()).unwrap();
        let task: TaskCode = "F1QV".parse().unwrap();
        let ids: Vec<_> = reg.options(task).iter().map(|o| o.option_id.as_str()).collect();
        assert_eq!(
            ids,
            ["angle_match", "view_frontal", "view_side", "top_view", "view_perspective"]
        );
        assert_eq!(reg.option(task, "angle_match").unwrap().polarity, Polarity::Pass);
        assert_eq!(reg.option_count(), 5);
    }

    #[test]
    fn duplicate_option_is_rejected() {
        let mut s = format!("{HEADER}\n[[tasks]]\ncode = \"F1QL\"\n");
        s.push_str(&option("too_thick", "defect", true, Some("too_thick")));
        s.push_str(&option("too_thick", "defect", true, Some("too_thick")));
        s.push_str(&option("no_line_issues", "pass", false, None));
        let err = Registry::from_toml_str(&s).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateOption { ref option_id, .. } if option_id == "too_thick"));
    }

    #[test]
    fn empty_registry_is_rejected() {
        assert!(matches!(
            Registry::from_toml_str(""),
            Err(CorpusError::MalformedRegistry(_))
        ));
        assert!(matches!(
            Registry::from_toml_str(HEADER),
            Err(CorpusError::MalformedRegistry(_))
        ));
    }

    #[test]
    fn actionable_pass_option_is_rejected() {
        let mut s = format!("{HEADER}\n[[tasks]]\ncode = \"F1QL\"\n");
        s.push_str(&option("too_thick", "defect", true, Some("too_thick")));
        s.push_str(&option("broken_lines", "defect", true, Some("broken_lines")));
        s.push_str(&option("no_line_issues", "pass", true, Some("x")));
        assert!(matches!(
            Registry::from_toml_str(&s),
            Err(CorpusError::ActionablePass { .. })
        ));
    }

    #[test]
    fn unresolvable_template_key_is_rejected() {
        let reg = Registry::from_toml_str(&f1qv()).unwrap();
        let err = reg.check_templates(|k| k != "top_view").unwrap_err();
        assert!(matches!(err, CorpusError::UnresolvedTemplate { ref key, .. } if key == "top_view"));
    }

    #[test]
    fn option_count_bounds_are_enforced() {
        let mut s = format!("{HEADER}\n[[tasks]]\ncode = \"F1QL\"\n");
        s.push_str(&option("too_thick", "defect", true, Some("too_thick")));
        s.push_str(&option("no_line_issues", "pass", false, None));
        assert!(Registry::from_toml_str(&s).is_err());
    }

    #[test]
    fn builtin_registry_satisfies_invariants() {
        let reg = Registry::builtin();
        assert_eq!(reg.task_count(), 30);
        assert_eq!(reg.families().len(), 6);
        assert_eq!(reg.family_name(FamilyCode::F2), "Vehicles & Flight");
        assert_eq!(reg.family_name(FamilyCode::F6), "Food & Nature");
        for opt in reg.all_options() {
            if opt.polarity == Polarity::Pass {
                assert!(!opt.actionable);
            }
        }
        let templates = TemplateRegistry::builtin();
        reg.check_templates(|k| templates.contains(k)).unwrap();
        let too_thick = reg.option("F1QL".parse().unwrap(), "too_thick").unwrap();
        assert_eq!(too_thick.description, "overly bold strokes");
        for pass in ["angle_match", "no_line_issues"] {
            assert!(reg
                .all_options()
                .filter(|o| o.option_id == pass)
                .all(|o| o.polarity == Polarity::Pass));
        }
    }
}
