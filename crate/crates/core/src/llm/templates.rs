//! Prompt templates with `{{slot}}` markers.
//!
//! Four templates drive the pipeline. Defaults are compiled in from
//! `templates/`; a directory with the same file names overrides them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template}: missing slot {slot:?}")]
    MissingSlot { template: String, slot: String },
    #[error("template {template}: {requested} few-shot examples requested, {available} available")]
    NotEnoughExamples {
        template: String,
        requested: usize,
        available: usize,
    },
    #[error("cannot read template {path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Curate,
    ExtractTriples,
    ResolvePlaceholders,
    FinalAnswer,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::Curate,
        TemplateName::ExtractTriples,
        TemplateName::ResolvePlaceholders,
        TemplateName::FinalAnswer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Curate => "curate",
            TemplateName::ExtractTriples => "extract_triples",
            TemplateName::ResolvePlaceholders => "resolve_placeholders",
            TemplateName::FinalAnswer => "final_answer",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Slots<'a> = BTreeMap<&'a str, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    pub few_shot_examples: Vec<FewShot>,
}

enum Piece<'t> {
    Text(&'t str),
    Slot(&'t str),
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        let name = after[..close].trim();
        let is_ident =
            !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if is_ident {
            out.push(Piece::Text(&rest[..open]));
            out.push(Piece::Slot(name));
        } else {
            out.push(Piece::Text(&rest[..open + 2 + close + 2]));
        }
        rest = &after[close + 2..];
    }
    out.push(Piece::Text(rest));
    out
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Self {
        Self {
            name,
            body: body.into(),
            few_shot_examples: Vec::new(),
        }
    }

    /// Slot names referenced by the body, in first-use order.
    pub fn slots(&self) -> Vec<&str> {
        let mut names = Vec::new();
        for p in pieces(&self.body) {
            if let Piece::Slot(s) = p {
                if !names.contains(&s) {
                    names.push(s);
                }
            }
        }
        names
    }

    /// The first `n` few-shot examples as `Question:`/`Answer:` blocks.
    pub fn examples_block(&self, n: usize) -> Result<String, TemplateError> {
        if n > self.few_shot_examples.len() {
            return Err(TemplateError::NotEnoughExamples {
                template: self.name.to_string(),
                requested: n,
                available: self.few_shot_examples.len(),
            });
        }
        let mut out = String::new();
        for ex in &self.few_shot_examples[..n] {
            out.push_str("Question: ");
            out.push_str(&ex.input);
            out.push_str("\nAnswer: ");
            out.push_str(&ex.output);
            out.push_str("\n\n");
        }
        Ok(out)
    }

    pub fn render(&self, slots: &Slots<'_>) -> Result<String, TemplateError> {
        render_prompt(self, slots)
    }
}

/// Substitute every `{{slot}}` in the template body. Unused entries in
/// `slots` are ignored.
pub fn render_prompt(template: &PromptTemplate, slots: &Slots<'_>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.body.len() + 256);
    for piece in pieces(&template.body) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => match slots.get(name) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(TemplateError::MissingSlot {
                        template: template.name.to_string(),
                        slot: name.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

/// Exactly one template per [`TemplateName`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

const DEFAULT_CURATE: &str = include_str!("../../templates/curate.txt");
const DEFAULT_EXTRACT: &str = include_str!("../../templates/extract_triples.txt");
const DEFAULT_EXTRACT_SHOTS: &str = include_str!("../../templates/extract_triples.examples.json");
const DEFAULT_RESOLVE: &str = include_str!("../../templates/resolve_placeholders.txt");
const DEFAULT_ANSWER: &str = include_str!("../../templates/final_answer.txt");
const DEFAULT_ANSWER_SHOTS: &str = include_str!("../../templates/final_answer.examples.json");

impl Default for TemplateSet {
    fn default() -> Self {
        let shots = |raw: &str| -> Vec<FewShot> {
            serde_json::from_str(raw).expect("bundled few-shot examples are valid JSON")
        };
        let mut templates = BTreeMap::new();
        templates.insert(TemplateName::Curate, PromptTemplate::new(TemplateName::Curate, DEFAULT_CURATE));
        templates.insert(
            TemplateName::ExtractTriples,
            PromptTemplate {
                few_shot_examples: shots(DEFAULT_EXTRACT_SHOTS),
                ..PromptTemplate::new(TemplateName::ExtractTriples, DEFAULT_EXTRACT)
            },
        );
        templates.insert(
            TemplateName::ResolvePlaceholders,
            PromptTemplate::new(TemplateName::ResolvePlaceholders, DEFAULT_RESOLVE),
        );
        templates.insert(
            TemplateName::FinalAnswer,
            PromptTemplate {
                few_shot_examples: shots(DEFAULT_ANSWER_SHOTS),
                ..PromptTemplate::new(TemplateName::FinalAnswer, DEFAULT_ANSWER)
            },
        );
        Self { templates }
    }
}

impl TemplateSet {
    /// Load `<name>.txt` for every template (and optional
    /// `<name>.examples.json`) from `dir`. All four files must exist.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut templates = BTreeMap::new();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{name}.txt"));
            let body = fs::read_to_string(&path).map_err(|e| TemplateError::Load {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let shots_path = dir.join(format!("{name}.examples.json"));
            let few_shot_examples = if shots_path.exists() {
                let raw = fs::read_to_string(&shots_path).map_err(|e| TemplateError::Load {
                    path: shots_path.display().to_string(),
                    message: e.to_string(),
                })?;
                serde_json::from_str(&raw).map_err(|e| TemplateError::Load {
                    path: shots_path.display().to_string(),
                    message: e.to_string(),
                })?
            } else {
                Vec::new()
            };
            templates.insert(
                name,
                PromptTemplate {
                    name,
                    body,
                    few_shot_examples,
                },
            );
        }
        Ok(Self { templates })
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots<'a>(pairs: &[(&'a str, &str)]) -> Slots<'a> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn curate_contains_inputs_verbatim() {
        let set = TemplateSet::default();
        let t = set.get(TemplateName::Curate);
        let q = "Who is the mother of the director of film Polish-Russian War?";
        let p = "[1] Polish-Russian War\nPolish-Russian War is a 2009 Polish film.";
        let out = t
            .render(&slots(&[("question", q), ("query", q), ("passages", p)]))
            .unwrap();
        assert!(out.contains(q));
        assert!(out.contains(p));
        assert!(!out.contains("{{"));
    }

    #[test]
    fn missing_slot_is_named() {
        let set = TemplateSet::default();
        let err = set
            .get(TemplateName::Curate)
            .render(&slots(&[("question", "q"), ("query", "q")]))
            .unwrap_err();
        match err {
            TemplateError::MissingSlot { slot, .. } => assert_eq!(slot, "passages"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let t = PromptTemplate::new(TemplateName::Curate, "a {{x}} b {{ y }} {{x}}");
        let s = slots(&[("x", "1"), ("y", "2")]);
        let a = t.render(&s).unwrap();
        assert_eq!(a, "a 1 b 2 1");
        assert_eq!(a, t.render(&s).unwrap());
    }

    #[test]
    fn non_identifier_braces_are_literal() {
        let t = PromptTemplate::new(TemplateName::Curate, "json {{\"a\": 1}} and {{slot}}");
        assert_eq!(t.slots(), ["slot"]);
        assert_eq!(t.render(&slots(&[("slot", "v")])).unwrap(), "json {{\"a\": 1}} and v");
    }

    #[test]
    fn default_set_has_four_templates() {
        let set = TemplateSet::default();
        let names: Vec<_> = set.iter().map(|t| t.name).collect();
        assert_eq!(names, TemplateName::ALL);
        assert_eq!(set.get(TemplateName::Curate).slots(), ["question", "query", "passages"]);
        assert!(set.get(TemplateName::FinalAnswer).few_shot_examples.len() >= 6);
    }

    #[test]
    fn examples_block_counts() {
        let set = TemplateSet::default();
        let t = set.get(TemplateName::FinalAnswer);
        let six = t.examples_block(6).unwrap();
        assert_eq!(six.matches("Question: ").count(), 6);
        assert!(t.examples_block(t.few_shot_examples.len() + 1).is_err());
        assert_eq!(t.examples_block(0).unwrap(), "");
    }

    #[test]
    fn load_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in TemplateName::ALL {
            std::fs::write(dir.path().join(format!("{name}.txt")), format!("{name}: {{{{question}}}}"))
                .unwrap();
        }
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        let out = set
            .get(TemplateName::FinalAnswer)
            .render(&slots(&[("question", "why")]))
            .unwrap();
        assert_eq!(out, "final_answer: why");

        std::fs::remove_file(dir.path().join("curate.txt")).unwrap();
        assert!(TemplateSet::load_dir(dir.path()).is_err());
    }
}
