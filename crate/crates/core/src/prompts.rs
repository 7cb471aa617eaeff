//! Prompt templates for the debate roles and the decision stage.
//!
//! A template file is a system prompt, a line containing only `---`, and
//! a user-prompt body with `{placeholder}` slots. Substitution is a
//! single pass over the template: substituted values are inserted
//! verbatim and never rescanned, so text that happens to contain
//! `{placeholder}` syntax (model output, user content) cannot inject into
//! other slots. Literal braces are written `{{` and `}}`.
//!
//! The built-in templates ship inside the binary; a directory of
//! same-named `.txt` files can override any subset of them.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {name}: missing `---` separator between system and user sections")]
    MissingSeparator { name: String },
    #[error("template {name}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("template {name}: required placeholder {{{placeholder}}} never appears")]
    MissingRequired { name: String, placeholder: String },
    #[error("template {name}: unclosed `{{` (write a literal brace as `{{{{`)")]
    UnclosedBrace { name: String },
    #[error("template {name}: no value supplied for {{{placeholder}}}")]
    MissingValue { name: String, placeholder: String },
    #[error("io error reading template {name}: {detail}")]
    Io { name: String, detail: String },
}

/// Names every template must answer to, with the placeholders each is
/// required (and allowed) to use.
const TEMPLATE_SPECS: [(&str, &[&str]); 7] = [
    ("analyst", &["tree", "nonce"]),
    ("critic", &["tree", "analyst", "nonce"]),
    ("empiricist", &["tree", "analyst", "nonce"]),
    ("synthesizer", &["tree", "analyst", "critic", "empiricist", "nonce"]),
    ("decision", &["tree", "mediator", "demonstrations", "labels", "nonce"]),
    ("decision_direct", &["tree", "labels", "nonce"]),
    ("decision_inference_only", &["mediator", "labels", "nonce"]),
];

/// One parsed template: system prompt plus a user body with placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: String,
    system: String,
    user_body: String,
    required: Vec<&'static str>,
}

/// Pieces of a template body: literal runs and placeholder slots.
enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn scan<'a>(name: &str, body: &'a str) -> Result<Vec<Segment<'a>>, PromptError> {
    let mut segments = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find(['{', '}']) {
        let (before, at) = rest.split_at(open);
        if !before.is_empty() {
            segments.push(Segment::Literal(before));
        }
        if at.starts_with("{{") {
            segments.push(Segment::Literal("{"));
            rest = &at[2..];
            continue;
        }
        if at.starts_with("}}") {
            segments.push(Segment::Literal("}"));
            rest = &at[2..];
            continue;
        }
        if at.starts_with('}') {
            return Err(PromptError::UnclosedBrace {
                name: name.to_string(),
            });
        }
        let close = at.find('}').ok_or_else(|| PromptError::UnclosedBrace {
            name: name.to_string(),
        })?;
        let ident = &at[1..close];
        if ident.is_empty() || !ident.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(PromptError::UnclosedBrace {
                name: name.to_string(),
            });
        }
        segments.push(Segment::Slot(ident));
        rest = &at[close + 1..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Literal(rest));
    }
    Ok(segments)
}

impl PromptTemplate {
    fn parse(name: &str, content: &str) -> Result<Self, PromptError> {
        let required = TEMPLATE_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| p.to_vec())
            .unwrap_or_default();
        let mut parts = content.splitn(2, "\n---\n");
        let system = parts.next().unwrap_or("").trim().to_string();
        let user_body = parts
            .next()
            .ok_or_else(|| PromptError::MissingSeparator {
                name: name.to_string(),
            })?
            .trim()
            .to_string();
        // Validate slots now so a bad override fails at load, not mid-run.
        let mut seen: Vec<&str> = Vec::new();
        for segment in scan(name, &user_body)? {
            if let Segment::Slot(ident) = segment {
                if !required.iter().any(|r| *r == ident) {
                    return Err(PromptError::UnknownPlaceholder {
                        name: name.to_string(),
                        placeholder: ident.to_string(),
                    });
                }
                if !seen.contains(&ident) {
                    seen.push(ident);
                }
            }
        }
        for r in &required {
            if !seen.contains(r) {
                return Err(PromptError::MissingRequired {
                    name: name.to_string(),
                    placeholder: r.to_string(),
                });
            }
        }
        Ok(Self {
            name: name.to_string(),
            system,
            user_body,
            required,
        })
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    /// Fill every slot from `values`, erroring on any missing key.
    pub fn render_user(&self, values: &HashMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.user_body.len());
        for segment in scan(&self.name, &self.user_body).expect("validated at parse") {
            match segment {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(ident) => {
                    let value = values.get(ident).ok_or_else(|| PromptError::MissingValue {
                        name: self.name.clone(),
                        placeholder: ident.to_string(),
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    pub fn required_placeholders(&self) -> &[&'static str] {
        &self.required
    }
}

/// The full set of templates the pipeline uses.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: HashMap<String, PromptTemplate>,
}

const BUILTIN: [(&str, &str); 7] = [
    ("analyst", include_str!("../assets/prompts/analyst.txt")),
    ("critic", include_str!("../assets/prompts/critic.txt")),
    ("empiricist", include_str!("../assets/prompts/empiricist.txt")),
    ("synthesizer", include_str!("../assets/prompts/synthesizer.txt")),
    ("decision", include_str!("../assets/prompts/decision.txt")),
    ("decision_direct", include_str!("../assets/prompts/decision_direct.txt")),
    (
        "decision_inference_only",
        include_str!("../assets/prompts/decision_inference_only.txt"),
    ),
];

impl PromptSet {
    /// Templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut templates = HashMap::new();
        for (name, content) in BUILTIN {
            let t = PromptTemplate::parse(name, content).expect("builtin templates are valid");
            templates.insert(name.to_string(), t);
        }
        Self { templates }
    }

    /// Built-ins with any same-named `<dir>/<name>.txt` overriding.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let content = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    name: name.to_string(),
                    detail: e.to_string(),
                })?;
                set.templates
                    .insert(name.to_string(), PromptTemplate::parse(name, &content)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> &PromptTemplate {
        self.templates
            .get(name)
            .unwrap_or_else(|| panic!("unknown template {name:?}"))
    }
}
