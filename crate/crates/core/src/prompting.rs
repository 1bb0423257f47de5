//! Prompt construction for every experimental condition and persona
//! variant, and parsing of agent replies.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::game::{Action, Role};
use crate::scenarios::{render_payoff_text, RenderMode, Scenario};

/// Persona text used for every role when personas are switched off.
pub const NEUTRAL_DESCRIPTION: &str = "You are a player in a strategic game. Choose an action based on the payoff information provided. Action A: Choose option that is a best response to others' expected actions (Nash equilibrium). Action B: Choose option that is a best response to others' expected actions (Nash equilibrium).";

pub const RESPONSE_INSTRUCTION: &str = "Respond in JSON exactly as:\n{\n  \"action\": \"<KEY>\",\n  \"rationale\": \"<short explanation>\"\n}";

pub const PAYOFF_CAPTION: &str = "Payoff matrix (higher values are better):";

/// Menu text for an action.
pub fn action_description(action: Action) -> &'static str {
    match (action.role(), action.index()) {
        (Role::Industrialist, 0) => "Maximize profit via lax pollution controls",
        (Role::Industrialist, _) => "Invest in clean production, accepting lower short-term margins",
        (Role::Government, 0) => "Maintain status quo without new regulation",
        (Role::Government, _) => "Impose environmental regulation with enforcement mechanisms",
        (Role::Activist, 0) => "Conserve resources and wait for a better moment",
        (Role::Activist, _) => "Mobilize campaigns, media, and protests",
        (Role::Citizen, 0) => "Prioritize low-cost goods and short-term affordability",
        (Role::Citizen, _) => "Pay more for green products and vote for environmental policy",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VariantId {
    Default,
    AltPrompt,
    Minimalist,
    IdeologicalExtreme,
    IncentivePrioritized,
    SemanticSynonyms,
    /// A variant added through a user registry file.
    Custom(String),
}

impl VariantId {
    pub const BUILTIN: [VariantId; 6] = [
        VariantId::Default,
        VariantId::AltPrompt,
        VariantId::Minimalist,
        VariantId::IdeologicalExtreme,
        VariantId::IncentivePrioritized,
        VariantId::SemanticSynonyms,
    ];

    pub fn key(&self) -> &str {
        match self {
            VariantId::Default => "default",
            VariantId::AltPrompt => "altprompt",
            VariantId::Minimalist => "minimalist",
            VariantId::IdeologicalExtreme => "ideological_extreme",
            VariantId::IncentivePrioritized => "incentive_prioritized",
            VariantId::SemanticSynonyms => "semantic_synonyms",
            VariantId::Custom(k) => k,
        }
    }

    pub fn from_key(key: &str) -> VariantId {
        let k = key.trim().to_ascii_lowercase().replace('-', "_");
        VariantId::BUILTIN
            .iter()
            .find(|v| v.key() == k)
            .cloned()
            .unwrap_or(VariantId::Custom(k))
    }

    fn rank(&self) -> usize {
        VariantId::BUILTIN.iter().position(|v| v == self).unwrap_or(VariantId::BUILTIN.len())
    }
}

impl Ord for VariantId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank()).then_with(|| self.key().cmp(other.key()))
    }
}

impl PartialOrd for VariantId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// `On` sorts before `Off`, matching the reporting order of conditions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Persona {
    On(VariantId),
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Visibility {
    Hidden,
    Visible,
}

/// One cell of the persona x payoff-visibility design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub visibility: Visibility,
    pub persona: Persona,
}

impl Condition {
    pub fn new(persona: Persona, visibility: Visibility) -> Condition {
        Condition { visibility, persona }
    }

    /// The four base cells, in reporting order.
    pub fn base_grid() -> Vec<Condition> {
        vec![
            Condition::new(Persona::On(VariantId::Default), Visibility::Hidden),
            Condition::new(Persona::Off, Visibility::Hidden),
            Condition::new(Persona::On(VariantId::Default), Visibility::Visible),
            Condition::new(Persona::Off, Visibility::Visible),
        ]
    }

    /// Every built-in persona variant at one visibility.
    pub fn variant_sweep(visibility: Visibility) -> Vec<Condition> {
        VariantId::BUILTIN.iter().map(|v| Condition::new(Persona::On(v.clone()), visibility)).collect()
    }

    /// Stable machine key, e.g. `hidden+persona`, `visible+nopersona`,
    /// `hidden+persona:minimalist`.
    pub fn key(&self) -> String {
        let vis = match self.visibility {
            Visibility::Hidden => "hidden",
            Visibility::Visible => "visible",
        };
        match &self.persona {
            Persona::Off => format!("{vis}+nopersona"),
            Persona::On(VariantId::Default) => format!("{vis}+persona"),
            Persona::On(v) => format!("{vis}+persona:{v}"),
        }
    }

    /// Human label, e.g. `Hidden+Persona`, `Visible+No persona`.
    pub fn label(&self) -> String {
        let vis = match self.visibility {
            Visibility::Hidden => "Hidden",
            Visibility::Visible => "Visible",
        };
        match &self.persona {
            Persona::Off => format!("{vis}+No persona"),
            Persona::On(VariantId::Default) => format!("{vis}+Persona"),
            Persona::On(v) => format!("{vis}+Persona[{v}]"),
        }
    }

    /// Result-table label, e.g. `Hidden_WithPersona`.
    pub fn table_label(&self) -> String {
        let vis = match self.visibility {
            Visibility::Hidden => "Hidden",
            Visibility::Visible => "Visible",
        };
        match &self.persona {
            Persona::Off => format!("{vis}_WithoutPersona"),
            Persona::On(VariantId::Default) => format!("{vis}_WithPersona"),
            Persona::On(v) => format!("{vis}_WithPersona[{v}]"),
        }
    }

    pub fn variant(&self) -> Option<&VariantId> {
        match &self.persona {
            Persona::On(v) => Some(v),
            Persona::Off => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid condition {0:?}: expected <hidden|visible>+<persona[:variant]|nopersona>")]
pub struct ConditionParseError(pub String);

impl FromStr for Condition {
    type Err = ConditionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ConditionParseError(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        let (vis, persona) = lower.split_once('+').ok_or_else(err)?;
        let visibility = match vis {
            "hidden" => Visibility::Hidden,
            "visible" => Visibility::Visible,
            _ => return Err(err()),
        };
        let persona = match persona {
            "nopersona" | "no_persona" | "off" => Persona::Off,
            "persona" | "on" => Persona::On(VariantId::Default),
            other => match other.strip_prefix("persona:") {
                Some(v) if !v.is_empty() => Persona::On(VariantId::from_key(v)),
                _ => return Err(err()),
            },
        };
        Ok(Condition::new(persona, visibility))
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("variant registry is not valid TOML: {0}")]
    Syntax(String),
    #[error("variant {0} inherits from unknown variant {1}")]
    UnknownBase(String, String),
    #[error("variant {0} has a cyclic base chain")]
    Cycle(String),
    #[error("variant {0} gives no description for {1}")]
    MissingDescription(String, Role),
    #[error("unknown persona variant {0}")]
    UnknownVariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantEntry {
    base: Option<String>,
    #[serde(default)]
    reconstructed: bool,
    #[serde(default)]
    labels: BTreeMap<Role, String>,
    #[serde(default)]
    descriptions: BTreeMap<Role, String>,
    description: Option<String>,
    append: Option<String>,
}

/// Resolved label and persona description for one role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonaText {
    pub label: String,
    pub description: String,
}

/// Persona variants, fully resolved at load time.
#[derive(Debug, Clone)]
pub struct VariantRegistry {
    variants: BTreeMap<VariantId, ([PersonaText; 4], bool)>,
}

impl VariantRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> VariantRegistry {
        VariantRegistry::from_toml(include_str!("../data/variants.toml")).expect("bundled registry is valid")
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<VariantRegistry, RegistryError> {
        VariantRegistry::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml(text: &str) -> Result<VariantRegistry, RegistryError> {
        let raw: BTreeMap<String, VariantEntry> =
            toml::from_str(text).map_err(|e| RegistryError::Syntax(e.to_string()))?;
        let mut variants = BTreeMap::new();
        for name in raw.keys() {
            let texts = resolve(&raw, name, 0)?;
            variants.insert(VariantId::from_key(name), (texts, raw[name].reconstructed));
        }
        Ok(VariantRegistry { variants })
    }

    pub fn ids(&self) -> impl Iterator<Item = &VariantId> {
        self.variants.keys()
    }

    pub fn is_reconstructed(&self, variant: &VariantId) -> bool {
        self.variants.get(variant).is_some_and(|v| v.1)
    }

    /// Label and description a variant assigns to a role.
    pub fn apply_variant(&self, variant: &VariantId, role: Role) -> Result<PersonaText, RegistryError> {
        self.variants
            .get(variant)
            .map(|(texts, _)| texts[role.index()].clone())
            .ok_or_else(|| RegistryError::UnknownVariant(variant.key().to_string()))
    }
}

fn resolve(
    raw: &BTreeMap<String, VariantEntry>,
    name: &str,
    depth: usize,
) -> Result<[PersonaText; 4], RegistryError> {
    if depth > raw.len() {
        return Err(RegistryError::Cycle(name.to_string()));
    }
    let entry = &raw[name];
    let base = match &entry.base {
        Some(b) => {
            if !raw.contains_key(b) {
                return Err(RegistryError::UnknownBase(name.to_string(), b.clone()));
            }
            Some(resolve(raw, b, depth + 1)?)
        }
        None => None,
    };
    let mut out = Vec::with_capacity(4);
    for role in Role::ALL {
        let inherited = base.as_ref().map(|b| &b[role.index()]);
        let label = entry
            .labels
            .get(&role)
            .cloned()
            .or_else(|| inherited.map(|t| t.label.clone()))
            .unwrap_or_else(|| role.label().to_string());
        let mut description = entry
            .descriptions
            .get(&role)
            .cloned()
            .or_else(|| entry.description.as_ref().map(|t| t.replace("{role}", role.label())))
            .or_else(|| inherited.map(|t| t.description.clone()))
            .ok_or_else(|| RegistryError::MissingDescription(name.to_string(), role))?;
        if let Some(extra) = &entry.append {
            description.push(' ');
            description.push_str(extra);
        }
        out.push(PersonaText { label, description });
    }
    Ok(out.try_into().expect("four roles"))
}

/// One line of a conversation transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub action_menu: [(String, String); 2],
}

pub fn format_history(history: &[Utterance]) -> String {
    if history.is_empty() {
        return "(none)".to_string();
    }
    history.iter().map(|u| format!("{}: {}", u.role.label(), u.text)).collect::<Vec<_>>().join("\n")
}

/// Builds prompts from a variant registry and a payoff rendering mode.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    registry: VariantRegistry,
    render_mode: RenderMode,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        PromptBuilder { registry: VariantRegistry::builtin(), render_mode: RenderMode::OwnPayoff }
    }
}

impl PromptBuilder {
    pub fn new(registry: VariantRegistry, render_mode: RenderMode) -> PromptBuilder {
        PromptBuilder { registry, render_mode }
    }

    pub fn registry(&self) -> &VariantRegistry {
        &self.registry
    }

    pub fn build_prompt(
        &self,
        scenario: &Scenario,
        role: Role,
        condition: &Condition,
        history: &[Utterance],
    ) -> Result<PromptBundle, RegistryError> {
        let persona = match &condition.persona {
            Persona::On(v) => self.registry.apply_variant(v, role)?,
            Persona::Off => PersonaText { label: role.label().to_string(), description: NEUTRAL_DESCRIPTION.to_string() },
        };
        let system_text = format!("You are {}. {} Decide on a concrete action.", persona.label, persona.description);

        let menu = role.actions().map(|a| (a.name().to_string(), action_description(a).to_string()));
        let mut user = format!("Scenario:\n{}\n", scenario.narrative());
        if condition.visibility == Visibility::Visible {
            let table = render_payoff_text(scenario.table(), role, self.render_mode);
            user.push_str(&format!("\n{PAYOFF_CAPTION}\n{table}"));
        }
        user.push_str(&format!("\nConversation transcript:\n{}\n\nAvailable actions:\n", format_history(history)));
        for (key, desc) in &menu {
            user.push_str(&format!("- {key}: {desc}\n"));
        }
        user.push('\n');
        user.push_str(RESPONSE_INSTRUCTION);

        Ok(PromptBundle { system_text, user_text: user, action_menu: menu })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    pub action: Action,
    pub rationale: String,
    pub raw: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ReplyError {
    #[error("no JSON object found in reply")]
    NoJsonFound,
    #[error("reply has no \"action\" field")]
    MissingActionField,
    #[error("unknown action key {0:?}")]
    UnknownActionKey(String),
}

/// Byte ranges of balanced `{...}` spans starting at each `{`, honoring JSON strings.
fn brace_spans(text: &str) -> impl Iterator<Item = &str> + '_ {
    let bytes = text.as_bytes();
    (0..bytes.len()).filter(move |&i| bytes[i] == b'{').filter_map(move |start| {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (j, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=j]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

/// Extracts the first well-formed JSON object from free text and reads its
/// `action` and `rationale` fields (field names case-insensitive).
pub fn parse_agent_reply(role: Role, raw: &str) -> Result<AgentReply, ReplyError> {
    let object = brace_spans(raw)
        .find_map(|span| serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(span).ok())
        .ok_or(ReplyError::NoJsonFound)?;
    let field = |name: &str| object.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v);
    let key = match field("action").ok_or(ReplyError::MissingActionField)? {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let action = Action::parse(role, &key).ok_or(ReplyError::UnknownActionKey(key))?;
    let rationale = match field("rationale") {
        None | Some(serde_json::Value::Null) => String::new(),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    Ok(AgentReply { action, rationale, raw: raw.to_string() })
}
