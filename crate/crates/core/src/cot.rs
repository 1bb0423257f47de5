//! Keyword-category analysis of agent rationales.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::game::Role;
use crate::prompting::VariantRegistry;

pub const IDENTITY_CATEGORIES: [&str; 2] = ["short_term", "social_moral"];
pub const PAYOFF_CATEGORIES: [&str; 3] = ["game_theoretic", "strategic", "long_term"];

#[derive(Debug, thiserror::Error)]
pub enum CotError {
    #[error("keyword registry is not valid TOML: {0}")]
    Syntax(String),
    #[error("keyword category {0:?} is defined twice")]
    DuplicateCategory(String),
    #[error("keyword category {0:?} is missing")]
    MissingCategory(String),
    #[error("scores are undefined for an empty rationale set")]
    UndefinedOnEmpty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Any occurrence inside the text, so "payoffs" counts for "payoff".
    #[default]
    Substring,
    /// Occurrences not adjacent to another letter or digit.
    WordBoundary,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryFile {
    name: String,
    patterns: Vec<String>,
    #[serde(default)]
    templates: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    category: Vec<CategoryFile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordCategory {
    pub name: String,
    pub patterns: Vec<String>,
}

/// Ordered keyword categories with label templates already expanded.
#[derive(Debug, Clone)]
pub struct KeywordAnalyzer {
    categories: Vec<KeywordCategory>,
    mode: MatchMode,
}

/// Lowercases and collapses every whitespace run to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Every role label plus every label any persona variant assigns.
pub fn agent_labels(variants: &VariantRegistry) -> Vec<String> {
    let mut labels: Vec<String> = Role::ALL.iter().map(|r| r.label().to_string()).collect();
    for id in variants.ids() {
        for role in Role::ALL {
            if let Ok(text) = variants.apply_variant(id, role) {
                labels.push(text.label);
            }
        }
    }
    let mut labels: Vec<String> = labels.iter().map(|l| normalize_text(l)).collect();
    labels.sort();
    labels.dedup();
    labels
}

impl KeywordAnalyzer {
    /// The bundled registry, with templates expanded over the built-in labels.
    pub fn builtin() -> KeywordAnalyzer {
        KeywordAnalyzer::from_toml(include_str!("../data/keywords.toml"), &agent_labels(&VariantRegistry::builtin()))
            .expect("bundled keyword registry is valid")
    }

    pub fn load_path(path: impl AsRef<Path>, labels: &[String]) -> Result<KeywordAnalyzer, CotError> {
        KeywordAnalyzer::from_toml(&std::fs::read_to_string(path)?, labels)
    }

    pub fn from_toml(text: &str, labels: &[String]) -> Result<KeywordAnalyzer, CotError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| CotError::Syntax(e.to_string()))?;
        let mut categories: Vec<KeywordCategory> = Vec::new();
        for cat in file.category {
            if categories.iter().any(|c| c.name == cat.name) {
                return Err(CotError::DuplicateCategory(cat.name));
            }
            let mut patterns: Vec<String> = cat.patterns.iter().map(|p| normalize_text(p)).collect();
            for template in &cat.templates {
                for label in labels {
                    patterns.push(normalize_text(&template.replace("{label}", label)));
                }
            }
            patterns.retain(|p| !p.is_empty());
            patterns.dedup();
            categories.push(KeywordCategory { name: cat.name, patterns });
        }
        Ok(KeywordAnalyzer { categories, mode: MatchMode::Substring })
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn categories(&self) -> &[KeywordCategory] {
        &self.categories
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    /// Per-category counts for one rationale. Each non-overlapping
    /// occurrence of each pattern counts once; a phrase nested in another
    /// pattern's match counts for both patterns.
    pub fn count_text(&self, text: &str) -> Vec<u64> {
        let text = normalize_text(text);
        self.categories
            .iter()
            .map(|c| c.patterns.iter().map(|p| count_occurrences(&text, p, self.mode)).sum())
            .collect()
    }

    pub fn count_keywords<S: AsRef<str>>(&self, rationales: &[S]) -> KeywordProfile {
        let mut totals = vec![0u64; self.categories.len()];
        for r in rationales {
            for (t, c) in totals.iter_mut().zip(self.count_text(r.as_ref())) {
                *t += c;
            }
        }
        KeywordProfile {
            counts: self.categories.iter().map(|c| c.name.clone()).zip(totals).collect(),
            n_rationales: rationales.len() as u64,
        }
    }
}

fn count_occurrences(text: &str, pattern: &str, mode: MatchMode) -> u64 {
    match mode {
        MatchMode::Substring => text.matches(pattern).count() as u64,
        MatchMode::WordBoundary => {
            let is_word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
            text.match_indices(pattern)
                .filter(|(i, m)| !is_word(text[..*i].chars().next_back()) && !is_word(text[i + m.len()..].chars().next()))
                .count() as u64
        }
    }
}

/// Category counts over a set of rationales.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordProfile {
    pub counts: BTreeMap<String, u64>,
    pub n_rationales: u64,
}

impl KeywordProfile {
    pub fn count(&self, category: &str) -> u64 {
        self.counts.get(category).copied().unwrap_or(0)
    }

    /// Mentions per 1000 rationales; `None` when there are no rationales.
    pub fn normalized(&self, category: &str) -> Option<f64> {
        per_thousand(self.count(category), self.n_rationales)
    }

    pub fn normalized_all(&self) -> BTreeMap<String, f64> {
        self.counts
            .keys()
            .filter_map(|k| self.normalized(k).map(|v| (k.clone(), v)))
            .collect()
    }

    pub fn merge(&mut self, other: &KeywordProfile) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
        self.n_rationales += other.n_rationales;
    }
}

pub fn per_thousand(count: u64, n_rationales: u64) -> Option<f64> {
    (n_rationales > 0).then(|| 1000.0 * count as f64 / n_rationales as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReasoningScores {
    pub identity: f64,
    pub payoff: f64,
}

/// Identity score sums the normalized short-term and social/moral counts;
/// payoff score sums game-theoretic, strategic and long-term.
pub fn identity_vs_payoff(profile: &KeywordProfile) -> Result<ReasoningScores, CotError> {
    if profile.n_rationales == 0 {
        return Err(CotError::UndefinedOnEmpty);
    }
    let sum = |cats: &[&str]| -> Result<f64, CotError> {
        cats.iter()
            .map(|c| {
                if !profile.counts.contains_key(*c) {
                    return Err(CotError::MissingCategory(c.to_string()));
                }
                Ok(profile.normalized(c).unwrap_or(0.0))
            })
            .sum()
    };
    Ok(ReasoningScores { identity: sum(&IDENTITY_CATEGORIES)?, payoff: sum(&PAYOFF_CATEGORIES)? })
}

/// One exported profile row group.
#[derive(Debug, Clone)]
pub struct LabeledProfile {
    pub model: String,
    pub condition: String,
    pub profile: KeywordProfile,
}

/// CSV with one row per (model, condition, category).
pub fn profiles_to_csv(analyzer: &KeywordAnalyzer, rows: &[LabeledProfile]) -> Result<String, CotError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "condition", "category", "count", "n_rationales", "per_1000"])?;
    for row in rows {
        for cat in analyzer.category_names() {
            let per = row.profile.normalized(cat).map(|v| format!("{v:.1}")).unwrap_or_default();
            w.write_record([
                row.model.as_str(),
                row.condition.as_str(),
                cat,
                &row.profile.count(cat).to_string(),
                &row.profile.n_rationales.to_string(),
                &per,
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_has_zero_counts() {
        let a = KeywordAnalyzer::builtin();
        let p = a.count_keywords::<&str>(&[]);
        assert_eq!(p.n_rationales, 0);
        assert!(p.counts.values().all(|&c| c == 0));
        assert_eq!(p.normalized("strategic"), None);
        assert!(p.normalized_all().is_empty());
        assert!(matches!(identity_vs_payoff(&p), Err(CotError::UndefinedOnEmpty)));
    }

    #[test]
    fn repeated_phrase_counts_each_time() {
        let a = KeywordAnalyzer::builtin();
        let p = a.count_keywords(&["long-term long-term"]);
        assert_eq!(p.count("long_term"), 2);
    }

    #[test]
    fn whitespace_is_normalized() {
        let a = KeywordAnalyzer::builtin();
        assert_eq!(a.count_keywords(&["BEST\n\t RESPONSE"]).count("game_theoretic"), 1);
    }

    #[test]
    fn label_templates_expand() {
        let a = KeywordAnalyzer::builtin();
        let p = a.count_keywords(&["As an Environmental Activist I must act.", "as an industrialist"]);
        assert_eq!(p.count("identity_based"), 2);
        let p = a.count_keywords(&["as an business leader"]);
        assert_eq!(p.count("identity_based"), 1);
    }

    #[test]
    fn word_boundary_mode() {
        let sub = KeywordAnalyzer::builtin();
        let word = KeywordAnalyzer::builtin().with_mode(MatchMode::WordBoundary);
        let text = ["I know the payoffs right now."];
        // "know" and "now", "payoffs" and "payoff"
        assert_eq!(sub.count_keywords(&text).count("short_term"), 2);
        assert_eq!(word.count_keywords(&text).count("short_term"), 1);
        assert_eq!(sub.count_keywords(&text).count("game_theoretic"), 1);
        assert_eq!(word.count_keywords(&text).count("game_theoretic"), 0);
    }

    #[test]
    fn scores_by_definition() {
        let mut counts: BTreeMap<String, u64> =
            KeywordAnalyzer::builtin().category_names().map(|c| (c.to_string(), 0)).collect();
        counts.insert("short_term".into(), 10);
        let p = KeywordProfile { counts: counts.clone(), n_rationales: 10 };
        assert_eq!(identity_vs_payoff(&p).unwrap(), ReasoningScores { identity: 1000.0, payoff: 0.0 });

        counts.insert("short_term".into(), 0);
        counts.insert("game_theoretic".into(), 2);
        counts.insert("strategic".into(), 1);
        counts.insert("long_term".into(), 1);
        let p = KeywordProfile { counts, n_rationales: 4 };
        assert_eq!(identity_vs_payoff(&p).unwrap().payoff, 1000.0);
    }

    #[test]
    fn registry_errors() {
        let dup = "[[category]]\nname = \"a\"\npatterns = []\n[[category]]\nname = \"a\"\npatterns = []";
        assert!(matches!(KeywordAnalyzer::from_toml(dup, &[]), Err(CotError::DuplicateCategory(_))));
        assert!(matches!(KeywordAnalyzer::from_toml("nope", &[]), Err(CotError::Syntax(_))));
        let custom = KeywordAnalyzer::from_toml("[[category]]\nname = \"x\"\npatterns = [\"Foo\"]", &[]).unwrap();
        let p = custom.count_keywords(&["foo FOO"]);
        assert_eq!(p.count("x"), 2);
        assert!(matches!(identity_vs_payoff(&p), Err(CotError::MissingCategory(_))));
    }

    #[test]
    fn csv_export() {
        let a = KeywordAnalyzer::builtin();
        let rows = vec![LabeledProfile {
            model: "m".into(),
            condition: "visible+nopersona".into(),
            profile: a.count_keywords(&["strategy", "nothing"]),
        }];
        let out = profiles_to_csv(&a, &rows).unwrap();
        assert!(out.starts_with("model,condition,category,count,n_rationales,per_1000\n"));
        assert!(out.contains("m,visible+nopersona,strategic,1,2,500.0\n"));
        assert_eq!(out.lines().count(), 1 + a.categories().len());
    }
}
