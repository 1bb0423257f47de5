use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use policygame::agents::{AgentKind, AgentSpec, DecodeParams, RemoteSpec};
use policygame::prompting::Condition;
use policygame::runner::DEFAULT_REPETITIONS;

/// Harness settings. Loaded from a TOML file; command-line flags override.
/// API tokens are never read from here, only from the environment.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
    /// Agent spec strings (`fixed:a_green`, `remote:name@url`, ...).
    #[serde(default)]
    pub models: Vec<String>,
    /// Remote models with full settings.
    #[serde(default)]
    pub remote: Vec<RemoteModel>,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<String>,
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// `own` or `full` payoff rendering.
    #[serde(default = "default_render")]
    pub render: String,
    /// Optional persona-variant registry replacing the built-in one.
    pub variants: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteModel {
    pub name: String,
    pub endpoint: String,
    /// Model name sent on the wire; defaults to `name`.
    pub model: Option<String>,
    #[serde(default)]
    pub decode: Option<DecodeParams>,
    pub max_in_flight: Option<usize>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
}

fn default_conditions() -> Vec<String> {
    Condition::base_grid().iter().map(Condition::key).collect()
}

fn default_reps() -> u32 {
    DEFAULT_REPETITIONS
}

fn default_workers() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_render() -> String {
    "own".into()
}

impl Default for HarnessConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<HarnessConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: HarnessConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths resolve against the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for b in &mut cfg.bundles {
            if b.is_relative() {
                *b = base.join(&*b);
            }
        }
        if let Some(v) = &mut cfg.variants {
            if v.is_relative() {
                *v = base.join(&*v);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.bundles.is_empty() {
            bail!("no scenario bundle given (--bundle)");
        }
        if self.models.is_empty() && self.remote.is_empty() {
            bail!("no models given (--models)");
        }
        if self.conditions.is_empty() {
            bail!("no conditions given");
        }
        Ok(())
    }

    pub fn agent_specs(&self) -> Result<Vec<AgentSpec>> {
        let mut specs = Vec::new();
        for m in &self.models {
            specs.push(AgentSpec::parse(m)?);
        }
        for r in &self.remote {
            let mut spec = RemoteSpec::new(&r.endpoint, r.model.as_deref().unwrap_or(&r.name));
            if let Some(d) = r.decode {
                spec.decode = d;
            }
            if let Some(n) = r.max_in_flight {
                spec.max_in_flight = n;
            }
            if let Some(k) = &r.api_key_env {
                spec.api_key_env = k.clone();
            }
            if let Some(t) = r.timeout_secs {
                spec.timeout_secs = t;
            }
            specs.push(AgentSpec::new(&r.name, AgentKind::RemoteLlm(spec)));
        }
        let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            bail!("model id {:?} is used twice", w[0]);
        }
        Ok(specs)
    }

    pub fn parsed_conditions(&self) -> Result<Vec<Condition>> {
        let mut out = Vec::new();
        for c in &self.conditions {
            match c.as_str() {
                "base" => out.extend(Condition::base_grid()),
                "variants" => out.extend(Condition::variant_sweep(policygame::Visibility::Hidden)),
                "variants-visible" => out.extend(Condition::variant_sweep(policygame::Visibility::Visible)),
                other => out.push(other.parse()?),
            }
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|c| seen.insert(c.clone()));
        Ok(out)
    }
}
