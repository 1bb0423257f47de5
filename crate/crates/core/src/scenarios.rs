//! Scenario bundles: file format, validation, payoff-table rendering and
//! synthetic table generation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::game::{Action, DominanceClass, PayoffTable, Profile, Role, TableError};
use crate::scalar::Payoff;

/// Payoff differences below this are reported as near-ties during validation.
pub const NEAR_TIE: f64 = 1e-9;

const GENERATION_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Tragedy-dominant tables.
    Economic,
    /// Green-dominant tables.
    Environmental,
}

impl Family {
    pub fn expected_dominance(self) -> DominanceClass {
        match self {
            Family::Economic => DominanceClass::TragedyDominant,
            Family::Environmental => DominanceClass::GreenDominant,
        }
    }

    pub fn for_dominance(class: DominanceClass) -> Option<Family> {
        match class {
            DominanceClass::TragedyDominant => Some(Family::Economic),
            DominanceClass::GreenDominant => Some(Family::Environmental),
            _ => None,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Family::Economic => "economic",
            Family::Environmental => "environmental",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s.trim().to_ascii_lowercase().as_str() {
            "economic" | "tragedy" => Some(Family::Economic),
            "environmental" | "green" => Some(Family::Environmental),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("malformed scenario file: {0}")]
    MalformedFile(String),
    #[error("scenario {id}: incomplete payoff table: {reason}")]
    IncompleteTable { id: String, reason: String },
    #[error("scenario {id}: declared family {family} requires {expected} but table is {computed}")]
    DominanceMismatch {
        id: String,
        family: &'static str,
        expected: DominanceClass,
        computed: DominanceClass,
    },
    #[error("duplicate scenario id {0}")]
    DuplicateId(String),
    #[error("could not generate a {target} table for seed {seed}")]
    GenerationFailed { target: DominanceClass, seed: u64 },
    #[error("generation target must be GreenDominant or TragedyDominant, got {0}")]
    UnsupportedTarget(DominanceClass),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A scenario with its payoff table and derived dominance class.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    id: String,
    family: Family,
    subtype: String,
    narrative: String,
    table: PayoffTable<f64>,
    dominance: DominanceClass,
}

impl Scenario {
    /// Validates the table against the declared family.
    pub fn new(
        id: impl Into<String>,
        family: Family,
        subtype: impl Into<String>,
        narrative: impl Into<String>,
        table: PayoffTable<f64>,
    ) -> Result<Scenario, ScenarioError> {
        let id = id.into();
        let dominance = table.dominance();
        let expected = family.expected_dominance();
        if dominance != expected {
            return Err(ScenarioError::DominanceMismatch {
                id,
                family: family.key(),
                expected,
                computed: dominance,
            });
        }
        Ok(Scenario { id, family, subtype: subtype.into(), narrative: narrative.into(), table, dominance })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn subtype(&self) -> &str {
        &self.subtype
    }

    pub fn narrative(&self) -> &str {
        &self.narrative
    }

    pub fn table(&self) -> &PayoffTable<f64> {
        &self.table
    }

    pub fn dominance(&self) -> DominanceClass {
        self.dominance
    }

    /// Best-response comparisons whose two payoffs differ by less than [`NEAR_TIE`].
    pub fn near_ties(&self) -> Vec<NearTie> {
        let mut out = Vec::new();
        for role in Role::ALL {
            for p in Profile::all().filter(|p| p.action(role).index() == 0) {
                let a = self.table.payoff(p, role);
                let b = self.table.payoff(p.deviate(role), role);
                if (a - b).abs() < NEAR_TIE {
                    out.push(NearTie { role, profile: p, exact: a == b });
                }
            }
        }
        out
    }
}

/// Two payoffs compared by a best response that are (nearly) equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearTie {
    pub role: Role,
    /// The comparison context, with `role` on its index-0 action.
    pub profile: Profile,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub name: String,
    scenarios: Vec<Scenario>,
}

impl ScenarioBundle {
    pub fn new(name: impl Into<String>, scenarios: Vec<Scenario>) -> Result<Self, ScenarioError> {
        let mut seen = HashSet::new();
        for s in &scenarios {
            if !seen.insert(s.id.clone()) {
                return Err(ScenarioError::DuplicateId(s.id.clone()));
            }
        }
        Ok(ScenarioBundle { name: name.into(), scenarios })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn to_json(&self) -> String {
        let file = BundleFile {
            name: self.name.clone(),
            scenarios: self
                .scenarios
                .iter()
                .map(|s| ScenarioFile {
                    id: s.id.clone(),
                    family: s.family.key().to_string(),
                    subtype: s.subtype.clone(),
                    narrative: s.narrative.clone(),
                    dominance: Some(s.dominance.name().to_string()),
                    payoffs: s
                        .table
                        .entries()
                        .map(|(p, payoffs)| PayoffRow {
                            industrialist: p.action(Role::Industrialist).name().to_string(),
                            government: p.action(Role::Government).name().to_string(),
                            activist: p.action(Role::Activist).name().to_string(),
                            citizen: p.action(Role::Citizen).name().to_string(),
                            payoffs: payoffs.to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let f = std::fs::File::open(path)?;
        load_bundle(f)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    name: String,
    scenarios: Vec<ScenarioFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    id: String,
    family: String,
    #[serde(default)]
    subtype: String,
    #[serde(default)]
    narrative: String,
    /// Informational only; recomputed on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dominance: Option<String>,
    payoffs: Vec<PayoffRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayoffRow {
    industrialist: String,
    government: String,
    activist: String,
    citizen: String,
    payoffs: Vec<f64>,
}

impl PayoffRow {
    fn profile(&self) -> Result<Profile, String> {
        let keys = [&self.industrialist, &self.government, &self.activist, &self.citizen];
        let mut actions = [Action::POLLUTE; 4];
        for (slot, (role, key)) in Role::ALL.into_iter().zip(keys).enumerate() {
            actions[slot] = Action::parse(role, key)
                .ok_or_else(|| format!("unknown {} action {key:?}", role.key()))?;
        }
        Ok(Profile::from_actions(actions))
    }
}

/// Reads and validates a bundle. Dominance is always recomputed from the table.
pub fn load_bundle(mut source: impl Read) -> Result<ScenarioBundle, ScenarioError> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| ScenarioError::MalformedFile(e.to_string()))?;
    if text.trim().is_empty() {
        return Err(ScenarioError::MalformedFile("empty document".into()));
    }
    let file: BundleFile =
        serde_json::from_str(&text).map_err(|e| ScenarioError::MalformedFile(e.to_string()))?;
    let mut scenarios = Vec::with_capacity(file.scenarios.len());
    for sf in file.scenarios {
        let family = Family::parse(&sf.family).ok_or_else(|| {
            ScenarioError::MalformedFile(format!("scenario {}: unknown family {:?}", sf.id, sf.family))
        })?;
        let incomplete = |reason: String| ScenarioError::IncompleteTable { id: sf.id.clone(), reason };
        let mut rows = Vec::with_capacity(sf.payoffs.len());
        for row in &sf.payoffs {
            let profile = row.profile().map_err(|e| ScenarioError::MalformedFile(format!("scenario {}: {e}", sf.id)))?;
            let payoffs: [f64; 4] = row.payoffs.as_slice().try_into().map_err(|_| {
                incomplete(format!("profile {profile} has {} payoffs, expected 4", row.payoffs.len()))
            })?;
            rows.push((profile, payoffs));
        }
        let table = PayoffTable::from_entries(rows).map_err(|e| match e {
            TableError::NonFinite { .. } => ScenarioError::MalformedFile(format!("scenario {}: {e}", sf.id)),
            other => incomplete(other.to_string()),
        })?;
        scenarios.push(Scenario::new(sf.id, family, sf.subtype, sf.narrative, table)?);
    }
    ScenarioBundle::new(file.name, scenarios)
}

/// The bundled debt-crisis example. Only the Industrialist column is
/// reference data; the other three columns are authored.
pub fn debt_crisis() -> Scenario {
    let bundle = load_bundle(include_str!("../data/debt_crisis.json").as_bytes()).expect("bundled scenario is valid");
    bundle.scenarios.into_iter().next().expect("one scenario")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// The viewpoint role's own payoff per profile.
    OwnPayoff,
    /// All four payoffs per profile.
    FullTuple,
}

impl RenderMode {
    pub fn parse(s: &str) -> Option<RenderMode> {
        match s {
            "own" | "own_payoff" => Some(RenderMode::OwnPayoff),
            "full" | "full_tuple" => Some(RenderMode::FullTuple),
            _ => None,
        }
    }
}

/// Profiles grouped by the viewpoint's action (index 0 first), then by the
/// viewpoint's payoff, highest first. Equal payoffs fall back to descending
/// profile index.
pub fn presentation_order<T: Payoff>(table: &PayoffTable<T>, viewpoint: Role) -> Vec<Profile> {
    let mut profiles: Vec<Profile> = Profile::all().collect();
    profiles.sort_by(|a, b| {
        let ga = a.action(viewpoint).index();
        let gb = b.action(viewpoint).index();
        ga.cmp(&gb)
            .then_with(|| {
                table
                    .payoff(*b, viewpoint)
                    .partial_cmp(&table.payoff(*a, viewpoint))
                    .expect("payoffs are finite")
            })
            .then_with(|| b.index().cmp(&a.index()))
    });
    profiles
}

/// Renders a payoff table as prompt text: a header line, then one line per
/// profile of the four abbreviated action names and the payoff(s).
pub fn render_payoff_text<T: Payoff>(table: &PayoffTable<T>, viewpoint: Role, mode: RenderMode) -> String {
    let mut out = String::new();
    let roles = Role::ALL.map(|r| r.label()).join(" ");
    match mode {
        RenderMode::OwnPayoff => writeln!(out, "{roles} {} Payoff", viewpoint.label()).unwrap(),
        RenderMode::FullTuple => writeln!(out, "{roles} Payoffs ({})", Role::ALL.map(|r| r.label()).join(", ")).unwrap(),
    }
    for p in presentation_order(table, viewpoint) {
        let names = p.actions().map(|a| a.short_name()).join(" ");
        match mode {
            RenderMode::OwnPayoff => writeln!(out, "{names} {}", table.payoff(p, viewpoint).render()).unwrap(),
            RenderMode::FullTuple => {
                let tuple = table.payoffs(p).map(|v| v.render()).join(", ");
                writeln!(out, "{names} ({tuple})").unwrap()
            }
        }
    }
    out
}

/// Synthesizes a scenario whose table has the requested dominance class.
///
/// The target canonical profile pays every role 10; each unilateral
/// deviation from it pays the deviator 10 - d with d in [1, 5]. One role
/// gains d by leaving the opposite canonical profile. All other cells are
/// noise in [-0.5, 0.5]. Values are rounded to two decimals and tables with
/// exact best-response ties are redrawn.
pub fn generate_scenario(target: DominanceClass, seed: u64) -> Result<Scenario, ScenarioError> {
    let (anchor, opposite, family) = match target {
        DominanceClass::GreenDominant => (Profile::GREEN, Profile::TRAGEDY, Family::Environmental),
        DominanceClass::TragedyDominant => (Profile::TRAGEDY, Profile::GREEN, Family::Economic),
        other => return Err(ScenarioError::UnsupportedTarget(other)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let round2 = |x: f64| (x * 100.0).round() / 100.0;
    for _ in 0..GENERATION_ATTEMPTS {
        let mut table = PayoffTable::<f64>::zeros();
        for p in Profile::all() {
            for r in Role::ALL {
                table.set(p, r, round2(rng.random_range(-0.5..=0.5)));
            }
        }
        for r in Role::ALL {
            table.set(anchor, r, 10.0);
            let d = round2(rng.random_range(1.0..=5.0));
            table.set(anchor.deviate(r), r, 10.0 - d);
        }
        let breaker = Role::ALL[rng.random_range(0..4)];
        let d = round2(rng.random_range(1.0..=5.0));
        let base = table.payoff(opposite, breaker);
        table.set(opposite.deviate(breaker), breaker, round2(base + d));

        let candidate = Scenario::new(
            format!("synthetic_{}_{seed}", family.key()),
            family,
            "Synthetic",
            synthetic_narrative(family),
            table,
        );
        if let Ok(s) = candidate {
            if s.near_ties().is_empty() {
                return Ok(s);
            }
        }
    }
    Err(ScenarioError::GenerationFailed { target, seed })
}

fn synthetic_narrative(family: Family) -> String {
    let body = match family {
        Family::Environmental => {
            "Conditions in this region reward coordinated environmental action: clean production, \
             enforced regulation, active campaigning, and green purchasing reinforce one another."
        }
        Family::Economic => {
            "Economic pressure in this region rewards short-term self-interest: polluting production, \
             lax oversight, quiet advocacy groups, and cheap purchasing reinforce one another."
        }
    };
    format!("[Synthetic scenario] {body}")
}

/// A bundle of `count` generated scenarios with ids `<prefix>_<k>`.
pub fn generate_bundle(
    name: &str,
    target: DominanceClass,
    count: usize,
    seed: u64,
) -> Result<ScenarioBundle, ScenarioError> {
    let prefix = Family::for_dominance(target).ok_or(ScenarioError::UnsupportedTarget(target))?.key();
    let mut scenarios = Vec::with_capacity(count);
    for k in 0..count {
        let s = generate_scenario(target, seed.wrapping_mul(1_000_003).wrapping_add(k as u64))?;
        scenarios.push(Scenario { id: format!("{prefix}_{k:02}"), ..s });
    }
    ScenarioBundle::new(name, scenarios)
}
